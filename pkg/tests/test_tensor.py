import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from helpers import grad_check, module_grad_check
from pertvi import tensor as T
from pertvi.nn import (MLP, Adam, AdamState, DegenerateLayerError, Linear, Module, adam_step,
                       load_checkpoint, save_checkpoint)
from pertvi.tensor import DomainError, NonFiniteError, Parameter, Tensor


def leaf(rng, shape, lo=-2.0, hi=2.0):
    return Tensor(rng.uniform(lo, hi, size=shape), requires_grad=True)


# one entry per differentiable op: (name, builder(rng) -> (inputs, fn(*inputs) -> Tensor))
def _unary(fn, lo=-2.0, hi=2.0):
    return lambda rng: ([leaf(rng, (3, 4), lo, hi)], fn)


OPS = {
    "add": lambda rng: ([leaf(rng, (3, 4)), leaf(rng, (4,))], lambda a, b: a + b),
    "sub": lambda rng: ([leaf(rng, (3, 4)), leaf(rng, (3, 1))], lambda a, b: a - b),
    "mul": lambda rng: ([leaf(rng, (3, 4)), leaf(rng, (1, 4))], lambda a, b: a * b),
    "div": lambda rng: ([leaf(rng, (3, 4)), leaf(rng, (3, 4), 0.5, 2.0)], lambda a, b: a / b),
    "power": _unary(lambda a: T.power(a, 3.0)),
    "matmul": lambda rng: ([leaf(rng, (3, 4)), leaf(rng, (4, 2))], lambda a, b: a @ b),
    "exp": _unary(T.exp),
    "log": _unary(T.log, 0.2, 2.0),
    "sqrt": _unary(T.sqrt, 0.2, 2.0),
    "elu": _unary(T.elu),
    "sigmoid": _unary(T.sigmoid),
    "log_sigmoid": _unary(T.log_sigmoid),
    "softplus": _unary(T.softplus),
    "softmax": _unary(lambda a: T.softmax(a, axis=-1) * np.arange(1.0, 5.0)),
    "log_softmax": _unary(lambda a: T.log_softmax(a, axis=0) * np.arange(1.0, 5.0)),
    "clip": _unary(lambda a: T.clip(a, -1.0, 1.0)),
    "maximum": _unary(lambda a: T.maximum(a, 0.3)),
    "relu": _unary(T.relu),
    "sum_axis": _unary(lambda a: T.tsum(a, axis=0) ** 2),
    "mean": _unary(lambda a: T.mean(a, axis=1, keepdims=True) * a),
    "reshape": _unary(lambda a: T.reshape(a, (2, 6)) @ np.ones((6, 1))),
    "transpose": _unary(lambda a: T.transpose(a) @ np.arange(3.0).reshape(3, 1)),
    "getitem": _unary(lambda a: a[np.array([0, 2, 2])] * 2.0),
    "concat": lambda rng: ([leaf(rng, (3, 4)), leaf(rng, (3, 2))],
                           lambda a, b: T.concat([a, b], axis=-1) ** 2),
}


class TestOps:
    def test_matmul_examples(self):
        a = np.arange(9.0).reshape(3, 3)
        assert np.array_equal((Tensor(np.eye(3)) @ Tensor(a)).data, a)
        assert (Tensor([[2.0]]) @ Tensor([[3.0]])).data.tolist() == [[6.0]]

    def test_matmul_shape_mismatch(self):
        with pytest.raises(ValueError):
            Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))

    def test_elu_values(self):
        out = T.elu(Tensor([0.0, 2.0, -1.0])).data
        assert out[0] == 0.0 and out[1] == 2.0
        assert out[2] == pytest.approx(-0.6321205588285577, abs=1e-12)

    def test_sigmoid_softmax_examples(self):
        assert T.sigmoid(Tensor([0.0])).data[0] == 0.5
        assert np.allclose(T.softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])

    def test_softmax_shift_invariance(self, rng):
        for _ in range(50):
            x = rng.normal(size=(4, 7)) * 5
            c = rng.normal() * 10
            assert np.max(np.abs(T.softmax(Tensor(x + c)).data - T.softmax(Tensor(x)).data)) < 1e-12

    def test_softmax_sums_to_one(self, rng):
        p = T.softmax(Tensor(rng.normal(size=(5, 3)) * 30), axis=-1).data
        assert np.allclose(p.sum(axis=-1), 1.0, atol=1e-14)

    def test_log_domain_error(self):
        with pytest.raises(DomainError):
            T.log(Tensor([1.0, 0.0]))
        with pytest.raises(DomainError):
            T.log(Tensor([-1.0]))

    def test_non_finite_forward_is_an_error(self):
        with pytest.raises(NonFiniteError):
            T.exp(Tensor([1000.0]))

    def test_log_sigmoid_stable(self):
        out = T.log_sigmoid(Tensor([-800.0, 800.0])).data
        assert out[0] == pytest.approx(-800.0) and out[1] == 0.0

    @pytest.mark.parametrize("name", sorted(OPS))
    def test_gradient_matches_finite_differences(self, name, rng):
        inputs, fn = OPS[name](rng)
        # a random linear functional turns vector outputs into a scalar
        w = rng.normal(size=fn(*inputs).shape)
        err = grad_check(lambda: T.tsum(fn(*inputs) * w), inputs, eps=1e-4)
        assert err < 1e-4, name

    def test_matmul_sum_gradient_tolerance(self, rng):
        a, b = leaf(rng, (3, 4)), leaf(rng, (4, 5))
        assert grad_check(lambda: T.tsum(a @ b), [a, b], eps=1e-4) < 1e-5


class TestBackward:
    def test_constant_loss_gives_zero_gradients(self):
        p = Parameter(np.ones(3))
        loss = T.tsum(p * 0.0) + 4.0
        T.backward(loss)
        assert np.array_equal(p.grad, np.zeros(3))

    def test_sum_of_squares(self, rng):
        p = Parameter(rng.normal(size=(2, 3)))
        T.backward(T.tsum(p * p))
        assert np.allclose(p.grad, 2 * p.data)

    def test_non_scalar_loss_rejected(self):
        p = Parameter(np.ones(3))
        with pytest.raises(ValueError):
            T.backward(p * 2.0)

    def test_non_parameter_leaves_untouched(self):
        x = Tensor(np.ones(3))
        p = Parameter(np.ones(3))
        T.backward(T.tsum(x * p))
        assert x.grad is None

    def test_shared_node_accumulates(self):
        p = Parameter(np.array([3.0]))
        y = p * p
        T.backward(T.tsum(y + y))
        assert p.grad[0] == pytest.approx(12.0)

    def test_no_grad_records_nothing(self):
        p = Parameter(np.ones(2))
        with T.no_grad():
            y = p * 2.0
        assert not y.requires_grad

    def test_forward_is_deterministic(self, rng):
        layer = Linear(4, 3, rng)
        x = rng.normal(size=(5, 4))
        assert np.array_equal(layer(Tensor(x)).data, layer(Tensor(x)).data)


class TestLinear:
    def test_gain_equal_to_norm_gives_plain_product(self, rng):
        layer = Linear(4, 3, rng)
        layer.g.data = np.linalg.norm(layer.V.data, axis=1)
        x = rng.normal(size=(2, 4))
        assert np.allclose(layer(Tensor(x)).data, x @ layer.V.data.T, atol=1e-12)

    @given(scale=st.floats(1e-3, 1e3))
    @settings(max_examples=50, deadline=None)
    def test_direction_rescaling_invariance(self, scale):
        rng = np.random.default_rng(0)
        layer = Linear(5, 3, rng)
        x = Tensor(rng.normal(size=(4, 5)))
        before = layer(x).data
        layer.V.data = layer.V.data * scale
        assert np.max(np.abs(layer(x).data - before)) < 1e-10

    def test_row_scaled_by_ten(self, rng):
        layer = Linear(5, 3, rng)
        x = Tensor(rng.normal(size=(4, 5)))
        before = layer(x).data
        layer.V.data[1] *= 10.0
        assert np.max(np.abs(layer(x).data - before)) < 1e-10

    def test_zero_norm_row_is_degenerate(self, rng):
        layer = Linear(3, 2, rng)
        layer.V.data[0] = 0.0
        with pytest.raises(DegenerateLayerError):
            layer(Tensor(np.ones((1, 3))))

    def test_width_mismatch(self, rng):
        with pytest.raises(ValueError):
            Linear(3, 2, rng)(Tensor(np.ones((1, 4))))

    def test_gradients_wrt_gain_and_direction(self, rng):
        layer = Linear(4, 3, rng)
        x = rng.normal(size=(5, 4))
        w = rng.normal(size=(5, 3))
        errs = module_grad_check(layer, lambda: T.tsum(layer(Tensor(x)) * w), eps=1e-5)
        assert max(errs.values()) < 1e-5, errs

    def test_mlp_gradients(self, rng):
        net = MLP([4, 6, 3], rng)
        x = rng.normal(size=(5, 4))
        errs = module_grad_check(net, lambda: T.tsum(net(Tensor(x)) ** 2))
        assert max(errs.values()) < 1e-5, errs

    def test_effective_weight(self, rng):
        layer = Linear(4, 3, rng)
        x = rng.normal(size=(2, 4))
        assert np.allclose(layer(Tensor(x)).data, x @ layer.effective_weight().T + layer.b.data)


class TestAdam:
    def test_zero_gradient_leaves_parameters(self, rng):
        p = rng.normal(size=(3, 2))
        (new,) = adam_step(AdamState(), [p], [np.zeros_like(p)])
        assert np.array_equal(new, p)

    @given(g=arrays(np.float64, 5, elements=st.floats(-1e3, 1e3).filter(lambda v: abs(v) > 1e-3)))
    @settings(max_examples=50, deadline=None)
    def test_first_step_moves_by_learning_rate(self, g):
        state = AdamState(lr=1e-2)
        p = np.zeros(5)
        (new,) = adam_step(state, [p], [g])
        # bias-corrected first step is lr * g / (|g| + eps)
        expected = -1e-2 * g / (np.abs(g) + state.eps)
        assert np.max(np.abs(new - expected)) < 1e-8
        assert state.step == 1

    def test_quadratic_converges(self):
        p = Parameter(np.array([0.0]))
        opt = Adam([("p", p)], lr=1e-2)
        for step in range(2000):
            opt.zero_grad()
            T.backward(T.tsum((p - 3.0) ** 2))
            opt.step()
            if abs(p.data[0] - 3.0) < 1e-3:
                break
        assert abs(p.data[0] - 3.0) < 1e-3

    def test_nan_gradient_aborts_with_name(self):
        with pytest.raises(NonFiniteError, match="weights"):
            adam_step(AdamState(), [np.zeros(2)], [np.array([0.0, np.nan])], ["weights"])

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            adam_step(AdamState(), [np.zeros(2)], [np.zeros(3)])


class TestCheckpoint:
    class Net(Module):
        def __init__(self, rng):
            self.a = Linear(3, 2, rng)
            self.b = MLP([2, 4], rng)

    def test_round_trip(self, tmp_path, rng):
        net = self.Net(rng)
        save_checkpoint(net, tmp_path / "ck.json", {"note": "x"})
        doc = json.loads((tmp_path / "ck.json").read_text())
        assert [t["name"] for t in doc["tensors"]] == [n for n, _ in net.named_parameters()]
        other = self.Net(np.random.default_rng(99))
        state, meta = load_checkpoint(tmp_path / "ck.json")
        other.load_state_dict(state)
        assert meta == {"note": "x"}
        for (n1, p1), (n2, p2) in zip(net.named_parameters(), other.named_parameters()):
            assert n1 == n2 and np.array_equal(p1.data, p2.data)

    def test_load_rejects_wrong_shape(self, rng):
        net = self.Net(rng)
        state = net.state_dict()
        state["a.V"] = np.zeros((5, 5))
        with pytest.raises(ValueError):
            net.load_state_dict(state)
