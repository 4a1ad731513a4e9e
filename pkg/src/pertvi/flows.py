"""MADE conditioners and gated ("LSTM-type") inverse autoregressive flow steps."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .nn import MLP, Linear, Module
from .prob import DiagGaussian, log_prob_per_dim, sample_reparam
from .tensor import Tensor


def made_masks(order: np.ndarray, n_hidden: int, n_context: int) -> tuple[np.ndarray, np.ndarray]:
    """Binary masks for a one-hidden-layer MADE over ``d = len(order)`` inputs.

    ``order[i]`` is the degree (1..d) of input i. Hidden degrees cycle over
    0..d-1; degree-0 units see only the context, which keeps every output row
    connected. Output j may use hidden k iff deg(k) < order[j].
    """
    d = len(order)
    if n_hidden < d:
        raise ValueError(f"MADE needs at least {d} hidden units, got {n_hidden}")
    hidden_deg = np.arange(n_hidden) % d
    in_mask = (order[None, :] <= hidden_deg[:, None]).astype(np.float64)
    in_mask = np.concatenate([in_mask, np.ones((n_hidden, n_context))], axis=1)
    out_mask = (hidden_deg[None, :] < order[:, None]).astype(np.float64)
    return in_mask, out_mask


class MadeNet(Module):
    def __init__(self, d: int, n_context: int, n_hidden: int, rng: np.random.Generator,
                 reverse: bool = False, gate_bias: float = 1.0):
        if n_context < 1:
            raise ValueError("MadeNet needs a context input (degree-0 hidden units read only the context)")
        self.d, self.n_context = d, n_context
        self.order = np.arange(d, 0, -1) if reverse else np.arange(1, d + 1)
        in_mask, out_mask = made_masks(self.order, n_hidden, n_context)
        self.hidden = Linear(d + n_context, n_hidden, rng, mask=in_mask)
        self.m_head = Linear(n_hidden, d, rng, mask=out_mask)
        self.s_head = Linear(n_hidden, d, rng, mask=out_mask, bias_init=gate_bias)

    def __call__(self, z: Tensor, h: Tensor | None) -> tuple[Tensor, Tensor]:
        hid = T.elu(self.hidden(T.concat([z, h], axis=-1)))
        return self.m_head(hid), self.s_head(hid)


def made_forward(net: MadeNet, z, h) -> tuple[Tensor, Tensor]:
    return net(T.as_tensor(z), None if h is None else T.as_tensor(h))


class IafStep(Module):
    """z' = sigmoid(s) * z + (1 - sigmoid(s)) * m with [m, s] = MADE(z, h)."""

    def __init__(self, net: MadeNet, index: int):
        self.net = net
        self.index = index

    def __call__(self, z: Tensor, h: Tensor | None) -> tuple[Tensor, Tensor]:
        """Returns the transformed sample and per-dimension log-Jacobian terms."""
        m, s = self.net(z, h)
        gate = T.sigmoid(s)
        z_next = gate * z + (1.0 - gate) * m
        return z_next, T.log_sigmoid(s)

    def inverse(self, z_next: np.ndarray, h: np.ndarray | None) -> np.ndarray:
        """Recover the input one coordinate at a time in degree order."""
        z_next = np.atleast_2d(z_next)
        z = np.zeros_like(z_next)
        hh = None if h is None else Tensor(np.atleast_2d(h))
        with T.no_grad():
            for j in np.argsort(self.net.order):
                m, s = self.net(Tensor(z), hh)
                gate = 1.0 / (1.0 + np.exp(-s.data[:, j]))
                z[:, j] = (z_next[:, j] - (1.0 - gate) * m.data[:, j]) / gate
        return z


def iaf_step(step: IafStep, z_prev, h) -> tuple[Tensor, Tensor]:
    """Apply one step; returns (z_next, logdet) with logdet summed over dimensions."""
    z_next, ld = step(T.as_tensor(z_prev), None if h is None else T.as_tensor(h))
    return z_next, ld.sum(axis=-1)


class FlowPosterior(Module):
    """Encoder q(z | x): MLP trunk, Gaussian base, context head, IAF steps.

    Step t uses natural coordinate order for even t and reversed order for odd t.
    """

    def __init__(self, n_in: int, hidden: tuple[int, ...], d: int, n_context: int,
                 n_flows: int, made_hidden: int, rng: np.random.Generator):
        self.d = d
        self.trunk = MLP([n_in, *hidden], rng)
        width = hidden[-1] if hidden else n_in
        self.mu_head = Linear(width, d, rng)
        self.scale_head = Linear(width, d, rng)
        if n_flows and n_context < 1:
            raise ValueError("flow steps need a context width >= 1")
        self.context_head = Linear(width, n_context, rng) if n_flows else None
        ctx = n_context if self.context_head is not None else 0
        self.steps = [IafStep(MadeNet(d, ctx, made_hidden, rng, reverse=bool(t % 2)), t)
                      for t in range(n_flows)]

    def base(self, x) -> tuple[DiagGaussian, Tensor | None]:
        feat = self.trunk(T.as_tensor(x))
        q0 = DiagGaussian.from_logits(self.mu_head(feat), self.scale_head(feat))
        h = T.elu(self.context_head(feat)) if self.context_head is not None else None
        return q0, h

    def flow(self, z0: Tensor, h: Tensor | None) -> tuple[Tensor, Tensor]:
        """Push z0 through every step; returns z_T and summed per-dim log-Jacobian."""
        z, total = z0, None
        for step in self.steps:
            z, ld = step(z, h)
            total = ld if total is None else total + ld
        if total is None:
            total = T.Tensor(np.zeros(z0.shape))
        return z, total

    def sample(self, x, rng: np.random.Generator) -> tuple[Tensor, Tensor, Tensor]:
        """Returns (z, log q(z|x), per-dim log q terms that sum to log q)."""
        q0, h = self.base(x)
        z0, _ = sample_reparam(q0, rng)
        z, logdet = self.flow(z0, h)
        per_dim = log_prob_per_dim(q0, z0) - logdet
        return z, per_dim.sum(axis=-1), per_dim


def posterior_sample_and_logq(p: FlowPosterior, x, rng: np.random.Generator) -> tuple[Tensor, Tensor]:
    z, log_q, _ = p.sample(x, rng)
    return z, log_q
