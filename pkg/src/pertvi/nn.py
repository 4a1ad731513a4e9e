"""Layers, parameter containers, the Adam optimizer and checkpoint I/O."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import NonFiniteError, Parameter, Tensor

CHECKPOINT_FORMAT = "pertvi-checkpoint/1"


class DegenerateLayerError(ValueError):
    """A weight-normalized layer has a direction row of zero norm."""


class Module:
    """Parameter container; attributes that are Parameters, Modules or lists of
    Modules are discovered in attribute-definition order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Parameter):
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: p.data.copy() for n, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        if missing:
            raise KeyError(f"missing parameters: {sorted(missing)}")
        for n, p in own.items():
            arr = np.asarray(state[n], dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"{n}: shape {arr.shape} != {p.shape}")
            p.data = arr.copy()
            p.zero_grad()


class Linear(Module):
    """Affine layer, weight-normalized by default.

    With weight normalization the effective weight row i is
    ``gain[i] * V[i] / ||V[i]||``; an optional binary mask is applied to ``V``
    before normalizing (used by MADE).
    """

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator,
                 weight_norm: bool = True, mask: np.ndarray | None = None,
                 zero_init: bool = False, bias_init: float = 0.0):
        self.n_in, self.n_out = n_in, n_out
        self.weight_norm = weight_norm
        if zero_init:
            v = np.zeros((n_out, n_in))
        else:
            v = rng.normal(0.0, 1.0 / np.sqrt(n_in), size=(n_out, n_in))
        self.V = Parameter(v)
        if weight_norm:
            self.g = Parameter(np.ones(n_out))
        self.b = Parameter(np.full(n_out, float(bias_init)))
        self.mask = None if mask is None else np.asarray(mask, dtype=np.float64)
        if self.mask is not None and self.mask.shape != (n_out, n_in):
            raise ValueError(f"mask shape {self.mask.shape} != {(n_out, n_in)}")

    def _direction(self) -> Tensor:
        return self.V if self.mask is None else self.V * self.mask

    def effective_weight(self) -> np.ndarray:
        v = self._direction().data
        if not self.weight_norm:
            return v
        return self.g.data[:, None] * v / np.linalg.norm(v, axis=1, keepdims=True)

    def __call__(self, x: Tensor) -> Tensor:
        x = T.as_tensor(x)
        if x.shape[-1] != self.n_in:
            raise ValueError(f"Linear: expected input width {self.n_in}, got {x.shape[-1]}")
        v = self._direction()
        y = x @ v.T
        if self.weight_norm:
            sq = (v * v).sum(axis=1)
            if (sq.data <= 0).any():
                raise DegenerateLayerError("weight-normalized layer has a zero-norm direction row")
            y = y * (self.g / T.sqrt(sq))
        return y + self.b


class MLP(Module):
    """Stack of weight-normalized ELU layers."""

    def __init__(self, sizes: list[int], rng: np.random.Generator):
        self.layers = [Linear(a, b, rng) for a, b in zip(sizes[:-1], sizes[1:])]

    def __call__(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = T.elu(layer(x))
        return x


# optimizer


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_step(state: AdamState, params: list[np.ndarray], grads: list[np.ndarray],
              names: list[str] | None = None) -> list[np.ndarray]:
    """One bias-corrected Adam update; returns new parameter arrays."""
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("adam_step: parameter/gradient/state count mismatch")
    for i, g in enumerate(grads):
        if g.shape != params[i].shape:
            raise ValueError(f"adam_step: gradient shape {g.shape} != {params[i].shape}")
        if not np.isfinite(g).all():
            label = names[i] if names else f"#{i}"
            raise NonFiniteError(f"non-finite gradient for parameter {label} at step {state.step + 1}")
    state.step += 1
    c1 = 1.0 - state.beta1 ** state.step
    c2 = 1.0 - state.beta2 ** state.step
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g
        new = p - state.lr * (state.m[i] / c1) / (np.sqrt(state.v[i] / c2) + state.eps)
        if not np.isfinite(new).all():
            label = names[i] if names else f"#{i}"
            raise NonFiniteError(f"parameter {label} became non-finite at step {state.step}")
        out.append(new)
    return out


class Adam:
    def __init__(self, named_params, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        named = list(named_params)
        self.names = [n for n, _ in named]
        self.params = [p for _, p in named]
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        new = adam_step(self.state, [p.data for p in self.params],
                        [p.grad for p in self.params], self.names)
        for p, arr in zip(self.params, new):
            p.data = arr


# checkpoints: JSON {"format", "tensors": [{"name", "shape", "values"}]}, values row-major


def save_checkpoint(module: Module | dict, path, meta: dict | None = None) -> None:
    state = module.state_dict() if isinstance(module, Module) else module
    doc = {
        "format": CHECKPOINT_FORMAT,
        "meta": meta or {},
        "tensors": [
            {"name": n, "shape": list(a.shape), "values": a.reshape(-1).tolist()}
            for n, a in state.items()
        ],
    }
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    state = {
        t["name"]: np.asarray(t["values"], dtype=np.float64).reshape(t["shape"])
        for t in doc["tensors"]
    }
    return state, doc.get("meta", {})
