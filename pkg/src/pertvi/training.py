"""Minibatch Adam loop with early stopping, shared by both VAE models."""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import tensor as T
from .data import Dataset
from .nn import Adam, Module
from .tensor import NonFiniteError

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 64
    max_epochs: int = 200
    patience: int = 20
    free_bits: float = 0.1
    l2_perturbation: float = 1e-3
    alpha: float | None = None  # None: 0.1 * N / N_labeled
    val_samples: int = 8
    eval_samples: int = 64

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    log: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False

    def write_log(self, path) -> None:
        cols = list(self.log[0]) if self.log else ["epoch"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for row in self.log:
                w.writerow([repr(row[c]) if isinstance(row[c], float) else row[c] for c in cols])


class TrainingDivergedError(RuntimeError):
    """Raised when training hits NaN/Inf; carries the last good parameters."""

    def __init__(self, msg: str, state: dict[str, np.ndarray], result: TrainResult):
        super().__init__(msg)
        self.state = state
        self.result = result


def regime_batches(ds: Dataset, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Shuffled minibatch indices; each batch holds every regime in proportion."""
    n_batches = max(1, int(np.ceil(len(ds) / batch_size)))
    chunks = []
    for paired in (True, False):
        for labeled in (True, False):
            idx = np.flatnonzero(ds.regime_mask(paired, labeled))
            chunks.append(np.array_split(rng.permutation(idx), n_batches))
    batches = [np.sort(np.concatenate([c[b] for c in chunks])) for b in range(n_batches)]
    return [b for b in batches if len(b)]


StepFn = Callable[[Dataset, np.random.Generator], tuple[T.Tensor, dict[str, float]]]
ValFn = Callable[[np.random.Generator], float | None]


def fit(model: Module, data: Dataset, config: TrainConfig, rng: np.random.Generator,
        step_loss: StepFn, validate: ValFn | None = None, higher_is_better: bool = False,
        val_name: str = "val") -> TrainResult:
    """Minimize ``step_loss`` with Adam; early-stop on ``validate`` if given.

    The best-validation parameters are restored on exit.
    """
    if len(data) == 0:
        raise ValueError("cannot train on an empty dataset")
    opt = Adam(model.named_parameters(), lr=config.lr, beta1=config.beta1,
               beta2=config.beta2, eps=config.eps)
    val_rng = np.random.default_rng(rng.integers(2**63))
    result = TrainResult()
    best_state = model.state_dict()
    best_score: float | None = None
    stale = 0
    for epoch in range(1, config.max_epochs + 1):
        good_state = model.state_dict()
        totals: dict[str, float] = {}
        n_seen = 0
        try:
            for idx in regime_batches(data, config.batch_size, rng):
                opt.zero_grad()
                loss, stats = step_loss(data.subset(idx), rng)
                T.backward(loss)
                opt.step()
                for k, v in stats.items():
                    totals[k] = totals.get(k, 0.0) + v
                n_seen += len(idx)
        except NonFiniteError as exc:
            model.load_state_dict(good_state)
            raise TrainingDivergedError(f"epoch {epoch}: {exc}", good_state, result) from exc
        row: dict = {"epoch": epoch}
        row.update({k: v / n_seen for k, v in totals.items()})
        score = None
        if validate is not None:
            with T.no_grad():
                score = validate(val_rng)
        row[val_name] = float("nan") if score is None else float(score)
        result.log.append(row)
        if score is None:
            best_state, result.best_epoch = model.state_dict(), epoch
            continue
        better = best_score is None or (score > best_score if higher_is_better else score < best_score)
        if better:
            best_score, best_state, result.best_epoch, stale = score, model.state_dict(), epoch, 0
        else:
            stale += 1
            if stale >= config.patience:
                result.stopped_early = True
                log.debug("early stop at epoch %d (best %d)", epoch, result.best_epoch)
                break
    model.load_state_dict(best_state)
    return result
