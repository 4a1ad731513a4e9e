"""Experiment configuration (JSON).

Top-level keys, all optional:

    scenario      synthetic preset name ("linear", "nonlinear", "shift")
    seed          base seed for data, folds and models
    synthetic     SyntheticConfig overrides (n_genes, latent_dim, n_lp, ...)
    model         latent_dim, hidden, context_dim, n_flows, made_hidden, aux_hidden
    train         lr, beta1, beta2, eps, batch_size, max_epochs, patience,
                  free_bits, l2_perturbation, alpha, val_samples, eval_samples
    baselines     lambda_grid, inner_folds, pca_components
    cv            repetitions, folds, val_fraction
    train_overrides  per-model-family train settings on top of ``train``,
                  keyed "pertvae" (also used by the pertvae+lr pipelines),
                  "drvae" (also SSVAE)
    models        list drawn from MODEL_NAMES
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from ..baselines import DEFAULT_LAMBDA_GRID
from ..training import TrainConfig

MODEL_NAMES = ("ridge", "pca+lr", "pertvae", "pertvae+lr_z1", "pertvae+lr_z2", "ssvae", "drvae")


@dataclass
class ArchConfig:
    latent_dim: int = 10
    hidden: tuple[int, ...] = (128, 64)
    context_dim: int = 32
    n_flows: int = 2
    made_hidden: int = 64
    aux_hidden: int = 32


@dataclass
class BaselineConfig:
    lambda_grid: tuple[float, ...] = DEFAULT_LAMBDA_GRID
    inner_folds: int = 3
    pca_components: int = 10


@dataclass
class CVConfig:
    repetitions: int = 10
    folds: int = 5
    # share of training cell lines held out for early stopping; 0 trains for
    # the fixed epoch budget on the whole training split
    val_fraction: float = 0.0


@dataclass
class ExperimentConfig:
    scenario: str = "shift"
    seed: int = 0
    synthetic: dict = field(default_factory=dict)
    model: ArchConfig = field(default_factory=ArchConfig)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(
        batch_size=32, max_epochs=120, patience=20, alpha=1.0))
    baselines: BaselineConfig = field(default_factory=BaselineConfig)
    cv: CVConfig = field(default_factory=CVConfig)
    # the PertVAE is cheap per step and needs a longer budget for a useful z1
    train_overrides: dict = field(default_factory=lambda: {"pertvae": {"max_epochs": 250}})
    models: tuple[str, ...] = MODEL_NAMES

    def __post_init__(self):
        bad = set(self.models) - set(MODEL_NAMES)
        if bad:
            raise ValueError(f"unknown models {sorted(bad)}; choose from {MODEL_NAMES}")
        bad = set(self.train_overrides) - {"pertvae", "drvae"}
        if bad:
            raise ValueError(f"train_overrides keys must be 'pertvae' or 'drvae', got {sorted(bad)}")

    def train_for(self, family: str) -> TrainConfig:
        """The shared train settings with the overrides of one model family."""
        return replace(self.train, **self.train_overrides.get(family, {}))

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        def build(kind, sub):
            known = {f.name for f in fields(kind)}
            unknown = set(sub) - known
            if unknown:
                raise KeyError(f"unknown {kind.__name__} keys: {sorted(unknown)}")
            vals = {k: tuple(v) if isinstance(v, list) else v for k, v in sub.items()}
            return kind(**vals)

        d = dict(d)
        out = cls()
        for key, kind in (("model", ArchConfig), ("train", TrainConfig),
                          ("baselines", BaselineConfig), ("cv", CVConfig)):
            if key in d:
                base = asdict(getattr(out, key))
                base.update(d.pop(key))
                setattr(out, key, build(kind, base))
        if "models" in d:
            out.models = tuple(d.pop("models"))
        for key in ("scenario", "seed", "synthetic", "train_overrides"):
            if key in d:
                setattr(out, key, d.pop(key))
        if d:
            raise KeyError(f"unknown config keys: {sorted(d)}")
        out.__post_init__()
        return out

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "seed": self.seed,
            "synthetic": dict(self.synthetic),
            "model": asdict(self.model),
            "train": asdict(self.train),
            "baselines": asdict(self.baselines),
            "cv": asdict(self.cv),
            "train_overrides": {k: dict(v) for k, v in self.train_overrides.items()},
            "models": list(self.models),
        }
