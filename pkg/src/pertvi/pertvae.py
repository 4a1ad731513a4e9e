"""Perturbation VAE.

Shared flow encoder q(z|x) and Gaussian decoder p(x|z) for pre- and
post-treatment expression, with the drug effect modelled in latent space as
p(z2|z1) = N(z1 + W z1 + b, exp(f(z1))).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .data import Dataset
from .flows import FlowPosterior
from .nn import MLP, Linear, Module
from .prob import DiagGaussian, free_bits, free_bits_shortfall, log_prob, log_prob_per_dim, sample_reparam
from .tensor import NonFiniteError, Parameter, Tensor
from .training import TrainConfig, TrainResult, fit


@dataclass
class ModelConfig:
    n_genes: int
    latent_dim: int = 100
    hidden: tuple[int, ...] = (500, 300)
    context_dim: int = 200
    n_flows: int = 2
    made_hidden: int = 300
    aux_hidden: int = 100
    obs_scale_floor: float = 1e-3

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)

    @classmethod
    def desk(cls, n_genes: int, latent_dim: int = 10, **kw) -> "ModelConfig":
        """Reduced widths for tens of genes."""
        base = dict(hidden=(128, 64), context_dim=32, made_hidden=64, aux_hidden=32)
        base.update(kw)
        return cls(n_genes, latent_dim, **base)

    @classmethod
    def tiny(cls, n_genes: int = 6, latent_dim: int = 3, **kw) -> "ModelConfig":
        """Shrunken architecture for gradient and bound checks."""
        base = dict(hidden=(8, 5), context_dim=4, made_hidden=6, aux_hidden=5)
        base.update(kw)
        return cls(n_genes, latent_dim, **base)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


def _batch(x) -> np.ndarray:
    x = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    x = np.atleast_2d(x)
    if not np.isfinite(x).all():
        raise NonFiniteError("expression input contains non-finite values")
    return x


@dataclass
class Bound:
    """Per-example bound value with its pieces.

    ``kl_dims`` maps a latent name to an (n, d) tensor of per-dimension
    single-sample KL contributions used by free bits.
    """

    value: Tensor
    recon: Tensor
    kl_dims: dict[str, Tensor] = field(default_factory=dict)
    z1: Tensor | None = None
    z2: Tensor | None = None

    @property
    def kl(self) -> Tensor:
        total = None
        for k in self.kl_dims.values():
            s = k.sum(axis=-1)
            total = s if total is None else total + s
        return total if total is not None else T.Tensor(np.zeros(self.value.shape))


def _fb_value(b: Bound, lam) -> Tensor:
    """Per-example bound with per-example free-bits clamping."""
    if not _any_free_bits(lam):
        return b.value
    out = b.recon + (b.value - b.recon + b.kl)  # non-KL, non-recon terms (e.g. log p(y))
    for name, k in b.kl_dims.items():
        out = out - free_bits(k, _lam(lam, name))
    return out


def _lam(lam, name: str) -> float:
    return float(lam.get(name, 0.0)) if isinstance(lam, dict) else float(lam)


def _any_free_bits(lam) -> bool:
    return any(v > 0 for v in lam.values()) if isinstance(lam, dict) else lam > 0


def shortfall(b: Bound, lam) -> Tensor:
    total = T.Tensor(0.0)
    for name, k in b.kl_dims.items():
        total = total + free_bits_shortfall(k, _lam(lam, name))
    return total


class PertVAE(Module):
    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        c = config
        self.config = c
        self.encoder = FlowPosterior(c.n_genes, c.hidden, c.latent_dim, c.context_dim,
                                     c.n_flows, c.made_hidden, rng)
        dec_sizes = [c.latent_dim, *reversed(c.hidden)]
        self.decoder = MLP(dec_sizes, rng)
        self.dec_mu = Linear(dec_sizes[-1], c.n_genes, rng)
        self.dec_scale = Linear(dec_sizes[-1], c.n_genes, rng)
        d = c.latent_dim
        self.W = Parameter(np.zeros((d, d)))
        self.b = Parameter(np.zeros(d))
        self.pert_scale = Linear(d, d, rng, weight_norm=False, zero_init=True)

    # building blocks

    def encode_full(self, x, rng) -> tuple[Tensor, Tensor, Tensor]:
        """(z, log q(z|x), per-dimension log q terms)."""
        return self.encoder.sample(_batch(x), rng)

    def encode(self, x, rng: np.random.Generator) -> tuple[Tensor, Tensor]:
        z, log_q, _ = self.encode_full(x, rng)
        return z, log_q

    def decode(self, z: Tensor) -> DiagGaussian:
        h = self.decoder(z)
        return DiagGaussian.from_logits(self.dec_mu(h), self.dec_scale(h),
                                        floor=self.config.obs_scale_floor)

    def perturb_latent(self, z1) -> DiagGaussian:
        z1 = T.as_tensor(z1)
        mean = z1 + z1 @ self.W.T + self.b
        return DiagGaussian.from_logits(mean, self.pert_scale(z1))

    def prior(self, shape) -> DiagGaussian:
        return DiagGaussian.standard(shape)

    def l2_penalty(self) -> Tensor:
        return (self.W * self.W).sum() + (self.b * self.b).sum()

    # bounds

    def pair_bound(self, x1, x2, rng) -> Bound:
        x1, x2 = _batch(x1), _batch(x2)
        z1, _, lq1 = self.encode_full(x1, rng)
        z2, _, lq2 = self.encode_full(x2, rng)
        recon = log_prob(self.decode(z1), x1) + log_prob(self.decode(z2), x2)
        kl1 = lq1 - log_prob_per_dim(self.prior(z1.shape), z1)
        kl2 = lq2 - log_prob_per_dim(self.perturb_latent(z1), z2)
        value = recon - kl1.sum(axis=-1) - kl2.sum(axis=-1)
        return Bound(value, recon, {"z1": kl1, "z2": kl2}, z1, z2)

    def singleton_bound(self, x1, rng) -> Bound:
        x1 = _batch(x1)
        z1, _, lq1 = self.encode_full(x1, rng)
        recon = log_prob(self.decode(z1), x1)
        kl1 = lq1 - log_prob_per_dim(self.prior(z1.shape), z1)
        return Bound(recon - kl1.sum(axis=-1), recon, {"z1": kl1}, z1)

    def elbo_pair(self, x1, x2, rng, free_bits: float = 0.0) -> Tensor:
        return _fb_value(self.pair_bound(x1, x2, rng), free_bits)

    def elbo_singleton(self, x1, rng, free_bits: float = 0.0) -> Tensor:
        return _fb_value(self.singleton_bound(x1, rng), free_bits)

    def objective(self, batch: Dataset, rng, free_bits: float = 0.0) -> tuple[Tensor, dict[str, float]]:
        """Summed ELBO over a mixed batch (labels ignored) minus the free-bits shortfall."""
        pair = batch.is_pair
        total, stats = T.Tensor(0.0), {"elbo": 0.0, "recon": 0.0, "kl": 0.0}
        bounds = []
        if pair.any():
            bounds.append(self.pair_bound(batch.x1[pair], batch.x2[pair], rng))
        if (~pair).any():
            bounds.append(self.singleton_bound(batch.x1[~pair], rng))
        for b in bounds:
            total = total + b.value.sum() - shortfall(b, free_bits)
            stats["elbo"] += float(b.value.data.sum())
            stats["recon"] += float(b.recon.data.sum())
            stats["kl"] += float(b.kl.data.sum())
        return total, stats

    # prediction

    def _tiled(self, x, n_samples: int) -> np.ndarray:
        if n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        return np.tile(_batch(x), (n_samples, 1))

    def reconstruct(self, x, n_samples: int, rng) -> np.ndarray:
        """Monte-Carlo mean of E_q(z1|x)[decoder mean]."""
        n = len(_batch(x))
        with T.no_grad():
            z1, _ = self.encode(self._tiled(x, n_samples), rng)
            mu = self.decode(z1).mean.data
        return mu.reshape(n_samples, n, -1).mean(axis=0)

    def predict_post_treatment(self, x1, n_samples: int, rng) -> np.ndarray:
        """Monte-Carlo mean of the decoder mean over z1 ~ q(.|x1), z2 ~ p(.|z1)."""
        n = len(_batch(x1))
        with T.no_grad():
            z1, _ = self.encode(self._tiled(x1, n_samples), rng)
            z2, _ = sample_reparam(self.perturb_latent(z1), rng)
            mu = self.decode(z2).mean.data
        return mu.reshape(n_samples, n, -1).mean(axis=0)

    def embed_z1(self, x, n_samples: int, rng) -> np.ndarray:
        n = len(_batch(x))
        with T.no_grad():
            z1, _ = self.encode(self._tiled(x, n_samples), rng)
        return z1.data.reshape(n_samples, n, -1).mean(axis=0)

    def embed_z2(self, x, n_samples: int, rng) -> np.ndarray:
        """Mean of E_q(z1|x)[p(z2|z1)]; the perturbation mean is affine in z1."""
        z1 = self.embed_z1(x, n_samples, rng)
        with T.no_grad():
            return self.perturb_latent(z1).mean.data


def validation_perturbation_mse(model: PertVAE, val: Dataset, n_samples: int):
    pair = val.is_pair
    if not pair.any():
        return None

    def score(rng):
        pred = model.predict_post_treatment(val.x1[pair], n_samples, rng)
        return float(np.mean((pred - val.x2[pair]) ** 2))

    return score


def train(model: PertVAE, data: Dataset, config: TrainConfig, rng: np.random.Generator,
          val: Dataset | None = None) -> TrainResult:
    """Maximize the PertVAE ELBO; early-stop on validation perturbation MSE."""

    def step(batch, r):
        total, stats = model.objective(batch, r, config.free_bits)
        loss = -total * (1.0 / len(batch)) + config.l2_perturbation * model.l2_penalty()
        return loss, stats

    validate = validation_perturbation_mse(model, val, config.val_samples) if val is not None else None
    return fit(model, data, config, rng, step, validate, higher_is_better=False,
               val_name="val_pert_mse")
