"""Dr.VAE: a semi-supervised (M2-style) outcome model stacked on PertVAE.

Generative side adds y ~ Cat(pi), z3 ~ N(0, I) and p(z1 | z3, y); inference
adds q(y | z1, z2) (linear softmax over [z1, z2 - z1]) and q(z3 | z1, y).
Unlabeled records marginalize y exactly over both classes.
"""

from __future__ import annotations

import numpy as np

from . import evalstats
from . import tensor as T
from .data import Dataset
from .nn import MLP, Linear, Module
from .pertvae import Bound, ModelConfig, PertVAE, _batch, _fb_value, shortfall
from .prob import (CategoricalDist, DiagGaussian, categorical_entropy, categorical_log_prob,
                   log_prob, log_prob_per_dim, sample_reparam)
from .tensor import Tensor
from .training import TrainConfig, TrainResult, fit

N_CLASSES = 2


def one_hot(y, n: int | None = None) -> np.ndarray:
    """One-hot rows for labels ``y``; a scalar label is repeated ``n`` times."""
    y = np.asarray(y, dtype=np.int64).reshape(-1)
    if n is not None and len(y) == 1:
        y = np.repeat(y, n)
    out = np.zeros((len(y), N_CLASSES))
    out[np.arange(len(y)), y] = 1.0
    return out


class ConditionalGaussian(Module):
    """N(mu(u), exp(f(u))) with u = [latent, one-hot y], one ELU hidden layer.

    Both heads start at zero, so the distribution starts as N(0, I) whatever
    the input: the label path initially agrees with the PertVAE prior and the
    two class branches of an unlabeled bound start out equal.
    """

    def __init__(self, n_in: int, n_hidden: int, d: int, rng: np.random.Generator):
        self.body = MLP([n_in, n_hidden], rng)
        self.mu = Linear(n_hidden, d, rng, weight_norm=False, zero_init=True)
        self.scale = Linear(n_hidden, d, rng, weight_norm=False, zero_init=True)

    def __call__(self, z: Tensor, y1h: np.ndarray) -> DiagGaussian:
        h = self.body(T.concat([z, T.Tensor(y1h)], axis=-1))
        return DiagGaussian.from_logits(self.mu(h), self.scale(h))


class DrVAE(Module):
    """Dr.VAE parameters and bounds.

    ``label_path=False`` drops y and z3 (p(z1) becomes N(0, I)), reproducing the
    PertVAE bounds. ``perturbation=False`` gives the SSVAE comparison model:
    no latent drug effect, z2 is taken equal to z1, and only singletons are
    expected.
    """

    def __init__(self, config: ModelConfig, rng: np.random.Generator,
                 perturbation: bool = True, label_path: bool = True):
        self.config = config
        self.perturbation = perturbation
        self.label_path = label_path
        self.base = PertVAE(config, rng)
        d = config.latent_dim
        self.classifier = Linear(2 * d, N_CLASSES, rng, weight_norm=False, zero_init=True)
        self.prior_z1 = ConditionalGaussian(d + N_CLASSES, config.aux_hidden, d, rng)
        self.aux_z3 = ConditionalGaussian(d + N_CLASSES, config.aux_hidden, d, rng)
        self.log_class_prior = np.log(np.full(N_CLASSES, 1.0 / N_CLASSES))

    def set_class_prior(self, y: np.ndarray) -> None:
        """p(y) from empirical frequencies (floored so both classes stay possible)."""
        y = np.asarray(y)
        freq = np.array([(y == k).sum() for k in range(N_CLASSES)], dtype=np.float64) + 1e-3
        self.log_class_prior = np.log(freq / freq.sum())

    def classify(self, z1, z2) -> CategoricalDist:
        z1, z2 = T.as_tensor(z1), T.as_tensor(z2)
        return CategoricalDist.from_logits(self.classifier(T.concat([z1, z2 - z1], axis=-1)))

    # latent sampling shared by the bounds

    def _hop(self, z1: Tensor, rng) -> Tensor:
        if not self.perturbation:
            return z1
        z2, _ = sample_reparam(self.base.perturb_latent(z1), rng)
        return z2

    def _label_terms(self, z1: Tensor, lq1: Tensor, y1h: np.ndarray, eps3: np.ndarray | None):
        """log p(z1|z3,y) + log p(z3) + log p(y) - log q(z1|x1) - log q(z3|z1,y),
        with the KL pieces per dimension."""
        if not self.label_path:
            kl1 = lq1 - log_prob_per_dim(DiagGaussian.standard(z1.shape), z1)
            return -kl1.sum(axis=-1), {"z1": kl1}
        q3 = self.aux_z3(z1, y1h)
        z3 = q3.mean + q3.scale * eps3
        kl3 = log_prob_per_dim(q3, z3) - log_prob_per_dim(DiagGaussian.standard(z3.shape), z3)
        kl1 = lq1 - log_prob_per_dim(self.prior_z1(z3, y1h), z1)
        log_py = T.Tensor(y1h @ self.log_class_prior)
        return log_py - kl1.sum(axis=-1) - kl3.sum(axis=-1), {"z1": kl1, "z3": kl3}

    def _draw_eps3(self, n: int, rng) -> np.ndarray | None:
        return rng.standard_normal((n, self.config.latent_dim)) if self.label_path else None

    def _pair_latents(self, x1, x2, rng):
        if not self.perturbation:
            raise ValueError("pair bounds need the perturbation pathway")
        x1, x2 = _batch(x1), _batch(x2)
        z1, _, lq1 = self.base.encode_full(x1, rng)
        z2, _, lq2 = self.base.encode_full(x2, rng)
        recon = log_prob(self.base.decode(z1), x1) + log_prob(self.base.decode(z2), x2)
        kl2 = lq2 - log_prob_per_dim(self.base.perturb_latent(z1), z2)
        return z1, lq1, z2, recon, kl2

    def _single_latents(self, x1, rng):
        x1 = _batch(x1)
        z1, _, lq1 = self.base.encode_full(x1, rng)
        recon = log_prob(self.base.decode(z1), x1)
        return z1, lq1, self._hop(z1, rng), recon

    def _marginalize(self, q: CategoricalDist, per_class: list[Bound], z1, z2) -> Bound:
        """sum_y q(y) * L(y) + H(q)."""
        probs = q.probs
        value = categorical_entropy(q)
        recon = None
        kl: dict[str, Tensor] = {}
        for k, b in enumerate(per_class):
            w = probs[:, k]
            value = value + w * b.value
            recon = b.recon if recon is None else recon
            for name, t in b.kl_dims.items():
                wt = t * probs[:, k:k + 1]
                kl[name] = wt if name not in kl else kl[name] + wt
        return Bound(value, recon, kl, z1, z2)

    # the four bounds

    def labeled_pair_bound(self, x1, x2, y, rng) -> Bound:
        z1, lq1, z2, recon, kl2 = self._pair_latents(x1, x2, rng)
        y1h = one_hot(y, len(z1.data))
        lab, kl = self._label_terms(z1, lq1, y1h, self._draw_eps3(len(z1.data), rng))
        return Bound(recon - kl2.sum(axis=-1) + lab, recon, {**kl, "z2": kl2}, z1, z2)

    def unlabeled_pair_bound(self, x1, x2, rng) -> Bound:
        z1, lq1, z2, recon, kl2 = self._pair_latents(x1, x2, rng)
        q = self.classify(z1, z2)
        eps3 = self._draw_eps3(len(z1.data), rng)
        per_class = []
        for k in range(N_CLASSES):
            lab, kl = self._label_terms(z1, lq1, one_hot(k, len(z1.data)), eps3)
            per_class.append(Bound(recon - kl2.sum(axis=-1) + lab, recon, {**kl, "z2": kl2}))
        return self._marginalize(q, per_class, z1, z2)

    def labeled_singleton_bound(self, x1, y, rng) -> Bound:
        # z2 comes from p(z2|z1) in both joint and posterior, so its terms and x2's cancel
        z1, lq1, z2, recon = self._single_latents(x1, rng)
        y1h = one_hot(y, len(z1.data))
        lab, kl = self._label_terms(z1, lq1, y1h, self._draw_eps3(len(z1.data), rng))
        return Bound(recon + lab, recon, kl, z1, z2)

    def unlabeled_singleton_bound(self, x1, rng) -> Bound:
        z1, lq1, z2, recon = self._single_latents(x1, rng)
        q = self.classify(z1, z2)
        eps3 = self._draw_eps3(len(z1.data), rng)
        per_class = []
        for k in range(N_CLASSES):
            lab, kl = self._label_terms(z1, lq1, one_hot(k, len(z1.data)), eps3)
            per_class.append(Bound(recon + lab, recon, kl))
        return self._marginalize(q, per_class, z1, z2)

    def elbo_labeled_pair(self, x1, x2, y, rng, free_bits=0.0) -> Tensor:
        return _fb_value(self.labeled_pair_bound(x1, x2, y, rng), free_bits)

    def elbo_unlabeled_pair(self, x1, x2, rng, free_bits=0.0) -> Tensor:
        return _fb_value(self.unlabeled_pair_bound(x1, x2, rng), free_bits)

    def elbo_labeled_singleton(self, x1, y, rng, free_bits=0.0) -> Tensor:
        return _fb_value(self.labeled_singleton_bound(x1, y, rng), free_bits)

    def elbo_unlabeled_singleton(self, x1, rng, free_bits=0.0) -> Tensor:
        return _fb_value(self.unlabeled_singleton_bound(x1, rng), free_bits)

    # objective

    def objective(self, batch: Dataset, alpha: float, rng, free_bits=0.0) -> tuple[Tensor, dict[str, float]]:
        """J = ELBO_DrVAE - alpha * sum over labeled records of -log q(y = t | z1, z2).

        The classification term enters with the sign that rewards a correct
        classifier; J is maximized.
        """
        if alpha < 0:
            raise ValueError("alpha must be non-negative")
        if not self.perturbation and batch.is_pair.any():
            batch = batch.as_singletons()
        pair, lab = batch.is_pair, batch.is_labeled
        elbo, fb, ce = T.Tensor(0.0), T.Tensor(0.0), T.Tensor(0.0)
        stats = {"elbo": 0.0, "recon": 0.0, "kl": 0.0, "class_nll": 0.0}
        for paired in (True, False):
            for labeled in (True, False):
                m = (pair == paired) & (lab == labeled)
                if not m.any():
                    continue
                x1 = batch.x1[m]
                if paired and labeled:
                    b = self.labeled_pair_bound(x1, batch.x2[m], batch.y[m], rng)
                elif paired:
                    b = self.unlabeled_pair_bound(x1, batch.x2[m], rng)
                elif labeled:
                    b = self.labeled_singleton_bound(x1, batch.y[m], rng)
                else:
                    b = self.unlabeled_singleton_bound(x1, rng)
                elbo = elbo + b.value.sum()
                fb = fb + shortfall(b, free_bits)
                if labeled:
                    q = self.classify(b.z1, b.z2)
                    nll = -categorical_log_prob(q, one_hot(batch.y[m])).sum()
                    ce = ce + nll
                    stats["class_nll"] += float(nll.data)
                stats["elbo"] += float(b.value.data.sum())
                stats["recon"] += float(b.recon.data.sum())
                stats["kl"] += float(b.kl.data.sum())
        return elbo - fb - alpha * ce, stats

    # prediction

    def predict_response(self, x1, x2=None, n_samples: int = 64, rng=None) -> np.ndarray:
        """P(responder) averaged over latent samples.

        Rows of ``x2`` that are NaN (or ``x2=None``) use the generative hop
        p(z2|z1) instead of the encoder.
        """
        if n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        x1 = _batch(x1)
        n = len(x1)
        has2 = np.zeros(n, bool) if x2 is None else ~np.isnan(np.atleast_2d(x2)[:, 0])
        if not self.perturbation:
            has2[:] = False
        with T.no_grad():
            z1, _ = self.base.encode(np.tile(x1, (n_samples, 1)), rng)
            z2 = self._hop(z1, rng).data
            if has2.any():
                x2a = np.atleast_2d(x2)[has2]
                z2_enc, _ = self.base.encode(np.tile(x2a, (n_samples, 1)), rng)
                z2 = z2.reshape(n_samples, n, -1)
                z2[:, has2] = z2_enc.data.reshape(n_samples, int(has2.sum()), -1)
                z2 = z2.reshape(n_samples * n, -1)
            p = self.classify(z1, T.Tensor(z2)).probs.data[:, 1]
        return p.reshape(n_samples, n).mean(axis=0)


def default_alpha(data: Dataset) -> float:
    n_lab = int(data.is_labeled.sum())
    return 0.1 * len(data) / n_lab if n_lab else 0.0


def validation_aupr(model: DrVAE, val: Dataset, n_samples: int):
    lab = val.is_labeled
    y = val.y[lab]
    if lab.sum() < 2 or len(np.unique(y)) < 2:
        return None

    def score(rng):
        p = model.predict_response(val.x1[lab], val.x2[lab], n_samples, rng)
        return evalstats.aupr(p, y)

    return score


def train(model: DrVAE, data: Dataset, config: TrainConfig, rng: np.random.Generator,
          val: Dataset | None = None) -> TrainResult:
    """Maximize J_DrVAE; early-stop on validation AUPR."""
    if not model.perturbation:
        data = data.as_singletons()
    model.set_class_prior(data.y[data.is_labeled])
    alpha = default_alpha(data) if config.alpha is None else config.alpha

    def step(batch, r):
        total, stats = model.objective(batch, alpha, r, config.free_bits)
        loss = -total * (1.0 / len(batch)) + config.l2_perturbation * model.base.l2_penalty()
        return loss, stats

    validate = validation_aupr(model, val, config.val_samples) if val is not None else None
    return fit(model, data, config, rng, step, validate, higher_is_better=True, val_name="val_aupr")
