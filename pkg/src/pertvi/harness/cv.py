"""Cell-line-grouped repeated k-fold cross-validation and the model zoo it runs."""

from __future__ import annotations

import logging
import os
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .. import drvae as drvae_mod
from .. import pertvae as pertvae_mod
from ..baselines import (IdentityEmbedder, PcaEmbedder, PertVaeEmbedder, RidgeClassifier,
                         TwoStepPipeline, pca_fit, pca_reconstruct, pca_transform)
from ..data import Dataset
from ..evalstats import UndefinedMetricError, aupr, auroc, spearman_rho
from ..pertvae import ModelConfig
from .config import MODEL_NAMES, ExperimentConfig
from .report import CVReport

log = logging.getLogger(__name__)

WORKERS_ENV = "PERTVI_WORKERS"


@dataclass(frozen=True)
class FoldPlan:
    repetition: int  # 1-based
    fold: int  # 1-based
    train_ids: tuple[str, ...]
    test_ids: tuple[str, ...]


def _strata(ds: Dataset) -> dict[str, str]:
    """Cell line -> 'pos' / 'neg' / 'unl' (first labeled record decides)."""
    out: dict[str, str] = {}
    for cl, y in zip(ds.cell_line, ds.y):
        if np.isnan(y):
            out.setdefault(cl, "unl")
        elif out.get(cl, "unl") == "unl":
            out[cl] = "pos" if y == 1 else "neg"
    return out


def make_folds(data: Dataset | list[str], repetitions: int = 10, k: int = 5,
               seed: int = 0) -> list[FoldPlan]:
    """Per repetition, a fresh shuffled partition of cell lines into k folds.

    Cell lines are dealt round-robin stratum by stratum (positive, negative,
    unlabeled) so each fold gets a share of both classes; all records of a
    cell line land in one fold.
    """
    if isinstance(data, Dataset):
        strata = _strata(data)
        ids = data.cell_lines()
    else:
        ids = list(dict.fromkeys(data))
        strata = {cl: "unl" for cl in ids}
    if len(ids) < k:
        raise ValueError(f"need at least k={k} cell lines, got {len(ids)}")
    plans = []
    for rep in range(repetitions):
        rng = np.random.default_rng([seed, rep])
        folds: list[list[str]] = [[] for _ in range(k)]
        pos = int(rng.integers(k))
        for s in ("pos", "neg", "unl"):
            members = [cl for cl in ids if strata[cl] == s]
            for j in rng.permutation(len(members)):
                folds[pos % k].append(members[j])
                pos += 1
        for f in range(k):
            test = tuple(sorted(folds[f]))
            train = tuple(cl for cl in ids if cl not in set(test))
            plans.append(FoldPlan(rep + 1, f + 1, train, test))
    return plans


def _split_validation(ds: Dataset, frac: float, rng: np.random.Generator) -> tuple[Dataset, Dataset | None]:
    ids = ds.cell_lines()
    n_val = int(round(frac * len(ids)))
    if n_val < 1 or n_val >= len(ids):
        return ds, None
    strata = _strata(ds)
    order = sorted(ids, key=lambda cl: (strata[cl], rng.random()))
    # every k-th cell line of the stratified order goes to validation
    step = len(ids) / n_val
    val_ids = {order[int(i * step)] for i in range(n_val)}
    return ds.select_cell_lines([c for c in ids if c not in val_ids]), ds.select_cell_lines(val_ids)


def _metrics(p: np.ndarray, y: np.ndarray) -> dict[str, float]:
    try:
        return {"auroc": auroc(p, y), "aupr": aupr(p, y)}
    except UndefinedMetricError:
        return {"auroc": float("nan"), "aupr": float("nan")}


def _model_config(n_genes: int, cfg: ExperimentConfig) -> ModelConfig:
    a = cfg.model
    return ModelConfig(n_genes, a.latent_dim, tuple(a.hidden), a.context_dim, a.n_flows,
                       a.made_hidden, a.aux_hidden)


def run_fold(ds: Dataset, plan: FoldPlan, cfg: ExperimentConfig, scenario: str) -> list[dict]:
    """Train and evaluate every configured model on one split."""
    train_all = ds.select_cell_lines(plan.train_ids)
    test = ds.select_cell_lines(plan.test_ids)
    tl = test.is_labeled
    y_test = test.y[tl]

    def stream(key: int) -> np.random.Generator:
        # keyed by name, not list position, so a model's numbers do not depend
        # on which other models run in the same fold
        return np.random.default_rng([cfg.seed, plan.repetition, plan.fold, key])

    val_rng = stream(0)
    fit_ds, val_ds = _split_validation(train_all, cfg.cv.val_fraction, val_rng)
    lab = train_all.is_labeled
    X_lab, y_lab, g_lab = train_all.x1[lab], train_all.y[lab], train_all.cell_line[lab]
    bcfg = cfg.baselines

    def ridge():
        return RidgeClassifier(bcfg.lambda_grid, n_folds=bcfg.inner_folds, seed=cfg.seed)

    cache: dict[str, object] = {}

    def pertvae_model():
        if "pertvae" not in cache:
            rng = stream(1 + len(MODEL_NAMES))
            m = pertvae_mod.PertVAE(_model_config(ds.n_genes, cfg), rng)
            pertvae_mod.train(m, fit_ds, cfg.train_for("pertvae"), rng, val_ds)
            cache["pertvae"] = m
        return cache["pertvae"]

    rows = []
    for name in cfg.models:
        rng = stream(1 + MODEL_NAMES.index(name))
        row = {"model": name, "scenario": scenario, "repetition": plan.repetition,
               "fold": plan.fold, "auroc": float("nan"), "aupr": float("nan"),
               "rho_pred": float("nan"), "rho_rec": float("nan"), "status": "ok"}
        try:
            if name == "ridge":
                p = TwoStepPipeline(IdentityEmbedder(), ridge()).fit(X_lab, y_lab, g_lab).predict_proba(test.x1[tl])
                row.update(_metrics(p, y_test))
            elif name == "pca+lr":
                k = min(bcfg.pca_components, len(train_all), ds.n_genes)
                emb = PcaEmbedder(k).fit(train_all.x1)
                p = TwoStepPipeline(emb, ridge()).fit(X_lab, y_lab, g_lab).predict_proba(test.x1[tl])
                row.update(_metrics(p, y_test))
            elif name == "pertvae":
                m = pertvae_model()
                pair = test.is_pair
                if pair.any():
                    n_eval = cfg.train.eval_samples
                    pred = m.predict_post_treatment(test.x1[pair], n_eval, rng)
                    rec = m.reconstruct(test.x1[pair], n_eval, rng)
                    row["rho_pred"] = spearman_rho(pred.ravel(), test.x2[pair].ravel())
                    row["rho_rec"] = spearman_rho(rec.ravel(), test.x2[pair].ravel())
            elif name in ("pertvae+lr_z1", "pertvae+lr_z2"):
                m = pertvae_model()
                emb = PertVaeEmbedder(m, name[-2:], cfg.train.eval_samples, seed=cfg.seed)
                p = TwoStepPipeline(emb, ridge()).fit(X_lab, y_lab, g_lab).predict_proba(test.x1[tl])
                row.update(_metrics(p, y_test))
            elif name in ("drvae", "ssvae"):
                m = drvae_mod.DrVAE(_model_config(ds.n_genes, cfg), rng, perturbation=(name == "drvae"))
                drvae_mod.train(m, fit_ds, cfg.train_for("drvae"), rng, val_ds)
                p = m.predict_response(test.x1[tl], test.x2[tl], cfg.train.eval_samples, rng)
                row.update(_metrics(p, y_test))
            if name != "pertvae" and np.isnan(row["aupr"]):
                row["status"] = "undefined"
        except Exception as exc:  # a failed model must not abort the sweep
            log.warning("fold %d/%d model %s failed: %s", plan.repetition, plan.fold, name, exc)
            log.debug(traceback.format_exc())
            row["status"] = f"failed: {type(exc).__name__}"
        rows.append(row)
    return rows


def _run_fold_task(args) -> list[dict]:
    return run_fold(*args)


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def run_experiment(ds: Dataset, folds: list[FoldPlan], cfg: ExperimentConfig,
                   scenario: str | None = None, workers: int | None = None) -> CVReport:
    scenario = scenario or cfg.scenario
    workers = worker_count() if workers is None else workers
    tasks = [(ds, plan, cfg, scenario) for plan in folds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_run_fold_task, tasks))
    else:
        results = [_run_fold_task(t) for t in tasks]
    return CVReport([row for rows in results for row in rows])


def reconstruction_sweep(ds: Dataset, latent_sizes, cfg: ExperimentConfig,
                         test_fraction: float = 0.25) -> list[dict]:
    """PCA vs VAE reconstruction Spearman rho on held-out cell lines.

    The VAE is the PertVAE trained on pre-treatment singletons only.
    """
    rng = np.random.default_rng([cfg.seed, 7])
    ids = ds.cell_lines()
    test_ids = set(rng.permutation(ids)[: max(1, int(round(test_fraction * len(ids))))].tolist())
    train = ds.select_cell_lines([c for c in ids if c not in test_ids])
    test = ds.select_cell_lines(test_ids)
    train_x = Dataset(train.cell_line, train.replicate, train.x1, np.full_like(train.x1, np.nan),
                      np.full(len(train), np.nan))
    out = []
    for k in latent_sizes:
        pca = pca_fit(train.x1, k)
        rec_pca = pca_reconstruct(pca, pca_transform(pca, test.x1))
        mrng = np.random.default_rng([cfg.seed, 11, k])
        mc = _model_config(ds.n_genes, cfg)
        mc.latent_dim = k
        vae = pertvae_mod.PertVAE(mc, mrng)
        pertvae_mod.train(vae, train_x, cfg.train_for("pertvae"), mrng)
        rec_vae = vae.reconstruct(test.x1, cfg.train.eval_samples, mrng)
        out.append({"latent_size": int(k),
                    "rho_pca": spearman_rho(rec_pca.ravel(), test.x1.ravel()),
                    "rho_vae": spearman_rho(rec_vae.ravel(), test.x1.ravel())})
    return out
