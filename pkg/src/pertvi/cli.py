"""Command-line entry point: ``pertvi <subcommand> [options]``.

Subcommands
    generate-data     write a synthetic dataset CSV
    train-pertvae     fit a PertVAE, write checkpoint and training log
    train-drvae       fit a Dr.VAE (or SSVAE with --ssvae), write checkpoint,
                      log and per-record response probabilities
    train-baseline    fit ridge LR or PCA+LR, write probabilities
    cross-validate    run the repeated cell-line-grouped CV protocol
    report            rebuild summary tables from a rows CSV

Set PERTVI_WORKERS to run CV folds in parallel processes.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import drvae, pertvae
from .baselines import IdentityEmbedder, PcaEmbedder, RidgeClassifier, TwoStepPipeline
from .data import Dataset
from .harness.config import MODEL_NAMES, ExperimentConfig
from .harness.cv import _model_config, make_folds, run_experiment
from .harness.report import CVReport, write_report
from .harness.synthetic import SCENARIOS, SyntheticConfig, generate
from .nn import save_checkpoint

log = logging.getLogger("pertvi")


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.scenario is not None:
        cfg.scenario = args.scenario
    if getattr(args, "models", None):
        cfg.models = tuple(args.models.split(","))
        cfg.__post_init__()
    return cfg


def _synthetic_config(cfg: ExperimentConfig) -> SyntheticConfig:
    if cfg.scenario not in SCENARIOS:
        raise SystemExit(f"unknown scenario {cfg.scenario!r}; choose from {sorted(SCENARIOS)}")
    return SyntheticConfig.from_dict({**SCENARIOS[cfg.scenario], **cfg.synthetic, "seed": cfg.seed})


def _dataset(args, cfg: ExperimentConfig) -> Dataset:
    if getattr(args, "data", None):
        return Dataset.from_csv(args.data)
    return generate(_synthetic_config(cfg))


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_predictions(path: Path, ds: Dataset, p: np.ndarray) -> None:
    lab = ds.is_labeled
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cell_line_id", "replicate_id", "probability", "label"])
        for i in range(len(ds)):
            w.writerow([ds.cell_line[i], int(ds.replicate[i]), repr(float(p[i])),
                        str(int(ds.y[i])) if lab[i] else ""])


# subcommands


def cmd_generate_data(args) -> int:
    cfg = _load_config(args)
    syn = _synthetic_config(cfg)
    out = _out_dir(args)
    generate(syn).to_csv(out / "data.csv")
    _write_json(out / "synthetic_config.json", syn.to_dict())
    print(out / "data.csv")
    return 0


def cmd_train_pertvae(args) -> int:
    cfg = _load_config(args)
    ds = _dataset(args, cfg)
    out = _out_dir(args)
    rng = np.random.default_rng(cfg.seed)
    model = pertvae.PertVAE(_model_config(ds.n_genes, cfg), rng)
    result = pertvae.train(model, ds, cfg.train_for("pertvae"), rng)
    save_checkpoint(model, out / "pertvae.json", {"config": cfg.to_dict()})
    result.write_log(out / "train_log.csv")
    print(f"trained {len(result.log)} epochs; checkpoint {out / 'pertvae.json'}")
    return 0


def cmd_train_drvae(args) -> int:
    cfg = _load_config(args)
    ds = _dataset(args, cfg)
    test = Dataset.from_csv(args.test) if args.test else ds
    out = _out_dir(args)
    rng = np.random.default_rng(cfg.seed)
    model = drvae.DrVAE(_model_config(ds.n_genes, cfg), rng, perturbation=not args.ssvae)
    result = drvae.train(model, ds, cfg.train_for("drvae"), rng)
    name = "ssvae" if args.ssvae else "drvae"
    save_checkpoint(model, out / f"{name}.json", {"config": cfg.to_dict()})
    result.write_log(out / "train_log.csv")
    p = model.predict_response(test.x1, test.x2, cfg.train.eval_samples, rng)
    _write_predictions(out / "predictions.csv", test, p)
    print(f"trained {len(result.log)} epochs; predictions {out / 'predictions.csv'}")
    return 0


def cmd_train_baseline(args) -> int:
    cfg = _load_config(args)
    ds = _dataset(args, cfg)
    test = Dataset.from_csv(args.test) if args.test else ds
    out = _out_dir(args)
    lab = ds.is_labeled
    b = cfg.baselines
    if args.baseline == "ridge":
        emb = IdentityEmbedder()
    else:
        emb = PcaEmbedder(b.pca_components).fit(ds.x1)
    pipe = TwoStepPipeline(emb, RidgeClassifier(b.lambda_grid, n_folds=b.inner_folds, seed=cfg.seed))
    pipe.fit(ds.x1[lab], ds.y[lab], ds.cell_line[lab])
    _write_predictions(out / "predictions.csv", test, pipe.predict_proba(test.x1))
    print(f"lambda={pipe.classifier.model_.lam:g}; predictions {out / 'predictions.csv'}")
    return 0


def cmd_cross_validate(args) -> int:
    cfg = _load_config(args)
    ds = _dataset(args, cfg)
    out = _out_dir(args)
    folds = make_folds(ds, cfg.cv.repetitions, cfg.cv.folds, cfg.seed)
    report = run_experiment(ds, folds, cfg, cfg.scenario, workers=args.workers)
    _write_json(out / "config.json", cfg.to_dict())
    for path in write_report(report, out):
        print(path)
    return 0


def cmd_report(args) -> int:
    report = CVReport.read_csv(args.input)
    out = _out_dir(args)
    for path in write_report(report, out):
        print(path)
    print(report.to_markdown(args.metric))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pertvi", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=True):
        p.add_argument("--config", help="experiment config JSON")
        p.add_argument("--seed", type=int, help="overrides the config seed")
        p.add_argument("--scenario", choices=sorted(SCENARIOS), help="synthetic scenario")
        p.add_argument("--out", default="out", help="output directory")
        if data:
            p.add_argument("--data", help="dataset CSV (default: generate from the scenario)")

    p = sub.add_parser("generate-data", help="write a synthetic dataset")
    common(p, data=False)
    p.set_defaults(func=cmd_generate_data)

    p = sub.add_parser("train-pertvae", help="train a PertVAE")
    common(p)
    p.set_defaults(func=cmd_train_pertvae)

    p = sub.add_parser("train-drvae", help="train a Dr.VAE and score records")
    common(p)
    p.add_argument("--test", help="CSV to score (default: the training data)")
    p.add_argument("--ssvae", action="store_true", help="no perturbation pathway (SSVAE)")
    p.set_defaults(func=cmd_train_drvae)

    p = sub.add_parser("train-baseline", help="train ridge LR or PCA+LR")
    common(p)
    p.add_argument("--test", help="CSV to score (default: the training data)")
    p.add_argument("--baseline", choices=("ridge", "pca+lr"), default="ridge")
    p.set_defaults(func=cmd_train_baseline)

    p = sub.add_parser("cross-validate", help="run the CV protocol")
    common(p)
    p.add_argument("--models", help=f"comma-separated subset of {','.join(MODEL_NAMES)}")
    p.add_argument("--workers", type=int, help="parallel fold workers (default: $PERTVI_WORKERS or 1)")
    p.set_defaults(func=cmd_cross_validate)

    p = sub.add_parser("report", help="summarize a rows CSV")
    p.add_argument("input", help="rows.csv written by cross-validate")
    p.add_argument("--out", default="out")
    p.add_argument("--metric", choices=("aupr", "auroc"), default="aupr")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
