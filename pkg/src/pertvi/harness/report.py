"""Cross-validation report: per-split rows, aggregates, CSV and markdown output."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..evalstats import mann_whitney_one_sided, relative_change

ROW_FIELDS = ("model", "scenario", "repetition", "fold", "auroc", "aupr",
              "rho_pred", "rho_rec", "status")
AGG_FIELDS = ("scenario", "model", "n_ok", "n_failed", "auroc", "aupr", "rho_pred", "rho_rec",
              "auroc_rel_change_pct", "aupr_rel_change_pct", "mw_p_pred_gt_rec")
BASELINE = "ridge"


def _fmt(v) -> str:
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def _parse(v: str, kind) -> object:
    if kind is float:
        return float(v) if v != "" else float("nan")
    return kind(v)


@dataclass
class CVReport:
    rows: list[dict] = field(default_factory=list)

    def models(self) -> list[str]:
        return list(dict.fromkeys(r["model"] for r in self.rows))

    def scenarios(self) -> list[str]:
        return list(dict.fromkeys(r["scenario"] for r in self.rows))

    def aggregates(self) -> list[dict]:
        """Means over splits with status 'ok' (NaN-free per metric)."""
        out = []
        for sc in self.scenarios():
            base = None
            block = []
            for m in self.models():
                rs = [r for r in self.rows if r["scenario"] == sc and r["model"] == m]
                if not rs:
                    continue
                ok = [r for r in rs if r["status"] == "ok"]
                agg = {"scenario": sc, "model": m, "n_ok": len(ok), "n_failed": len(rs) - len(ok)}
                for key in ("auroc", "aupr", "rho_pred", "rho_rec"):
                    vals = [r[key] for r in ok if not math.isnan(r[key])]
                    agg[key] = float(np.mean(vals)) if vals else float("nan")
                pairs = [(r["rho_rec"], r["rho_pred"]) for r in ok
                         if not (math.isnan(r["rho_rec"]) or math.isnan(r["rho_pred"]))]
                agg["mw_p_pred_gt_rec"] = (mann_whitney_one_sided([a for a, _ in pairs], [b for _, b in pairs])
                                           if pairs else float("nan"))
                if m == BASELINE:
                    base = agg
                block.append(agg)
            for agg in block:
                for key in ("auroc", "aupr"):
                    ok = base is not None and not math.isnan(base[key]) and base[key] != 0
                    agg[f"{key}_rel_change_pct"] = (relative_change(agg[key], base[key])
                                                    if ok else float("nan"))
            out.extend(block)
        return out

    def mean(self, model: str, metric: str, scenario: str | None = None) -> float:
        for a in self.aggregates():
            if a["model"] == model and (scenario is None or a["scenario"] == scenario):
                return a[metric]
        raise KeyError(f"no rows for model {model!r}")

    def values(self, model: str, metric: str) -> np.ndarray:
        return np.array([r[metric] for r in self.rows if r["model"] == model and r["status"] == "ok"])

    # files

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(ROW_FIELDS)
            for r in self.rows:
                w.writerow([_fmt(r[k]) for k in ROW_FIELDS])

    @classmethod
    def read_csv(cls, path) -> "CVReport":
        kinds = {"model": str, "scenario": str, "repetition": int, "fold": int, "status": str}
        with open(path, newline="") as fh:
            rows = [{k: _parse(v, kinds.get(k, float)) for k, v in r.items()}
                    for r in csv.DictReader(fh)]
        return cls(rows)

    def write_aggregates(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(AGG_FIELDS)
            for a in self.aggregates():
                w.writerow([_fmt(a[k]) for k in AGG_FIELDS])

    def to_markdown(self, metric: str = "aupr") -> str:
        """Scenario x model table; each cell is the mean metric with the percent
        change relative to ridge LR, 100 * (m - m_ridge) / m_ridge."""
        models = self.models()
        aggs = {(a["scenario"], a["model"]): a for a in self.aggregates()}
        lines = [f"Mean {metric.upper()} over splits (relative change vs ridge LR, %)", "",
                 "| scenario | " + " | ".join(models) + " |",
                 "|" + "---|" * (len(models) + 1)]
        for sc in self.scenarios():
            cells = []
            for m in models:
                a = aggs.get((sc, m))
                if a is None or math.isnan(a.get(metric, float("nan"))):
                    cells.append("n/a")
                    continue
                rel = a.get(f"{metric}_rel_change_pct", float("nan"))
                cells.append(f"{a[metric]:.3f}" + ("" if math.isnan(rel) else f" ({rel:+.1f}%)"))
            lines.append(f"| {sc} | " + " | ".join(cells) + " |")
        rho = [a for a in self.aggregates() if not math.isnan(a["rho_pred"])]
        if rho:
            lines += ["", "| scenario | model | rho_pred,pert | rho_rec,pert | one-sided MW p |",
                      "|---|---|---|---|---|"]
            for a in rho:
                lines.append(f"| {a['scenario']} | {a['model']} | {a['rho_pred']:.4f} | "
                             f"{a['rho_rec']:.4f} | {a['mw_p_pred_gt_rec']:.3g} |")
        return "\n".join(lines) + "\n"


def write_report(report: CVReport, out_dir, formats=("csv", "md")) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if "csv" in formats:
        report.write_csv(out / "rows.csv")
        report.write_aggregates(out / "aggregates.csv")
        written += [out / "rows.csv", out / "aggregates.csv"]
    if "md" in formats:
        (out / "summary.md").write_text(report.to_markdown("aupr") + "\n" + report.to_markdown("auroc"))
        written.append(out / "summary.md")
    return written
