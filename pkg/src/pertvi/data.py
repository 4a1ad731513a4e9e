"""Expression records and the dataset container.

Dataset CSV columns: cell_line_id, replicate_id, y (empty if unlabeled),
x1_1..x1_G, x2_1..x2_G (empty if singleton).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np


class DataError(ValueError):
    pass


@dataclass
class Sample:
    cell_line: str
    x1: np.ndarray
    x2: np.ndarray | None = None
    y: int | None = None
    replicate: int = 0

    @property
    def is_pair(self) -> bool:
        return self.x2 is not None


@dataclass
class Dataset:
    """Column-oriented records. Singletons carry NaN rows in ``x2``; unlabeled
    records carry NaN in ``y``."""

    cell_line: np.ndarray
    replicate: np.ndarray
    x1: np.ndarray
    x2: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.cell_line = np.asarray(self.cell_line, dtype=object)
        self.replicate = np.asarray(self.replicate, dtype=np.int64)
        self.x1 = np.asarray(self.x1, dtype=np.float64)
        if self.x1.ndim != 2:
            self.x1 = self.x1.reshape(len(self.cell_line), -1)
        self.x2 = np.asarray(self.x2, dtype=np.float64).reshape(self.x1.shape)
        self.y = np.asarray(self.y, dtype=np.float64).reshape(-1)
        n = len(self.cell_line)
        if not (len(self.replicate) == len(self.y) == n):
            raise DataError("column lengths differ")
        if not np.isfinite(self.x1).all():
            raise DataError("x1 must be finite")
        partial = np.isnan(self.x2).any(axis=1) & ~np.isnan(self.x2).all(axis=1)
        if partial.any():
            raise DataError("x2 rows must be fully observed or fully missing")
        lab = ~np.isnan(self.y)
        if not np.isin(self.y[lab], (0.0, 1.0)).all():
            raise DataError("labels must be 0 or 1")

    def __len__(self) -> int:
        return len(self.cell_line)

    @property
    def n_genes(self) -> int:
        return self.x1.shape[1]

    @property
    def is_pair(self) -> np.ndarray:
        return ~np.isnan(self.x2[:, 0]) if self.n_genes else np.zeros(len(self), bool)

    @property
    def is_labeled(self) -> np.ndarray:
        return ~np.isnan(self.y)

    def regime_mask(self, paired: bool, labeled: bool) -> np.ndarray:
        return (self.is_pair == paired) & (self.is_labeled == labeled)

    def counts(self) -> dict[str, int]:
        return {
            "LP": int(self.regime_mask(True, True).sum()),
            "UP": int(self.regime_mask(True, False).sum()),
            "LS": int(self.regime_mask(False, True).sum()),
            "US": int(self.regime_mask(False, False).sum()),
        }

    def cell_lines(self) -> list[str]:
        """Distinct cell-line ids in first-appearance order."""
        return list(dict.fromkeys(self.cell_line.tolist()))

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.cell_line[idx], self.replicate[idx], self.x1[idx],
                       self.x2[idx], self.y[idx])

    def select_cell_lines(self, ids: Iterable[str]) -> "Dataset":
        return self.subset(np.isin(self.cell_line, list(ids)))

    def as_singletons(self) -> "Dataset":
        """Split every pair into two unlabeled-or-labeled singletons (x1 and x2)."""
        pair = self.is_pair
        x1 = np.concatenate([self.x1, self.x2[pair]])
        n_extra = int(pair.sum())
        return Dataset(
            np.concatenate([self.cell_line, self.cell_line[pair]]),
            np.concatenate([self.replicate, self.replicate[pair]]),
            x1,
            np.full_like(x1, np.nan),
            np.concatenate([self.y, np.full(n_extra, np.nan)]),
        )

    def samples(self) -> Iterator[Sample]:
        pair, lab = self.is_pair, self.is_labeled
        for i in range(len(self)):
            yield Sample(str(self.cell_line[i]), self.x1[i].copy(),
                         self.x2[i].copy() if pair[i] else None,
                         int(self.y[i]) if lab[i] else None, int(self.replicate[i]))

    @classmethod
    def from_samples(cls, samples: Iterable[Sample]) -> "Dataset":
        samples = list(samples)
        if not samples:
            raise DataError("no samples")
        g = len(samples[0].x1)
        x2 = [s.x2 if s.x2 is not None else np.full(g, np.nan) for s in samples]
        return cls([s.cell_line for s in samples], [s.replicate for s in samples],
                   [s.x1 for s in samples], x2,
                   [np.nan if s.y is None else s.y for s in samples])

    # CSV

    def to_csv(self, path) -> None:
        g = self.n_genes
        header = (["cell_line_id", "replicate_id", "y"]
                  + [f"x1_{i + 1}" for i in range(g)] + [f"x2_{i + 1}" for i in range(g)])
        pair, lab = self.is_pair, self.is_labeled
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for i in range(len(self)):
                x2 = [repr(float(v)) for v in self.x2[i]] if pair[i] else [""] * g
                w.writerow([self.cell_line[i], int(self.replicate[i]),
                            str(int(self.y[i])) if lab[i] else "",
                            *[repr(float(v)) for v in self.x1[i]], *x2])

    @classmethod
    def from_csv(cls, path) -> "Dataset":
        with open(Path(path), newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        g = sum(1 for h in header if h.startswith("x1_"))
        if header[:3] != ["cell_line_id", "replicate_id", "y"] or len(header) != 3 + 2 * g:
            raise DataError(f"{path}: unexpected header")

        def num(v):
            return float(v) if v != "" else np.nan

        return cls(
            [r[0] for r in body],
            [int(r[1]) for r in body],
            [[float(v) for v in r[3:3 + g]] for r in body],
            [[num(v) for v in r[3 + g:3 + 2 * g]] for r in body],
            [num(r[2]) for r in body],
        )
