"""Synthetic perturbation/response data with known latent structure.

Each cell line has a pre-treatment latent z1 ~ N(0, I) and a scalar response
factor r ~ N(0, 1). The drug moves the latent to

    z2 = z1 + A z1 + b + response_shift * r * u + latent_noise * eps

for a fixed unit direction u. Expression is a fixed random decoder of the
latent (optionally only on the leading genes, the rest being pure noise) plus
independent observation noise per replicate, z-scored per gene
with pre-treatment statistics. Labels threshold a score that mixes a
pre-treatment part w.z1 (or z1[0] * z1[1] for the XOR rule) with r.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np

from ..data import Dataset
from ..evalstats import auroc

DECODERS = ("linear", "mlp")
LABEL_RULES = ("linear", "xor")


@dataclass
class SyntheticConfig:
    n_genes: int = 50
    latent_dim: int = 10
    # cell lines per regime: labeled/unlabeled pairs, labeled/unlabeled singletons
    n_lp: int = 40
    n_up: int = 10
    n_ls: int = 10
    n_us: int = 20
    replicates: int = 2
    decoder: str = "linear"
    decoder_hidden: int = 32
    label_rule: str = "linear"
    # weight of the response factor r in the label score (0: pre-treatment only)
    response_weight: float = 0.0
    label_noise: float = 0.0
    shift_matrix_scale: float = 0.1
    shift_bias_scale: float = 1.0
    response_shift: float = 0.0
    latent_noise: float = 0.1
    obs_noise: float = 0.5
    # trailing genes that carry no latent signal (pure observation noise)
    noise_genes: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.decoder not in DECODERS:
            raise ValueError(f"decoder must be one of {DECODERS}")
        if self.label_rule not in LABEL_RULES:
            raise ValueError(f"label_rule must be one of {LABEL_RULES}")
        counts = (self.n_lp, self.n_up, self.n_ls, self.n_us)
        if min(counts) < 0 or sum(counts) == 0:
            raise ValueError("regime counts must be non-negative and not all zero")
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        if not 0 <= self.noise_genes < self.n_genes:
            raise ValueError("noise_genes must lie in [0, n_genes)")
        if not 0.0 <= self.response_weight <= 1.0:
            raise ValueError("response_weight must lie in [0, 1]")

    @property
    def n_cell_lines(self) -> int:
        return self.n_lp + self.n_up + self.n_ls + self.n_us

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise KeyError(f"unknown synthetic config keys: {sorted(unknown)}")
        return cls(**d)


SCENARIOS: dict[str, dict] = {
    # labels linear in the pre-treatment latent; linear decoder
    "linear": dict(decoder="linear", label_rule="linear", response_weight=0.0,
                   shift_bias_scale=1.0),
    # XOR-like labels on two latent coordinates; nonlinear decoder
    "nonlinear": dict(decoder="mlp", label_rule="xor", response_weight=0.0),
    # labels depend mostly on the cell line's response to the drug, visible
    # only in post-treatment expression
    "shift": dict(decoder="mlp", label_rule="linear", response_weight=0.6,
                  response_shift=1.5, shift_bias_scale=2.0, obs_noise=0.8, noise_genes=30,
                  n_lp=44, n_up=8, n_ls=4, n_us=4),
}


def scenario_config(name: str, **overrides) -> SyntheticConfig:
    if name not in SCENARIOS:
        raise KeyError(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}")
    return SyntheticConfig(**{**SCENARIOS[name], **overrides})


@dataclass
class Latents:
    """Generator-side ground truth, one row per cell line."""

    cell_line: list[str]
    z1: np.ndarray
    z2: np.ndarray
    response: np.ndarray
    score_pre: np.ndarray
    score_full: np.ndarray
    y: np.ndarray
    labeled: np.ndarray = field(default_factory=lambda: np.zeros(0, bool))

    def bayes_auroc(self) -> tuple[float, float]:
        """Best achievable AUROC on labeled cell lines (pre-treatment only, full)."""
        m = self.labeled
        return auroc(self.score_pre[m], self.y[m]), auroc(self.score_full[m], self.y[m])


class _Decoder:
    def __init__(self, c: SyntheticConfig, rng: np.random.Generator):
        self.kind = c.decoder
        L, G = c.latent_dim, c.n_genes
        if self.kind == "linear":
            self.D = rng.normal(0.0, 1.0 / np.sqrt(L), size=(G, L))
        else:
            H = c.decoder_hidden
            self.A = rng.normal(0.0, 1.5 / np.sqrt(L), size=(H, L))
            self.a = rng.normal(0.0, 0.5, size=H)
            self.B = rng.normal(0.0, 1.0 / np.sqrt(H), size=(G, H))
            self.D = rng.normal(0.0, 0.5 / np.sqrt(L), size=(G, L))
        self.offset = rng.normal(0.0, 1.0, size=G)
        self.signal = np.arange(G) < G - c.noise_genes

    def __call__(self, z: np.ndarray) -> np.ndarray:
        out = z @ self.D.T
        if self.kind == "mlp":
            out = out + np.tanh(z @ self.A.T + self.a) @ self.B.T
        return np.where(self.signal, out, 0.0) + self.offset


def generate_with_latents(config: SyntheticConfig, rng: np.random.Generator | None = None
                          ) -> tuple[Dataset, Latents]:
    c = config
    rng = np.random.default_rng(c.seed) if rng is None else rng
    L = c.latent_dim
    dec = _Decoder(c, rng)
    A = rng.normal(0.0, c.shift_matrix_scale / np.sqrt(L), size=(L, L))
    b = rng.normal(0.0, c.shift_bias_scale, size=L)
    u = rng.normal(size=L)
    u /= np.linalg.norm(u)
    w = rng.normal(size=L)
    w /= np.linalg.norm(w)

    n = c.n_cell_lines
    ids = [f"CL{i + 1:04d}" for i in range(n)]
    z1 = rng.standard_normal((n, L))
    r = rng.standard_normal(n)
    z2 = z1 + z1 @ A.T + b + c.response_shift * np.outer(r, u) + c.latent_noise * rng.standard_normal((n, L))

    pre = z1 @ w if c.label_rule == "linear" else z1[:, 0] * z1[:, 1]
    pre = pre / (pre.std() + 1e-12)
    a_pre, a_resp = np.sqrt(1.0 - c.response_weight), np.sqrt(c.response_weight)
    score_pre = a_pre * pre
    score_full = score_pre + a_resp * r
    y = (score_full + c.label_noise * rng.standard_normal(n) > np.median(score_full)).astype(float)

    # regime per cell line, in block order LP, UP, LS, US
    regime = np.repeat(["LP", "UP", "LS", "US"], [c.n_lp, c.n_up, c.n_ls, c.n_us])
    labeled = np.isin(regime, ("LP", "LS"))
    paired = np.isin(regime, ("LP", "UP"))

    rows_cl, rows_rep, rows_x1, rows_x2, rows_y = [], [], [], [], []
    G = c.n_genes
    mean1, mean2 = dec(z1), dec(z2)
    for i in range(n):
        for rep in range(c.replicates):
            rows_cl.append(ids[i])
            rows_rep.append(rep)
            rows_x1.append(mean1[i] + c.obs_noise * rng.standard_normal(G))
            x2 = mean2[i] + c.obs_noise * rng.standard_normal(G)
            rows_x2.append(x2 if paired[i] else np.full(G, np.nan))
            rows_y.append(y[i] if labeled[i] else np.nan)
    x1 = np.array(rows_x1)
    x2 = np.array(rows_x2)
    mu, sd = x1.mean(axis=0), x1.std(axis=0)
    sd = np.where(sd > 1e-12, sd, 1.0)
    ds = Dataset(rows_cl, rows_rep, (x1 - mu) / sd, (x2 - mu) / sd, rows_y)
    lat = Latents(ids, z1, z2, r, score_pre, score_full, y, labeled)
    return ds, lat


def generate(config: SyntheticConfig, rng: np.random.Generator | None = None) -> Dataset:
    return generate_with_latents(config, rng)[0]
