"""Detection-rate vs false-positive-rate trade-off under Gaussian assumptions.

Benign queries are drawn from an isotropic Gaussian around a center point and
adversarial perturbations from a zero-mean Gaussian; for a grid of
thresholds the detection rate is the fraction of perturbed pairs whose
embedding similarity clears the threshold, the false positive rate the same
fraction over independent benign pairs.  Monte Carlo, sharded with fixed
per-shard seeds so results merge deterministically at any shard size.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError

_SHARD = 100_000


def default_threshold_grid() -> np.ndarray:
    return np.round(np.arange(-1.0, 1.0001, 0.05), 10)


@dataclass(frozen=True)
class TradeoffConfig:
    dim: int = 64
    sigma: float = 1.0          # benign spread
    beta: float = 0.1           # perturbation spread
    samples: int = 100_000
    thresholds: np.ndarray = field(default_factory=default_threshold_grid)
    center: float = 0.0         # all-coordinates value of the benign mean
    encoder: Optional[Callable] = None  # rows -> rows; None = identity
    seed: int = 2024

    def __post_init__(self):
        if self.sigma <= 0 or self.beta < 0:
            raise ConfigError("sigma must be > 0 and beta >= 0")
        if self.samples < 1000:
            raise ConfigError("need at least 1e3 Monte Carlo samples")


@dataclass(frozen=True)
class TradeoffPoint:
    mu: float
    alpha_det: float
    alpha_fp: float


def _rowwise_cosine(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    num = np.einsum("ij,ij->i", a, b)
    den = np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1)
    den = np.where(den == 0.0, 1.0, den)
    return num / den


def tradeoff_curve(cfg: TradeoffConfig) -> list:
    """(mu, alpha_det, alpha_fp) for each threshold in the grid.

    alpha_det = P[sim(E(x), E(x + delta)) >= mu], x ~ N(center, I sigma^2),
    delta ~ N(0, I beta^2); alpha_fp is the same probability over two
    independent benign draws.  Both use the inclusive comparison.
    """
    encode = cfg.encoder or (lambda rows: rows)
    mus = np.asarray(cfg.thresholds, dtype=np.float64)
    det_hits = np.zeros(mus.size, dtype=np.int64)
    fp_hits = np.zeros(mus.size, dtype=np.int64)
    remaining = cfg.samples
    shard_index = 0
    while remaining > 0:
        n = min(_SHARD, remaining)
        rng = np.random.default_rng((cfg.seed, shard_index))
        x = cfg.center + cfg.sigma * rng.standard_normal((n, cfg.dim))
        delta = cfg.beta * rng.standard_normal((n, cfg.dim))
        x1 = cfg.center + cfg.sigma * rng.standard_normal((n, cfg.dim))
        x2 = cfg.center + cfg.sigma * rng.standard_normal((n, cfg.dim))
        det_sims = _rowwise_cosine(encode(x), encode(x + delta))
        fp_sims = _rowwise_cosine(encode(x1), encode(x2))
        det_hits += (det_sims[None, :] >= mus[:, None]).sum(axis=1)
        fp_hits += (fp_sims[None, :] >= mus[:, None]).sum(axis=1)
        remaining -= n
        shard_index += 1
    return [
        TradeoffPoint(float(mu), det_hits[i] / cfg.samples, fp_hits[i] / cfg.samples)
        for i, mu in enumerate(mus)
    ]


def curve_to_csv(points, path) -> None:
    with open(path, "w") as fh:
        fh.write("mu,alpha_det,alpha_fp\n")
        for p in points:
            fh.write(f"{p.mu},{p.alpha_det},{p.alpha_fp}\n")
