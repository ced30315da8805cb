"""Shared attack infrastructure: configs, traces, and the query oracle.

Attacks operate on plain float arrays and see the target only through a
QueryOracle, which counts every call, enforces the budget, and records the
detector's verdict stream when one is attached.  Each attack owns its RNG,
so a fixed seed reproduces the trace bit for bit.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ..core import ImageTensor
from ..errors import BudgetExhausted, ContractViolation
from ..target import ModelOutput, is_refusal


def attack_rng(cfg: "AttackConfig", name: str) -> np.random.Generator:
    """Per-attack RNG: the seed stream is decorrelated by the attack's name,
    so attacks sharing a numeric seed do not replay each other's draws."""
    return np.random.default_rng([cfg.seed, zlib.crc32(name.encode())])


@dataclass
class AttackConfig:
    epsilon: float = 0.05
    max_queries: int = 10_000
    seed: int = 0
    record_queries: bool = False
    oars: Optional[object] = None  # adaptive wrapper controller, set by wrap_oars

    def __post_init__(self):
        if self.epsilon < 0:
            raise ContractViolation("epsilon must be >= 0")
        if self.max_queries < 1:
            raise ContractViolation("max_queries must be >= 1")


@dataclass
class ZooConfig(AttackConfig):
    """Coordinate-wise finite differences with a sign update."""

    fd_step: float = 1e-4
    step_size: float = 0.01
    coords_per_step: int = 8
    stall_limit: int = 10


@dataclass
class NesConfig(AttackConfig):
    """Antithetic Gaussian sampling for gradient estimation."""

    sigma: float = 1e-4
    step_size: float = 0.01
    population: int = 24  # total samples per step; pairs = population // 2
    stall_limit: int = 10


@dataclass
class SquareConfig(AttackConfig):
    """Random square patches at +-epsilon, accepted on strict loss decrease."""

    p_init: float = 0.007
    n_halvings: int = 1
    reject_streak_limit: int = 800


@dataclass
class BoundaryConfig(AttackConfig):
    """Decision-based random walk along the boundary toward the clean image."""

    delta_init: float = 5e-4
    contraction_init: float = 5e-4
    adapt_window: int = 10
    adapt_factor: float = 1.3
    step_floor: float = 1e-7
    step_ceil: float = 0.5
    max_init_draws: int = 1000


@dataclass
class HsjaConfig(AttackConfig):
    """Decision-based: bisect to the boundary, estimate its normal, jump."""

    bisect_tol: float = 0.05
    probe_count: int = 16
    probe_radius: float = 0.002
    step_floor: float = 1e-6
    max_init_draws: int = 1000


@dataclass
class DuplicateConfig(AttackConfig):
    """Degenerate probe that re-sends the clean image; max_queries bounds it."""

    max_queries: int = 5


@dataclass
class WhiteboxEncoderConfig(AttackConfig):
    """Alternating black-box victim step and white-box anti-similarity PGD."""

    pgd_steps: int = 10
    pgd_step_size: float = 0.02
    pgd_floor: float = 1e-5
    curve_length: int = 50


@dataclass
class AttackTrace:
    """What one attack run produced, aligned with the detector's view of it."""

    attack: str
    epsilon: float
    success: bool
    success_claimed: bool
    queries_used: int
    first_flag_index: Optional[int]      # 1-based query count at first flag
    flags: list = field(default_factory=list)
    scores: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    clean_image: Optional[np.ndarray] = None
    final_image: Optional[np.ndarray] = None
    label: int = -1
    init_exempt_until: int = 0           # queries before this index may leave the ball
    aborted_reason: Optional[str] = None
    queries: Optional[list] = None       # retained only when record_queries is set
    outputs: Optional[list] = None

    @property
    def flagged_fraction(self) -> float:
        if not self.flags:
            return 0.0
        return sum(self.flags) / len(self.flags)


class QueryOracle:
    """Counting, budget-enforcing front door to the target (or detector)."""

    def __init__(self, serve_fn: Callable, max_queries: int,
                 decision_only: bool = False, record_queries: bool = False):
        self.serve_fn = serve_fn
        self.max_queries = max_queries
        self.decision_only = decision_only
        self.record_queries = record_queries
        self.n_queries = 0
        self.flags: list[bool] = []
        self.scores: list[float] = []
        self.actions: list[str] = []
        self.queries: list[np.ndarray] = [] if record_queries else None
        self.outputs: list[ModelOutput] = [] if record_queries else None
        self.observer = None  # hook used by the adaptive-attack wrapper

    @property
    def first_flag_index(self) -> Optional[int]:
        for i, f in enumerate(self.flags):
            if f:
                return i + 1
        return None

    def __call__(self, arr: np.ndarray) -> ModelOutput:
        if self.n_queries >= self.max_queries:
            raise BudgetExhausted(f"budget of {self.max_queries} queries spent")
        self.n_queries += 1
        result = self.serve_fn(arr)
        if isinstance(result, tuple):
            out, flagged, score, action = result
        else:
            out, flagged, score, action = result, False, float("-inf"), "none"
        self.flags.append(bool(flagged))
        self.scores.append(float(score))
        self.actions.append(action)
        if self.record_queries:
            self.queries.append(np.array(arr, copy=True))
            self.outputs.append(out)
        if self.decision_only and out.probs is not None:
            out = out.label_only()
        if self.observer is not None:
            self.observer(arr, out)
        return out


def as_array(x) -> np.ndarray:
    if isinstance(x, ImageTensor):
        return np.array(x.data, dtype=np.float64)
    return np.asarray(x, dtype=np.float64)


def project_ball(arr: np.ndarray, clean: np.ndarray, epsilon: float) -> np.ndarray:
    """Clip into the epsilon L-infinity ball around clean, then into [0,1]."""
    return np.clip(np.clip(arr, clean - epsilon, clean + epsilon), 0.0, 1.0)


def ce_loss(out: ModelOutput, y: int) -> Optional[float]:
    """Cross-entropy of the served probabilities; None when refused/label-only."""
    if is_refusal(out) or out.probs is None:
        return None
    return -float(np.log(max(float(out.probs[y]), 1e-300)))


def margin_loss(out: ModelOutput, y: int) -> Optional[float]:
    """f_y - max_{c != y} f_c over the served probabilities."""
    if is_refusal(out) or out.probs is None:
        return None
    p = out.probs
    rival = np.max(np.delete(p, y))
    return float(p[y] - rival)


def is_adversarial(out: ModelOutput, y: int) -> bool:
    """Served-output view: refusals conservatively count as not adversarial."""
    return (not is_refusal(out)) and out.label != y


def scaled(base: float, cfg: AttackConfig, cap: Optional[float] = None) -> float:
    """Apply the adaptive wrapper's scale to a knob, clamped to a cap."""
    ctrl = getattr(cfg, "oars", None)
    value = base * (ctrl.scale if ctrl is not None else 1.0)
    if cap is not None:
        value = min(value, cap)
    return value


def propose_and_query(oracle: QueryOracle, cfg: AttackConfig, make_proposal):
    """Issue one proposal query, letting the adaptive wrapper resample it.

    make_proposal(scale) must draw any randomness from the attack's RNG so
    the unwrapped path and a wrapper that never fires produce identical
    query streams.  Returns (array, output, stuck).
    """
    ctrl = getattr(cfg, "oars", None)
    if ctrl is None:
        arr = make_proposal(1.0)
        return arr, oracle(arr), False
    return ctrl.query_proposal(oracle, make_proposal)


def finish_trace(name: str, oracle: QueryOracle, cfg: AttackConfig,
                 clean: np.ndarray, y: int, final_image: np.ndarray,
                 success_claimed: bool, init_exempt_until: int = 0,
                 aborted_reason: Optional[str] = None) -> AttackTrace:
    within = bool(np.all(np.abs(final_image - clean) <= cfg.epsilon + 1e-6))
    return AttackTrace(
        attack=name,
        epsilon=cfg.epsilon,
        success=success_claimed and within,
        success_claimed=success_claimed,
        queries_used=oracle.n_queries,
        first_flag_index=oracle.first_flag_index,
        flags=list(oracle.flags),
        scores=list(oracle.scores),
        actions=list(oracle.actions),
        clean_image=np.array(clean, copy=True),
        final_image=np.array(final_image, copy=True),
        label=y,
        init_exempt_until=init_exempt_until,
        aborted_reason=aborted_reason,
        queries=oracle.queries,
        outputs=oracle.outputs,
    )
