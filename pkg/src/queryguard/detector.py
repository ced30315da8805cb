"""The detection pipeline: encode, search the bank, threshold, act, serve.

detect_and_serve is linearizable per bank: the search-then-append runs under
one lock, so two simultaneous first-time duplicates cannot both pass
undetected; one is serialized after the other and flagged.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

from .bank import PER_USER, BankConfig, BankEntry, EmbeddingBank
from .core import Fingerprint, QueryRecord
from .encoders import (
    EXTERNAL,
    PERCEPTUAL_HASH,
    PIXEL_HASH,
    EncoderConfig,
    encode,
    open_external,
)
from .errors import ConfigError, ContractViolation, DetectBatchError, QueryGuardError
from .target import ModelOutput, TargetModel, refusal_output

MODE_THRESHOLD = "threshold"
MODE_KNN_DISTANCE = "knn-distance"

ACTION_REJECT = "reject"
ACTION_RETURN_CACHE = "return-cache"
ACTION_RATE_LIMIT = "rate-limit"
ACTION_PASS_THROUGH = "pass-through"

_ACTIONS = (ACTION_REJECT, ACTION_RETURN_CACHE, ACTION_RATE_LIMIT, ACTION_PASS_THROUGH)

# default similarity thresholds, keyed by encoder variant
_DENSE_THRESHOLD_SMALL = 0.95   # images with side <= 64 px
_DENSE_THRESHOLD_LARGE = 0.90
_WINDOW_HASH_THRESHOLD = 0.95
_PERCEPTUAL_DISTANCE_THRESHOLD = 0.05  # flag when 1 - similarity <= this


@dataclass(frozen=True)
class DetectorConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    bank: BankConfig = field(default_factory=BankConfig)
    threshold: Optional[float] = None
    mode: str = MODE_THRESHOLD
    action: str = ACTION_RETURN_CACHE
    knn_k: int = 50
    knn_threshold: float = 10.0
    append_flagged: bool = True
    append_on_reject: bool = True
    rate_limit_max_flags: int = 3
    rate_limit_window_ms: int = 60_000
    external_dim: Optional[int] = None

    def __post_init__(self):
        if self.mode not in (MODE_THRESHOLD, MODE_KNN_DISTANCE):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.action not in _ACTIONS:
            raise ConfigError(f"unknown action {self.action!r}")
        if self.threshold is not None and not 0.0 < self.threshold <= 1.0:
            raise ConfigError("threshold must lie in (0, 1] for similarity modes")
        if self.mode == MODE_KNN_DISTANCE:
            if self.encoder.variant != EXTERNAL:
                raise ConfigError("knn-distance mode requires the dense (external) encoder")
            if self.bank.scope != PER_USER:
                raise ConfigError("knn-distance mode requires per-user scope")
            if self.knn_k < 1:
                raise ConfigError("knn_k must be >= 1")


@dataclass(frozen=True)
class Verdict:
    """Outcome of one query: flag decision, evidence, action, served output."""

    flagged: bool
    score: float
    matched_entry: Optional[BankEntry]
    action_taken: str
    served_output: ModelOutput


TargetLike = Union[TargetModel, Callable]


def _query_target(target: TargetLike, image) -> ModelOutput:
    if callable(target) and not isinstance(target, TargetModel):
        return target(image)
    return target.output(image)


class Detector:
    """Stateful detector over one shared embedding bank."""

    def __init__(self, config: DetectorConfig):
        self.config = config
        kind = config.encoder.fingerprint_kind
        self.bank = EmbeddingBank(kind, config.bank, dim=config.external_dim)
        self._lock = threading.Lock()
        self._client = None
        if config.encoder.variant == EXTERNAL:
            self._client = open_external(config.encoder, dim=config.external_dim)
        self._threshold: Optional[float] = config.threshold
        self._inclusive = config.encoder.variant == PERCEPTUAL_HASH
        self._last_seq: dict[str, int] = {}
        self._flag_times: dict[str, list[int]] = {}
        self.total_queries = 0
        self.total_flags = 0

    # -- configuration ------------------------------------------------------

    def _resolve_threshold(self, image) -> float:
        if self._threshold is None:
            variant = self.config.encoder.variant
            if variant == PIXEL_HASH:
                self._threshold = _WINDOW_HASH_THRESHOLD
            elif variant == PERCEPTUAL_HASH:
                self._threshold = 1.0 - _PERCEPTUAL_DISTANCE_THRESHOLD
            else:
                self._threshold = (
                    _DENSE_THRESHOLD_SMALL if image.side <= 64
                    else _DENSE_THRESHOLD_LARGE
                )
        return self._threshold

    @property
    def threshold(self) -> Optional[float]:
        return self._threshold

    def fingerprint(self, image) -> Fingerprint:
        return encode(image, self.config.encoder, client=self._client)

    # -- detection ------------------------------------------------------------

    def _check_seq(self, query: QueryRecord):
        last = self._last_seq.get(query.user_id)
        if last is not None and query.seq <= last:
            raise ContractViolation(
                f"seq {query.seq} not increasing for user {query.user_id!r}"
            )
        self._last_seq[query.user_id] = query.seq

    def _rate_limited(self, query: QueryRecord) -> bool:
        times = self._flag_times.get(query.user_id, [])
        window_start = query.timestamp_ms - self.config.rate_limit_window_ms
        recent = [t for t in times if t >= window_start]
        self._flag_times[query.user_id] = recent
        return len(recent) >= self.config.rate_limit_max_flags

    def _decide(self, fp: Fingerprint, query: QueryRecord, mu: float):
        cfg = self.config
        scope_user = query.user_id if cfg.bank.scope == PER_USER else None
        if cfg.mode == MODE_KNN_DISTANCE:
            history = self.bank.user_history_count(query.user_id)
            if history == 0:
                return False, math.inf, None
            dist = self.bank.knn_mean_distance(fp.dense, cfg.knn_k, query.user_id)
            flagged = history >= cfg.knn_k and dist < cfg.knn_threshold
            return flagged, dist, None
        score, matched = self.bank.search_max(fp, scope_user=scope_user)
        if matched is None:
            return False, score, None
        flagged = score >= mu if self._inclusive else score > mu
        return flagged, score, (matched if flagged else None)

    def detect_and_serve(self, query: QueryRecord, target: TargetLike) -> Verdict:
        """Serve one query through the defense; exactly one bank append per call
        (except flagged queries, whose append is configurable)."""
        fp = self.fingerprint(query.image)  # may raise; nothing is consumed then
        mu = self._resolve_threshold(query.image)
        cfg = self.config
        with self._lock:
            self._check_seq(query)
            flagged, score, matched = self._decide(fp, query, mu)
            action = cfg.action
            served: ModelOutput
            cached: Optional[ModelOutput]
            do_append = True

            if action == ACTION_RATE_LIMIT and self._rate_limited(query):
                served = refusal_output()
                cached = None
                action = f"{ACTION_RATE_LIMIT}-reject"
            elif (flagged and action == ACTION_RETURN_CACHE
                  and matched is not None and matched.cached_output is not None):
                served = matched.cached_output
                cached = served
            elif flagged and action == ACTION_REJECT:
                true_out = _query_target(target, query.image)
                served = refusal_output()
                cached = true_out
                do_append = cfg.append_on_reject
            else:
                served = _query_target(target, query.image)
                cached = served

            if flagged:
                self.total_flags += 1
                if action == ACTION_RATE_LIMIT or cfg.action == ACTION_RATE_LIMIT:
                    self._flag_times.setdefault(query.user_id, []).append(
                        query.timestamp_ms
                    )
                if not cfg.append_flagged:
                    do_append = False

            if do_append:
                self.bank.append(BankEntry(
                    fingerprint=fp,
                    user_id=query.user_id,
                    seq=query.seq,
                    cached_output=cached,
                ))
            self.total_queries += 1
            return Verdict(
                flagged=flagged,
                score=score,
                matched_entry=matched,
                action_taken=action,
                served_output=served,
            )

    def detect_batch(self, queries, target: TargetLike) -> list:
        """Fold of detect_and_serve in arrival order."""
        verdicts = []
        for q in queries:
            try:
                verdicts.append(self.detect_and_serve(q, target))
            except QueryGuardError as exc:
                raise DetectBatchError(
                    f"query {len(verdicts)} failed: {exc}", partial=verdicts
                ) from exc
        return verdicts

    def close(self):
        if self._client is not None:
            self._client.close()
            self._client = None
