"""Experiment runner and metrics engine.

One experiment pushes benign traffic and attack query streams through a
shared detector in front of a toy victim, then reduces the traces to the
benchmark metrics: attack success rate, k-shot detection rate, mean
detection count, and false positive rate.

Design target for a full-scale deployment of this pipeline (large image
corpora, a tuned dense encoder): ~97%/99% average 3/5-shot detection rate
and a mean detection count near 2.7 across attack families.  The toy-scale
suite asserts the trend (0% attack success, detection within a handful of
queries), not those absolute numbers.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional

import numpy as np

from .attacks import ATTACK_REGISTRY, AttackConfig, AttackTrace, QueryOracle, wrap_oars
from .attacks.adaptive import OarsConfig
from .core import ImageTensor, QueryRecord
from .detector import Detector, DetectorConfig
from .errors import ConfigError
from .target import BlobDataConfig, BlobDataset, TargetModel

K_SHOTS = (3, 5)


@dataclass(frozen=True)
class BenignConfig:
    count: int = 0
    users: int = 10
    seed: int = 9000
    interleave: str = "round-robin"  # or "before": all benign traffic first

    def __post_init__(self):
        if self.count < 0 or self.users < 1:
            raise ConfigError("benign count must be >= 0 and users >= 1")
        if self.interleave not in ("round-robin", "before"):
            raise ConfigError(f"unknown interleave policy {self.interleave!r}")


@dataclass
class ExperimentConfig:
    detector: Optional[DetectorConfig] = None      # None runs undefended
    data: BlobDataConfig = field(default_factory=BlobDataConfig)
    victim_kind: str = "softmax-linear"
    victim_gain: float = 4.5
    attacks: list = field(default_factory=list)    # (name, AttackConfig) pairs
    instances_per_attack: int = 10
    benign: BenignConfig = field(default_factory=BenignConfig)
    seed: int = 1234
    user_split: int = 1                            # >1 spreads queries over fake accounts
    oars: Optional[OarsConfig] = None              # wrap every attack when set
    fresh_detector_per_instance: bool = False      # isolate instances as independent trials

    def __post_init__(self):
        if not self.attacks and self.benign.count == 0:
            raise ConfigError("need at least one attack instance or benign query")
        if self.instances_per_attack < 1:
            raise ConfigError("instances_per_attack must be >= 1")
        if self.user_split < 1:
            raise ConfigError("user_split must be >= 1")


@dataclass
class AttackMetrics:
    attack: str
    instances: int
    asr: float
    k_shot_dr: dict
    mdc: Optional[float]
    detected: int
    undetected: int
    mean_queries: float
    median_queries: float


@dataclass
class MetricsReport:
    per_attack: dict
    fpr: Optional[float]
    benign_total: int
    benign_flagged: int

    def overall_asr(self) -> Optional[float]:
        rates = [m.asr for m in self.per_attack.values()]
        return float(np.mean(rates)) if rates else None


def build_victim(data: BlobDataConfig, kind: str = "softmax-linear",
                 gain: float = 4.5):
    dataset = BlobDataset(data)
    if kind == "softmax-linear":
        victim = TargetModel.nearest_centroid(dataset, gain=gain)
    elif kind == "mlp-1-hidden":
        victim = TargetModel.mlp_centroid(dataset, gain=gain)
    else:
        raise ConfigError(f"unknown victim kind {kind!r}")
    return dataset, victim


def make_victim(cfg: ExperimentConfig):
    return build_victim(cfg.data, cfg.victim_kind, cfg.victim_gain)


def generate_benign_traffic(benign: BenignConfig, dataset: BlobDataset) -> list:
    """Seeded i.i.d. queries from the victim's data distribution."""
    rng = np.random.default_rng(benign.seed)
    records = []
    seqs = {}
    for i in range(benign.count):
        image, _ = dataset.sample(rng)
        user = f"benign-{i % benign.users:03d}"
        seq = seqs.get(user, 0)
        seqs[user] = seq + 1
        records.append(QueryRecord(
            user_id=user, seq=seq, image=image, timestamp_ms=i,
        ))
    return records


class DetectorOracle:
    """Serves attack queries through the detector under a (possibly split) identity.

    Optionally interleaves benign traffic: before every attack query it feeds
    one pending benign record through the same detector.
    """

    def __init__(self, detector: Detector, victim: TargetModel, user_ids,
                 benign_feed=None, benign_verdicts=None, clock_start: int = 0):
        self.detector = detector
        self.victim = victim
        self.user_ids = list(user_ids)
        self._seqs = {u: 0 for u in self.user_ids}
        self._turn = 0
        self._clock = clock_start
        self._benign_feed = benign_feed
        self._benign_verdicts = benign_verdicts

    def __call__(self, arr: np.ndarray):
        if self._benign_feed is not None:
            try:
                record = next(self._benign_feed)
            except StopIteration:
                self._benign_feed = None
            else:
                verdict = self.detector.detect_and_serve(record, self.victim)
                if self._benign_verdicts is not None:
                    self._benign_verdicts.append(verdict)
        user = self.user_ids[self._turn % len(self.user_ids)]
        self._turn += 1
        seq = self._seqs[user]
        self._seqs[user] = seq + 1
        self._clock += 1
        record = QueryRecord(
            user_id=user, seq=seq,
            image=ImageTensor.from_array(arr), timestamp_ms=self._clock,
        )
        verdict = self.detector.detect_and_serve(record, self.victim)
        return (verdict.served_output, verdict.flagged, verdict.score,
                verdict.action_taken)


class PassThroughOracle:
    """Undefended baseline: queries hit the victim directly."""

    def __init__(self, victim: TargetModel):
        self.victim = victim

    def __call__(self, arr: np.ndarray):
        return self.victim.output(arr)


def sample_attack_instance(dataset: BlobDataset, victim: TargetModel,
                           rng: np.random.Generator):
    """A correctly classified (image, label) pair to attack."""
    for _ in range(1000):
        image, label = dataset.sample(rng)
        if victim.predict_label(image) == label:
            return image, label
    raise ConfigError("victim never classifies its own data correctly")


def verify_success(trace: AttackTrace, victim: TargetModel) -> bool:
    """Ground-truth success: within the ball and truly misclassified."""
    if trace.final_image is None:
        return False
    within = bool(np.all(
        np.abs(trace.final_image - trace.clean_image) <= trace.epsilon + 1e-6
    ))
    return within and victim.predict_label(trace.final_image) != trace.label


def run_attack_instance(name: str, attack_cfg: AttackConfig, x, y: int,
                        victim: TargetModel, detector: Optional[Detector],
                        user_ids, benign_feed=None, benign_verdicts=None,
                        oars: Optional[OarsConfig] = None,
                        clock_start: int = 0) -> AttackTrace:
    fn, _, score_based = ATTACK_REGISTRY[name]
    if detector is None:
        serve = PassThroughOracle(victim)
    else:
        serve = DetectorOracle(detector, victim, user_ids,
                               benign_feed=benign_feed,
                               benign_verdicts=benign_verdicts,
                               clock_start=clock_start)
    oracle = QueryOracle(serve, attack_cfg.max_queries,
                         decision_only=not score_based,
                         record_queries=attack_cfg.record_queries)
    if oars is not None:
        trace = wrap_oars(fn, oracle, x, y, attack_cfg, oars_cfg=oars)
    else:
        trace = fn(oracle, x, y, attack_cfg)
    trace.success = verify_success(trace, victim)
    return trace


def run_experiment(cfg: ExperimentConfig):
    """Run every attack instance (and benign traffic) through one detector.

    Returns (report, traces, benign_verdicts).
    """
    dataset, victim = make_victim(cfg)
    detector = Detector(cfg.detector) if cfg.detector is not None else None
    benign_records = generate_benign_traffic(cfg.benign, dataset)
    benign_verdicts: list = []

    if detector is not None and cfg.benign.interleave == "before":
        for record in benign_records:
            benign_verdicts.append(detector.detect_and_serve(record, victim))
        benign_feed = iter(())
    else:
        benign_feed = iter(benign_records)

    rng = np.random.default_rng(cfg.seed)
    traces: list[AttackTrace] = []
    clock = len(benign_records) + 1
    for name, attack_cfg in cfg.attacks:
        for i in range(cfg.instances_per_attack):
            x, y = sample_attack_instance(dataset, victim, rng)
            instance_cfg = replace(attack_cfg, seed=attack_cfg.seed + i)
            if cfg.user_split > 1:
                users = [f"atk-{name}-{i:03d}-{j}" for j in range(cfg.user_split)]
            else:
                users = [f"atk-{name}-{i:03d}"]
            if cfg.fresh_detector_per_instance and cfg.detector is not None:
                detector = Detector(cfg.detector)
            trace = run_attack_instance(
                name, instance_cfg, x, y, victim, detector, users,
                benign_feed=benign_feed if detector is not None else None,
                benign_verdicts=benign_verdicts,
                oars=cfg.oars, clock_start=clock,
            )
            clock += trace.queries_used + 1
            traces.append(trace)

    # drain any benign traffic the attacks did not interleave
    if detector is not None:
        for record in benign_feed:
            benign_verdicts.append(detector.detect_and_serve(record, victim))

    report = compute_metrics(traces, benign_verdicts)
    return report, traces, benign_verdicts


def compute_metrics(traces: Iterable[AttackTrace], benign_verdicts=(),
                    ks=K_SHOTS) -> MetricsReport:
    """Reduce traces to ASR / k-shot DR / mDC and benign verdicts to FPR."""
    by_attack: dict[str, list[AttackTrace]] = {}
    for t in traces:
        by_attack.setdefault(t.attack, []).append(t)

    per_attack = {}
    for name, group in by_attack.items():
        n = len(group)
        successes = sum(1 for t in group if t.success)
        first_flags = [t.first_flag_index for t in group]
        detected = [f for f in first_flags if f is not None]
        k_shot = {
            k: (sum(1 for f in detected if f <= k) / n if n else 0.0) for k in ks
        }
        queries = [t.queries_used for t in group]
        per_attack[name] = AttackMetrics(
            attack=name,
            instances=n,
            asr=successes / n if n else 0.0,
            k_shot_dr=k_shot,
            mdc=float(np.mean(detected)) if detected else None,
            detected=len(detected),
            undetected=n - len(detected),
            mean_queries=float(np.mean(queries)) if queries else 0.0,
            median_queries=float(np.median(queries)) if queries else 0.0,
        )

    benign_verdicts = list(benign_verdicts)
    flagged = sum(1 for v in benign_verdicts if getattr(v, "flagged", v))
    total = len(benign_verdicts)
    return MetricsReport(
        per_attack=per_attack,
        fpr=(flagged / total) if total else None,
        benign_total=total,
        benign_flagged=flagged,
    )


# ---------------------------------------------------------------------------
# trace logs: line-delimited records, one per query, plus a summary line
# ---------------------------------------------------------------------------

def _clean_score(score: float):
    if score is None or math.isinf(score) or math.isnan(score):
        return None
    return float(score)


def write_trace_log(path, trace: AttackTrace) -> None:
    with open(path, "w") as fh:
        fh.write(json.dumps({
            "type": "header", "attack": trace.attack, "epsilon": trace.epsilon,
            "label": trace.label, "init_exempt_until": trace.init_exempt_until,
        }) + "\n")
        for i in range(trace.queries_used):
            fh.write(json.dumps({
                "type": "query", "seq": i + 1,
                "flagged": bool(trace.flags[i]),
                "score": _clean_score(trace.scores[i]),
                "action": trace.actions[i],
            }) + "\n")
        fh.write(json.dumps({
            "type": "summary", "success": bool(trace.success),
            "success_claimed": bool(trace.success_claimed),
            "queries_used": trace.queries_used,
            "first_flag_index": trace.first_flag_index,
            "aborted_reason": trace.aborted_reason,
        }) + "\n")


def read_trace_log(path) -> AttackTrace:
    """Rebuild the metric-relevant view of a trace from its log."""
    header = None
    flags, scores, actions = [], [], []
    summary = None
    with open(path) as fh:
        for line in fh:
            rec = json.loads(line)
            if rec["type"] == "header":
                header = rec
            elif rec["type"] == "query":
                flags.append(rec["flagged"])
                scores.append(rec["score"] if rec["score"] is not None else float("-inf"))
                actions.append(rec["action"])
            else:
                summary = rec
    if header is None or summary is None:
        raise ConfigError(f"malformed trace log {path}")
    trace = AttackTrace(
        attack=header["attack"],
        epsilon=header["epsilon"],
        success=summary["success"],
        success_claimed=summary["success_claimed"],
        queries_used=summary["queries_used"],
        first_flag_index=None,
        flags=flags,
        scores=scores,
        actions=actions,
        label=header["label"],
        init_exempt_until=header["init_exempt_until"],
        aborted_reason=summary["aborted_reason"],
    )
    # recompute rather than trust the summary; they must agree
    ff = next((i + 1 for i, f in enumerate(flags) if f), None)
    if ff != summary["first_flag_index"]:
        raise ConfigError(f"trace log {path} is inconsistent about first_flag_index")
    trace.first_flag_index = ff
    return trace


def similarity_curve_rows(trace: AttackTrace, limit: int = 50) -> list:
    """(query index, max bank similarity) rows for plotting a trace's curve."""
    rows = []
    for i, score in enumerate(trace.scores[:limit]):
        rows.append((i + 1, None if math.isinf(score) else float(score)))
    return rows


def write_similarity_curve(path, trace: AttackTrace, limit: int = 50) -> None:
    with open(path, "w") as fh:
        fh.write("query,max_bank_similarity\n")
        for idx, score in similarity_curve_rows(trace, limit):
            fh.write(f"{idx},{'' if score is None else score}\n")


def report_rows(report: MetricsReport) -> list:
    """Table rows mirroring the benchmark columns (ASR, 3/5-shot DR, mDC)."""
    rows = []
    for name in sorted(report.per_attack):
        m = report.per_attack[name]
        rows.append({
            "attack": name,
            "instances": m.instances,
            "asr": round(m.asr, 4),
            "dr3": round(m.k_shot_dr.get(3, 0.0), 4),
            "dr5": round(m.k_shot_dr.get(5, 0.0), 4),
            "mdc": round(m.mdc, 4) if m.mdc is not None else "",
            "undetected": m.undetected,
            "mean_queries": round(m.mean_queries, 2),
        })
    return rows


def write_report_csv(path, report: MetricsReport) -> None:
    rows = report_rows(report)
    cols = ["attack", "instances", "asr", "dr3", "dr5", "mdc", "undetected",
            "mean_queries"]
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for row in rows:
            fh.write(",".join(str(row[c]) for c in cols) + "\n")
        if report.fpr is not None:
            fh.write(f"# fpr,{report.fpr},benign_total,{report.benign_total}\n")


def format_report(report: MetricsReport) -> str:
    lines = [f"{'attack':<18}{'n':>4}{'ASR':>8}{'3-shot':>9}{'5-shot':>9}"
             f"{'mDC':>8}{'undet':>7}{'queries':>9}"]
    for row in report_rows(report):
        lines.append(
            f"{row['attack']:<18}{row['instances']:>4}{row['asr']:>8.2%}"
            f"{row['dr3']:>9.2%}{row['dr5']:>9.2%}"
            f"{str(row['mdc']):>8}{row['undetected']:>7}{row['mean_queries']:>9}"
        )
    if report.fpr is not None:
        lines.append(f"benign: {report.benign_total} queries, "
                     f"{report.benign_flagged} flagged, FPR {report.fpr:.2%}")
    return "\n".join(lines)
