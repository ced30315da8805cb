"""Adaptive attack strategies: the rejection-resampling wrapper and the
white-box encoder attack.

The wrapper watches the served outputs for detection feedback: an explicit
refusal, or a cache echo (a served score vector bitwise equal to one served
earlier for a different query).  On feedback it grows the inner attack's
perturbation scale and resamples the rejected proposal; on clean queries the
scale anneals back toward the inner attack's own schedule.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from ..errors import BudgetExhausted
from ..target import ModelOutput, is_refusal
from .base import (
    AttackConfig,
    AttackTrace,
    QueryOracle,
    WhiteboxEncoderConfig,
    as_array,
    attack_rng,
    finish_trace,
    is_adversarial,
    margin_loss,
    project_ball,
)


@dataclass
class OarsConfig:
    growth: float = 1.5        # scale multiplier per detection feedback
    max_resamples: int = 10    # proposal redraws before a step counts as stuck
    anneal: float = 0.9        # pull of the scale back toward 1 on clean queries
    max_scale: float = 1e6     # attacks clamp their own knobs at epsilon anyway


class OarsController:
    """Shared state between the wrapper and the inner attack's proposal sites."""

    def __init__(self, cfg: OarsConfig):
        self.cfg = cfg
        self.scale = 1.0
        self.feedback_events = 0
        self.stuck_steps = 0
        self._seen: set[bytes] = set()
        self._last_feedback = False

    # -- feedback detection ---------------------------------------------------

    def observe(self, arr: np.ndarray, out: ModelOutput) -> bool:
        """Record a served output; returns True when it smells like detection."""
        if is_refusal(out):
            self._last_feedback = True
            self.feedback_events += 1
            return True
        feedback = False
        if out.probs is not None:
            key = np.asarray(out.probs, dtype=np.float64).tobytes()
            if key in self._seen:
                feedback = True
                self.feedback_events += 1
            else:
                self._seen.add(key)
        self._last_feedback = feedback
        return feedback

    # -- proposal loop ----------------------------------------------------------

    def query_proposal(self, oracle: QueryOracle, make_proposal: Callable):
        """Query a proposal, resampling at a grown scale on detection feedback."""
        attempts = 0
        while True:
            arr = make_proposal(self.scale)
            out = oracle(arr)
            if not self._last_feedback:
                self.scale = max(1.0, self.scale * self.cfg.anneal)
                return arr, out, False
            self.scale = min(self.scale * self.cfg.growth, self.cfg.max_scale)
            attempts += 1
            if attempts > self.cfg.max_resamples:
                self.stuck_steps += 1
                return arr, out, True


def wrap_oars(inner_attack: Callable, oracle: QueryOracle, x, y: int,
              cfg: AttackConfig, oars_cfg: Optional[OarsConfig] = None) -> AttackTrace:
    """Run an attack with the adaptive evasion wrapper attached.

    If no detection feedback ever fires, the scale stays at 1 and the only
    proposal drawn per step is the first, so the trace equals the unwrapped
    attack's bit for bit.
    """
    ctrl = OarsController(oars_cfg or OarsConfig())
    oracle.observer = ctrl.observe
    try:
        trace = inner_attack(oracle, x, y, replace(cfg, oars=ctrl))
    finally:
        oracle.observer = None
    trace.attack = f"{trace.attack}-oars"
    if ctrl.stuck_steps and trace.aborted_reason is None:
        trace.aborted_reason = f"{ctrl.stuck_steps} detected-and-stuck steps"
    return trace


def attack_whitebox_encoder(encoder, oracle: QueryOracle, x, y: int,
                            cfg: WhiteboxEncoderConfig) -> AttackTrace:
    """Alternate one black-box victim query with white-box anti-similarity PGD.

    Each candidate is pushed away (in the encoder's embedding space) from the
    previous query before being issued, under the epsilon-ball constraint.
    The PGD inner loop only keeps steps that strictly decrease the cosine
    similarity and terminates when no such step remains.
    """
    clean = as_array(x)
    h, w, c = clean.shape
    rng = attack_rng(cfg, "whitebox-encoder")
    x_adv = clean.copy()
    claimed = False
    try:
        out0 = oracle(clean)
        if is_adversarial(out0, y):
            return finish_trace("whitebox-encoder", oracle, cfg, clean, y, clean, True)
        prev_embedding = np.asarray(encoder.embed_array(clean), dtype=np.float64)
        base = oracle(x_adv)
        best_margin = margin_loss(base, y)
        if best_margin is None:
            best_margin = np.inf
        while not claimed:
            # one black-box step: a random square candidate
            side = max(1, min(2, min(h, w)))
            r = int(rng.integers(0, h - side + 1))
            col = int(rng.integers(0, w - side + 1))
            signs = rng.choice([-1.0, 1.0], size=c)
            cand = x_adv.copy()
            cand[r:r + side, col:col + side, :] = np.clip(
                clean[r:r + side, col:col + side, :] + signs * cfg.epsilon, 0.0, 1.0
            )
            # white-box PGD: minimize similarity to the previous query
            step = cfg.pgd_step_size
            sim, grad = encoder.cosine_and_grad(cand, prev_embedding)
            for _ in range(cfg.pgd_steps):
                if step < cfg.pgd_floor:
                    break
                gnorm = float(np.linalg.norm(grad))
                if gnorm == 0.0:
                    break
                proposal = project_ball(cand - step * grad / gnorm, clean, cfg.epsilon)
                new_sim, new_grad = encoder.cosine_and_grad(proposal, prev_embedding)
                if new_sim < sim:
                    cand, sim, grad = proposal, new_sim, new_grad
                else:
                    step *= 0.5
            out = oracle(cand)
            prev_embedding = np.asarray(encoder.embed_array(cand), dtype=np.float64)
            if is_adversarial(out, y):
                x_adv = cand
                claimed = True
                break
            m = margin_loss(out, y)
            if m is not None and m < best_margin:
                best_margin = m
                x_adv = cand
    except BudgetExhausted:
        pass
    return finish_trace("whitebox-encoder", oracle, cfg, clean, y, x_adv, claimed)
