"""Score-based attacks: finite differences, evolutionary sampling, random squares.

All three start by confirming the clean label, then evaluate their starting
point through the oracle before optimizing, so the first two queries a
defender sees are the clean image twice.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from ..errors import BudgetExhausted
from .base import (
    AttackTrace,
    NesConfig,
    QueryOracle,
    SquareConfig,
    ZooConfig,
    as_array,
    attack_rng,
    ce_loss,
    finish_trace,
    is_adversarial,
    margin_loss,
    project_ball,
    propose_and_query,
    scaled,
)


def attack_zoo(oracle: QueryOracle, x, y: int, cfg: ZooConfig) -> AttackTrace:
    """Coordinate-wise symmetric finite differences, update x' += eta * sign(g)."""
    clean = as_array(x)
    rng = attack_rng(cfg, "zoo")
    x_adv = clean.copy()
    best = clean.copy()
    claimed = False
    aborted = None
    stalled = 0
    dim = clean.size
    try:
        out0 = oracle(clean)
        if is_adversarial(out0, y):
            return finish_trace("zoo", oracle, cfg, clean, y, clean, True)
        oracle(x_adv)  # baseline loss at the starting point
        if cfg.epsilon == 0:
            return finish_trace("zoo", oracle, cfg, clean, y, clean, False,
                                aborted_reason="zero budget")
        while not claimed:
            coords = rng.choice(dim, size=min(cfg.coords_per_step, dim), replace=False)
            grad = np.zeros(dim)
            h = scaled(cfg.fd_step, cfg, cap=cfg.epsilon)
            for c in coords:
                losses = []
                for sign in (1.0, -1.0):
                    def make_proposal(scale, _c=c, _s=sign):
                        probe = x_adv.reshape(-1).copy()
                        probe[_c] += _s * min(cfg.fd_step * scale, cfg.epsilon)
                        return project_ball(probe.reshape(clean.shape), clean, cfg.epsilon)

                    arr, out, _ = propose_and_query(oracle, cfg, make_proposal)
                    if is_adversarial(out, y):
                        best = arr
                        claimed = True
                    losses.append(ce_loss(out, y))
                if claimed:
                    break
                if losses[0] is not None and losses[1] is not None:
                    grad[c] = (losses[0] - losses[1]) / (2.0 * h)
            if claimed:
                break
            if not np.any(grad):
                stalled += 1
                if stalled >= cfg.stall_limit:
                    aborted = "stalled"
                    break
                continue
            stalled = 0
            eta = scaled(cfg.step_size, cfg, cap=cfg.epsilon)
            x_adv = project_ball(
                x_adv + eta * np.sign(grad).reshape(clean.shape), clean, cfg.epsilon
            )
    except BudgetExhausted:
        pass
    final = best if claimed else x_adv
    return finish_trace("zoo", oracle, cfg, clean, y, final, claimed,
                        aborted_reason=aborted)


def nes_gradient(loss_fn: Callable, x: np.ndarray, sigma: float, n_pairs: int,
                 rng: np.random.Generator) -> np.ndarray:
    """Antithetic NES estimate of grad loss(x); loss_fn may return None (no info)."""
    grad = np.zeros_like(x, dtype=np.float64)
    for _ in range(n_pairs):
        u = rng.standard_normal(x.shape)
        lp = loss_fn(x + sigma * u)
        lm = loss_fn(x - sigma * u)
        if lp is None or lm is None:
            continue
        grad += (lp - lm) * u
    return grad / (2.0 * sigma * n_pairs)


def attack_nes(oracle: QueryOracle, x, y: int, cfg: NesConfig) -> AttackTrace:
    """Natural-evolution-strategies gradient estimate with a sign update."""
    clean = as_array(x)
    rng = attack_rng(cfg, "nes")
    x_adv = clean.copy()
    best = clean.copy()
    claimed = False
    aborted = None
    stalled = 0
    n_pairs = max(1, cfg.population // 2)
    try:
        out0 = oracle(clean)
        if is_adversarial(out0, y):
            return finish_trace("nes", oracle, cfg, clean, y, clean, True)
        if cfg.epsilon == 0:
            oracle(x_adv)
            return finish_trace("nes", oracle, cfg, clean, y, clean, False,
                                aborted_reason="zero budget")
        while not claimed:
            center = oracle(x_adv)  # progress monitor at the current iterate
            if is_adversarial(center, y):
                best = x_adv.copy()
                claimed = True
                break
            sigma = scaled(cfg.sigma, cfg, cap=cfg.epsilon)
            grad = np.zeros_like(clean)
            for _ in range(n_pairs):
                u = rng.standard_normal(clean.shape)
                pair = []
                for sign in (1.0, -1.0):
                    def make_proposal(scale, _u=u, _s=sign):
                        s = min(cfg.sigma * scale, cfg.epsilon)
                        return project_ball(x_adv + _s * s * _u, clean, cfg.epsilon)

                    arr, out, _ = propose_and_query(oracle, cfg, make_proposal)
                    if is_adversarial(out, y):
                        best = arr
                        claimed = True
                    pair.append(ce_loss(out, y))
                if claimed:
                    break
                if pair[0] is not None and pair[1] is not None:
                    grad += (pair[0] - pair[1]) * u
            if claimed:
                break
            grad /= 2.0 * sigma * n_pairs
            if not np.any(np.sign(grad)):
                stalled += 1
                if stalled >= cfg.stall_limit:
                    aborted = "stalled"
                    break
                continue
            stalled = 0
            eta = scaled(cfg.step_size, cfg, cap=cfg.epsilon)
            x_adv = project_ball(x_adv + eta * np.sign(grad), clean, cfg.epsilon)
    except BudgetExhausted:
        pass
    final = best if claimed else x_adv
    return finish_trace("nes", oracle, cfg, clean, y, final, claimed,
                        aborted_reason=aborted)


def square_side(t_fraction: float, height: int, width: int, p_init: float,
                n_halvings: int) -> int:
    """Halving schedule: the patch area fraction halves n times over the budget."""
    level = min(n_halvings, int(t_fraction * (n_halvings + 1)))
    p = p_init * (0.5 ** level)
    side = int(round(np.sqrt(p * height * width)))
    return max(1, min(side, min(height, width)))


def attack_square(oracle: QueryOracle, x, y: int, cfg: SquareConfig) -> AttackTrace:
    """Random square perturbations at +-epsilon, kept on strict margin decrease."""
    clean = as_array(x)
    h, w, c = clean.shape
    rng = attack_rng(cfg, "square")
    x_adv = clean.copy()
    best_img = clean.copy()
    claimed = False
    aborted = None
    streak = 0
    try:
        out0 = oracle(clean)
        if is_adversarial(out0, y):
            return finish_trace("square", oracle, cfg, clean, y, clean, True)
        base = oracle(x_adv)
        best_margin = margin_loss(base, y)
        if best_margin is None:
            best_margin = np.inf
        if cfg.epsilon == 0:
            return finish_trace("square", oracle, cfg, clean, y, clean, False,
                                aborted_reason="zero budget")
        t = 0
        while not claimed:
            frac = oracle.n_queries / cfg.max_queries
            side = square_side(frac, h, w, cfg.p_init, cfg.n_halvings)

            def make_proposal(scale):
                s = max(1, min(int(round(side * scale)), min(h, w)))
                r = int(rng.integers(0, h - s + 1))
                col = int(rng.integers(0, w - s + 1))
                signs = rng.choice([-1.0, 1.0], size=c)
                cand = x_adv.copy()
                cand[r:r + s, col:col + s, :] = np.clip(
                    clean[r:r + s, col:col + s, :] + signs * cfg.epsilon, 0.0, 1.0
                )
                return cand

            arr, out, _ = propose_and_query(oracle, cfg, make_proposal)
            if is_adversarial(out, y):
                best_img = arr
                claimed = True
                break
            m = margin_loss(out, y)
            if m is not None and m < best_margin:
                best_margin = m
                x_adv = arr
                streak = 0
            else:
                streak += 1
                if streak >= cfg.reject_streak_limit:
                    aborted = "rejection streak"
                    break
            t += 1
    except BudgetExhausted:
        pass
    final = best_img if claimed else x_adv
    return finish_trace("square", oracle, cfg, clean, y, final, claimed,
                        aborted_reason=aborted)
