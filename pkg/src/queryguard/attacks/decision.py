"""Decision-based attacks: they see labels only.

Both start from a random misclassified point, so their early queries are
exempt from the epsilon ball; the exemption boundary is recorded in the
trace.  The first query is always the clean image, for confirmation.
"""

from __future__ import annotations

import numpy as np

from ..errors import AttackInitError, BudgetExhausted
from .base import (
    AttackTrace,
    BoundaryConfig,
    DuplicateConfig,
    HsjaConfig,
    QueryOracle,
    as_array,
    attack_rng,
    finish_trace,
    is_adversarial,
    propose_and_query,
)


def _find_init(oracle: QueryOracle, clean: np.ndarray, y: int, rng,
               max_draws: int) -> np.ndarray:
    """Draw uniform noise images until one is (served as) misclassified."""
    for _ in range(max_draws):
        z = rng.random(clean.shape)
        out = oracle(z)
        if is_adversarial(out, y):
            return z
    raise AttackInitError(f"no adversarial init found in {max_draws} draws")


def attack_boundary(oracle: QueryOracle, x, y: int, cfg: BoundaryConfig) -> AttackTrace:
    """Random walk along the decision boundary, contracting toward the clean image.

    Each step proposes an orthogonal perturbation on the sphere around the
    clean image followed by a contraction; the step is accepted iff the served
    label stays adversarial.  Step sizes adapt to the recent acceptance rate.
    """
    clean = as_array(x)
    rng = attack_rng(cfg, "boundary")
    delta = cfg.delta_init
    contr = cfg.contraction_init
    claimed = False
    exempt = 0
    z = clean
    try:
        out0 = oracle(clean)
        if is_adversarial(out0, y):
            return finish_trace("boundary", oracle, cfg, clean, y, clean, True)
        z = _find_init(oracle, clean, y, rng, cfg.max_init_draws)
        exempt = oracle.n_queries
        window: list[bool] = []
        while True:
            def make_proposal(scale):
                diff = clean - z
                dn = float(np.linalg.norm(diff))
                if dn == 0.0:
                    return clean.copy()
                eta = rng.standard_normal(clean.shape)
                eta -= (float(np.vdot(eta, diff)) / dn**2) * diff
                nrm = float(np.linalg.norm(eta))
                if nrm > 0:
                    eta *= min(delta * scale, cfg.step_ceil) * dn / nrm
                sphere = z + eta
                radial = sphere - clean
                rn = float(np.linalg.norm(radial))
                if rn > 0:
                    sphere = clean + radial * (dn / rn)
                cand = clean + (1.0 - min(contr * scale, cfg.step_ceil)) * (sphere - clean)
                return np.clip(cand, 0.0, 1.0)

            cand, out, _ = propose_and_query(oracle, cfg, make_proposal)
            ok = is_adversarial(out, y)
            window.append(ok)
            if ok:
                z = cand
                if np.max(np.abs(z - clean)) <= cfg.epsilon:
                    claimed = True
                    break
            if len(window) >= cfg.adapt_window:
                rate = sum(window) / len(window)
                factor = cfg.adapt_factor if rate > 0.5 else 1.0 / cfg.adapt_factor
                delta = float(np.clip(delta * factor, cfg.step_floor, cfg.step_ceil))
                contr = float(np.clip(contr * factor, cfg.step_floor, cfg.step_ceil))
                window.clear()
    except BudgetExhausted:
        pass
    except AttackInitError:
        return finish_trace("boundary", oracle, cfg, clean, y, clean, False,
                            init_exempt_until=oracle.n_queries,
                            aborted_reason="no adversarial init")
    return finish_trace("boundary", oracle, cfg, clean, y, z, claimed,
                        init_exempt_until=exempt)


def attack_hsja(oracle: QueryOracle, x, y: int, cfg: HsjaConfig) -> AttackTrace:
    """Bisection to the boundary, Monte-Carlo normal estimate, geometric jump."""
    clean = as_array(x)
    rng = attack_rng(cfg, "hsja")
    claimed = False
    exempt = 0
    z = clean
    try:
        out0 = oracle(clean)
        if is_adversarial(out0, y):
            return finish_trace("hsja", oracle, cfg, clean, y, clean, True)
        z = _find_init(oracle, clean, y, rng, cfg.max_init_draws)
        exempt = oracle.n_queries
        t = 0
        while True:
            t += 1
            # (a) bisect the blend between clean (benign) and z (adversarial)
            lo, hi = 0.0, 1.0
            while hi - lo > cfg.bisect_tol:
                mid = 0.5 * (lo + hi)
                out = oracle(clean + mid * (z - clean))
                if is_adversarial(out, y):
                    hi = mid
                else:
                    lo = mid
            z = clean + hi * (z - clean)
            if np.max(np.abs(z - clean)) <= cfg.epsilon:
                claimed = True
                break
            # (b) estimate the boundary normal from boolean probes
            d2 = float(np.linalg.norm(z - clean))
            direction = np.zeros_like(clean)
            for _ in range(cfg.probe_count):
                u = rng.standard_normal(clean.shape)
                u /= max(float(np.linalg.norm(u)), 1e-12)

                def make_proposal(scale, _u=u):
                    return np.clip(z + min(cfg.probe_radius * scale, d2) * _u, 0.0, 1.0)

                _, out, _ = propose_and_query(oracle, cfg, make_proposal)
                phi = 1.0 if is_adversarial(out, y) else -1.0
                direction += phi * u
            nrm = float(np.linalg.norm(direction))
            if nrm > 0:
                direction /= nrm
            else:
                direction = rng.standard_normal(clean.shape)
                direction /= float(np.linalg.norm(direction))
            # (c) geometric step search along the estimated normal
            zeta = d2 / np.sqrt(t)
            moved = False
            while zeta > cfg.step_floor:
                def make_proposal(scale, _zeta=zeta):
                    return np.clip(z + _zeta * direction, 0.0, 1.0)

                cand, out, _ = propose_and_query(oracle, cfg, make_proposal)
                if is_adversarial(out, y):
                    z = cand
                    moved = True
                    break
                zeta /= 2.0
            if not moved:
                # no usable step this round; the next bisection re-anchors us
                continue
    except BudgetExhausted:
        pass
    except AttackInitError:
        return finish_trace("hsja", oracle, cfg, clean, y, clean, False,
                            init_exempt_until=oracle.n_queries,
                            aborted_reason="no adversarial init")
    return finish_trace("hsja", oracle, cfg, clean, y, z, claimed,
                        init_exempt_until=exempt)


def attack_duplicate(oracle: QueryOracle, x, y: int, cfg: DuplicateConfig) -> AttackTrace:
    """Re-sends the clean image; the canonical instantly-detectable probe."""
    clean = as_array(x)
    try:
        while True:
            oracle(clean)
    except BudgetExhausted:
        pass
    return finish_trace("duplicate", oracle, cfg, clean, y, clean, False)
