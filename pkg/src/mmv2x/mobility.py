"""Beam-sojourn geometry under constant-speed motion, motion-angle
distributions, and the connectivity probability (coverage AND staying
inside the serving beam for the whole slot).

The serving beam is a wedge of width psi at the serving node; the receiver
sits on the bisector at distance x and moves along a random direction.
Folding the direction to [0, pi], angles beyond pi - psi/2 never leave the
wedge; otherwise the exit distance is x sin(psi/2) / sin(theta + psi/2).
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

from . import association, coverage, numerics
from .association import AssociationState, CaseKind, case_probabilities, case_tiers
from .config import TierKind, ValidatedConfig, tier_params

__all__ = [
    "sojourn_v2i",
    "sojourn_v2v",
    "angle_pdfs",
    "connectivity",
    "connectivity_case",
    "total_connectivity",
]


def _check_beam(psi: float, name: str):
    if not 0.0 < psi < math.pi:
        raise ValueError(
            f"{name}: sojourn geometry needs a beamwidth in (0, pi), got {psi}"
        )


def sojourn_v2i(cfg: ValidatedConfig, x):
    """P(stay in the serving BS beam for a whole slot | leaving is
    geometrically possible), as a function of the serving distance.

    Piecewise in x with knots at v*t_s and v*t_s/sin(psi_b/2); equals 1
    beyond the outer knot and for a motionless receiver.
    """
    psi = cfg.beamwidth_bs
    _check_beam(psi, "beamwidth_bs")
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise ValueError("need x > 0")
    reach = cfg.speed * cfg.slot
    if reach == 0.0:
        out = np.ones_like(x)
        return float(out) if out.ndim == 0 else out
    half = 0.5 * psi
    s = np.clip(x * math.sin(half) / reach, 0.0, 1.0)
    arc = np.arcsin(s)
    denom = math.pi - half
    out = np.select(
        [x < reach, x <= reach / math.sin(half)],
        [arc / denom, (2.0 * arc - half) / denom],
        default=1.0,
    )
    out = np.asarray(out)
    return float(out) if out.ndim == 0 else out


def sojourn_v2v(cfg: ValidatedConfig, x, beta):
    """P(stay in the serving vehicle's beam for a whole slot | leaving is
    geometrically possible), given the half-angle difference ``beta`` of
    the two motion directions.

    The relative speed is |2 v cos(beta)|; antiparallel motion at equal
    speed (cos(beta) = 0) never breaks the alignment.
    """
    psi = cfg.beamwidth_vue
    _check_beam(psi, "beamwidth_vue")
    x = np.asarray(x, dtype=float)
    beta = np.asarray(beta, dtype=float)
    if np.any(x <= 0):
        raise ValueError("need x > 0")
    x, beta = np.broadcast_arrays(x, beta)
    reach = 2.0 * cfg.speed * cfg.slot * np.abs(np.cos(beta))
    half = 0.5 * psi
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(reach > 0.0, x * math.sin(half) / np.where(reach > 0, reach, 1.0), np.inf)
    arg = np.arcsin(np.clip(s, 0.0, 1.0))
    denom = (math.pi - half) ** 2
    low = arg * (2.0 * math.pi - psi - arg) / denom
    mid = (half**2 + 2.0 * (math.pi - psi) * arg) / denom
    out = np.select(
        [x < reach, x * math.sin(half) <= reach],
        [low, mid],
        default=1.0,
    )
    out = np.asarray(out)
    return float(out) if out.ndim == 0 else out


def angle_pdfs():
    """Densities of the half-difference and average of two independent
    uniform motion angles: triangular on (-pi, pi) and on (0, 2 pi)."""

    def f_beta(beta):
        beta = np.asarray(beta, dtype=float)
        out = np.where(np.abs(beta) < math.pi, (math.pi - np.abs(beta)) / math.pi**2, 0.0)
        return float(out) if out.ndim == 0 else out

    def f_theta(theta):
        theta = np.asarray(theta, dtype=float)
        out = np.where(
            (theta > 0) & (theta < math.pi), theta / math.pi**2,
            np.where((theta >= math.pi) & (theta < 2 * math.pi),
                     (2 * math.pi - theta) / math.pi**2, 0.0),
        )
        return float(out) if out.ndim == 0 else out

    return f_beta, f_theta


def sojourn_weights(cfg: ValidatedConfig, case: CaseKind):
    """(always-covered weight, conditional weight) of the motion-angle
    split for the case's serving beamwidth."""
    if case is CaseKind.V2I:
        psi = cfg.beamwidth_bs
        w_always = psi / (2.0 * math.pi)
    else:
        psi = cfg.beamwidth_vue
        w_always = (2.0 * math.pi - 0.5 * psi) * (0.5 * psi) / math.pi**2
    return w_always, 1.0 - w_always


@lru_cache(maxsize=64)
def _beta_quad():
    """Fixed composite Gauss grid on (0, pi) for the beta integral."""
    edges = np.linspace(0.0, math.pi, 49)
    nodes, wts = np.polynomial.legendre.leggauss(8)
    mid = 0.5 * (edges[:-1] + edges[1:])[:, None]
    half = 0.5 * (edges[1:] - edges[:-1])[:, None]
    b = (mid + half * nodes[None, :]).ravel()
    w = (half * wts[None, :]).ravel()
    return b, w


def mean_sojourn_over_beta(cfg: ValidatedConfig, x):
    """E_beta[B_v2v(x, beta)] under the triangular half-difference law."""
    f_beta, _ = angle_pdfs()
    b, w = _beta_quad()
    x = np.atleast_1d(np.asarray(x, dtype=float))
    vals = sojourn_v2v(cfg, x[:, None], b[None, :])
    # evenness in beta folds the (-pi, 0) half onto (0, pi)
    out = 2.0 * (vals * (f_beta(b) * w)[None, :]).sum(axis=1)
    return out


def connectivity(cfg: ValidatedConfig, case: CaseKind, kind: TierKind | None,
                 state: AssociationState | None, tau: float) -> float:
    """P(SINR > tau AND the beam alignment survives the slot), conditioned
    on the retrieval case (and, for V2I/V2V, the serving tier and state)."""
    if case is CaseKind.LOCAL:
        return 1.0
    if kind is None or state is None:
        raise ValueError("V2I/V2V connectivity needs a serving tier and state")
    if kind not in case_tiers(case):
        raise ValueError(f"{kind} does not serve {case}")
    a = association.association_probability(cfg, kind, state)
    if a <= 0.0:
        return 0.0
    sc = coverage.sinr_coverage_tier(cfg, kind, state, tau)
    w_always, w_cond = sojourn_weights(cfg, case)
    kernel = coverage.conditional_kernel(cfg, kind, state, tau)
    f_num = association._state_integrand(cfg, kind, state)

    if case is CaseKind.V2I:
        sojourn = lambda x: sojourn_v2i(cfg, x)
        reach = cfg.speed * cfg.slot
        half = 0.5 * cfg.beamwidth_bs
        marks = (reach, reach / math.sin(half)) if reach > 0 else ()
    else:
        sojourn = lambda x: mean_sojourn_over_beta(cfg, x)
        marks = ()

    def integrand(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        ok = x > 0
        if ok.any():
            out[ok] = kernel(x[ok]) * sojourn(x[ok]) * f_num(x[ok])
        return out

    scale = association._char_distance(cfg, kind) * math.sqrt(state.step_index(kind))
    res = numerics.integrate(integrand, 0.0, math.inf, cfg.numerics,
                             breakpoints=marks, scale=scale)
    value = w_always * sc + w_cond * res.value / a
    return min(max(value, 0.0), 1.0)


def _case_connectivity_mass(cfg: ValidatedConfig, case: CaseKind, tau: float) -> float:
    """sum_{k,n,m} P^(n,m) * PC^(n,m) for one case, on the shared grids."""
    w_always, w_cond = sojourn_weights(cfg, case)
    mass = 0.0
    for kind in case_tiers(case):
        if tier_params(cfg, kind).density <= 0.0:
            continue
        x, _ = association._shared_grid(cfg, kind)
        stay = sojourn_v2i(cfg, x) if case is CaseKind.V2I else mean_sojourn_over_beta(cfg, x)
        mass += coverage.case_coverage_mass(
            cfg, case, kind, tau, stay=w_always + w_cond * stay
        )
    return mass


def connectivity_case(cfg: ValidatedConfig, case: CaseKind, tau: float) -> float:
    """Case-conditional connectivity probability."""
    if case is CaseKind.LOCAL:
        return 1.0
    split = case_probabilities(cfg)
    p_case = split.total(case)
    if p_case <= 0.0:
        return 0.0
    return min(max(_case_connectivity_mass(cfg, case, tau) / p_case, 0.0), 1.0)


def total_connectivity(cfg: ValidatedConfig, tau: float) -> float:
    """Average connectivity over the retrieval-case mixture."""
    total = association.cache_hit_probability(cfg)
    for case in (CaseKind.V2I, CaseKind.V2V):
        total += _case_connectivity_mass(cfg, case, tau)
    return min(max(total, 0.0), 1.0)
