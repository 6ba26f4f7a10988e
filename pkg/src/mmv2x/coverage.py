"""Interference Laplace functional, SINR coverage, load, and rate coverage.

Coverage conditions the interference field on what the serving state
implies: all of the serving node's power rivals are cache-missing
vehicles, every tier's field beyond its equal-power distance is untouched
Poisson, and the walked-past rivals sit i.i.d. inside it.  That splits the
interference transform into per-tier exclusion-zone tails plus per-rival
suppression factors, all of which reduce to one radial quadrature per
tier.  Setting ``interference_unconditional`` in the config falls back to
the plain unconditioned functional L_I (the coarser classical shortcut).

Per-case totals exchange the (n, m) state sum with the serving-distance
integral; the Poisson convolution identity collapses the double sum into
a short geometric-Poisson recursion that is exactly the truncated family.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
from scipy.interpolate import CubicSpline

from . import association, numerics, propagation
from .association import AssociationState, CaseKind, case_probabilities, case_tiers
from .config import ALL_TIERS, TierKind, ValidatedConfig, tier_params

__all__ = [
    "DivergenceError",
    "w_integral",
    "laplace_interference",
    "sinr_coverage_tier",
    "sinr_coverage_case",
    "total_sinr_coverage",
    "load",
    "rate_coverage",
    "total_rate_coverage",
]

_LN_ETA_LO = math.log(1e-24)
_LN_ETA_HI = math.log(1e36)


class DivergenceError(ValueError):
    """A radial interference integral has no finite value as posed."""


def _check_w_convergence(cfg: ValidatedConfig, kind: TierKind):
    t = tier_params(cfg, kind)
    if not kind.is_los and t.zeta == 0.0 and t.alpha <= 2.0:
        raise DivergenceError(
            f"W integral diverges for {kind} with zeta=0 and alpha<=2; "
            "use zeta > 0 or truncate at the r_max policy radius"
        )


def _w_integrand(cfg: ValidatedConfig, kind: TierKind, eta: float):
    t = tier_params(cfg, kind)

    def integrand(r):
        r = np.asarray(r, dtype=float)
        p = propagation.los_factor(cfg, kind, r)
        with np.errstate(over="ignore"):
            growth = r**t.alpha * np.exp(t.zeta * r) / eta
        return r * p / (1.0 + growth)

    return integrand


def w_integral(cfg: ValidatedConfig, kind: TierKind, eta: float) -> float:
    """Radial interference moment W_k(alpha, zeta, eta) of one tier.

    Monotone increasing in eta; eta -> 0 gives 0.
    """
    if eta < 0:
        raise ValueError("eta must be nonnegative")
    if eta == 0.0:
        return 0.0
    _check_w_convergence(cfg, kind)
    t = tier_params(cfg, kind)
    scale = max(1e-3, min(eta ** (1.0 / t.alpha), 1e6))
    marks = [1.0 / t.blockage]
    if t.zeta > 0:
        marks.append(1.0 / t.zeta)
    res = numerics.integrate(
        _w_integrand(cfg, kind, eta), 0.0, math.inf, cfg.numerics,
        breakpoints=tuple(marks), scale=scale,
    )
    return res.value


@lru_cache(maxsize=64)
def _w_spline(cfg: ValidatedConfig, kind: TierKind):
    """Cached log-log spline of eta -> W_k(eta) over a wide eta range.

    Outside the table the spline is continued linearly in log-log, which
    matches the power-law limits at both ends.
    """
    _check_w_convergence(cfg, kind)
    t = tier_params(cfg, kind)
    n_pts = int((_LN_ETA_HI - _LN_ETA_LO) / math.log(10.0) * 30.0)
    ln_eta = np.linspace(_LN_ETA_LO, _LN_ETA_HI, n_pts)
    eta = np.exp(ln_eta)

    # One shared radial grid integrates all eta values at once; panel edges
    # are geometric near zero so the knee at r ~ eta^(1/alpha) is resolved
    # for every table entry.
    edges = np.concatenate([
        [0.0], np.geomspace(1e-12, 1e-2, 48), np.linspace(1e-2, 1.0, 161)[1:]
    ])
    nodes, wts = np.polynomial.legendre.leggauss(16)
    a_e, b_e = edges[:-1], edges[1:]
    mid = 0.5 * (a_e + b_e)[:, None]
    half = 0.5 * (b_e - a_e)[:, None]
    tt = (mid + half * nodes[None, :]).ravel()
    ww = (half * wts[None, :]).ravel()
    s = 100.0
    r = s * tt / (1.0 - tt)
    jac = s / (1.0 - tt) ** 2
    p = propagation.los_factor(cfg, kind, r)
    base = r * p * ww * jac
    with np.errstate(over="ignore"):
        growth = r**t.alpha * np.exp(t.zeta * r)
    vals = np.empty_like(eta)
    for i0 in range(0, len(eta), 512):  # chunked to bound the broadcast size
        sl = slice(i0, i0 + 512)
        with np.errstate(over="ignore"):
            denom = 1.0 + growth[None, :] / eta[sl, None]
        vals[sl] = (base[None, :] / denom).sum(axis=1)
    ln_w = np.log(vals)
    spline = CubicSpline(ln_eta, ln_w)
    slope_lo = float(spline(ln_eta[0], 1))
    slope_hi = float(spline(ln_eta[-1], 1))
    return spline, slope_lo, slope_hi


def _w_eval(cfg: ValidatedConfig, kind: TierKind, eta):
    """Vectorized W_k via the cached spline (linear log-log continuation)."""
    spline, slope_lo, slope_hi = _w_spline(cfg, kind)
    eta = np.asarray(eta, dtype=float)
    out = np.zeros_like(eta)
    pos = eta > 0
    with np.errstate(divide="ignore"):
        ln = np.where(pos, np.log(np.where(pos, eta, 1.0)), 0.0)
    clipped = np.clip(ln, _LN_ETA_LO, _LN_ETA_HI)
    ln_w = spline(clipped)
    ln_w = ln_w + np.where(ln < _LN_ETA_LO, slope_lo * (ln - _LN_ETA_LO), 0.0)
    ln_w = ln_w + np.where(ln > _LN_ETA_HI, slope_hi * (ln - _LN_ETA_HI), 0.0)
    out[pos] = np.exp(ln_w[pos])
    return out


def _laplace_exponent(cfg: ValidatedConfig, s, exact: bool = False):
    """Sum of 2 pi lambda_k sum_i p_i W_k over tiers and gain outcomes."""
    s = np.asarray(s, dtype=float)
    expo = np.zeros_like(s)
    for kind in ALL_TIERS:
        t = tier_params(cfg, kind)
        gains, probs = propagation.gain_arrays(cfg, t.tx_class)
        for g, p in zip(gains, probs):
            eta = s * t.ptx * g
            if exact:
                w = np.array([w_integral(cfg, kind, e) for e in np.atleast_1d(eta)])
                w = w.reshape(eta.shape)
            else:
                w = _w_eval(cfg, kind, eta)
            expo += 2.0 * math.pi * t.density * p * w
    return expo


def laplace_interference(cfg: ValidatedConfig, s, *, exact: bool = False):
    """Laplace functional of the aggregate interference, E[exp(-s I)].

    Equals 1 at s = 0 and decreases towards 0; the interference field sums
    all four tiers with their interferer-gain mixtures, with no exclusion
    around the receiver.  ``exact`` bypasses the spline table and
    integrates each tier directly (slow; for verification).
    """
    arr = np.asarray(s, dtype=float)
    if np.any(arr < 0):
        raise ValueError("s must be nonnegative")
    out = np.exp(-_laplace_exponent(cfg, arr, exact=exact))
    out = np.where(arr == 0.0, 1.0, out)
    return float(out) if out.ndim == 0 else out


def desired_power(cfg: ValidatedConfig, kind: TierKind, x):
    """Mean received power of the aligned serving link at distance x."""
    t = tier_params(cfg, kind)
    return t.ptx * propagation.boresight_gain(cfg, kind) * propagation.path_loss(cfg, kind, x)


# ---------------------------------------------------------------------------
# State-conditional interference
# ---------------------------------------------------------------------------

@lru_cache(maxsize=16)
def _gl(order: int):
    return np.polynomial.legendre.leggauss(order)


def _suppression_inside(cfg: ValidatedConfig, kind: TierKind, eta, lam,
                        order: int = 48):
    """int_0^lam r P_k(r) / (1 + eta^{-1} r^a e^{z r}) dr, broadcast over
    eta/lam (nodes share the last axis)."""
    t = tier_params(cfg, kind)
    nodes, wts = _gl(order)
    u = 0.5 * (nodes + 1.0)
    uw = 0.5 * wts
    lam = np.asarray(lam, dtype=float)
    eta = np.asarray(eta, dtype=float)
    r = lam[..., None] * u
    p = propagation.los_factor(cfg, kind, r)
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        growth = r**t.alpha * np.exp(t.zeta * r)
        denom = 1.0 + growth / np.where(eta[..., None] > 0, eta[..., None], 1.0)
        vals = np.where(eta[..., None] > 0, r * p / denom, 0.0)
    return lam * (vals * uw).sum(axis=-1)


def _suppression_tail(cfg: ValidatedConfig, kind: TierKind, eta, lam,
                      order: int = 64):
    """int_lam^inf r P_k(r) / (1 + eta^{-1} r^a e^{z r}) dr, broadcast over
    eta/lam; the mapped scale tracks both the knee at eta^(1/a) and the
    integrand's own decay length."""
    _check_w_convergence(cfg, kind)
    t = tier_params(cfg, kind)
    nodes, wts = _gl(order)
    u = 0.5 * (nodes + 1.0)
    uw = 0.5 * wts
    eta = np.asarray(eta, dtype=float)
    lam = np.asarray(lam, dtype=float)
    decay = 1.0 / t.blockage if kind.is_los else (
        1.0 / t.zeta if t.zeta > 0 else 10.0 / t.blockage
    )
    with np.errstate(divide="ignore", over="ignore"):
        knee = np.where(eta > 0, eta ** (1.0 / t.alpha), 0.0)
    scale = np.maximum.reduce(np.broadcast_arrays(
        np.minimum(knee, 1e7), lam, np.full_like(lam + eta, decay)
    ))
    uu = u[(None,) * max(scale.ndim, 1)]
    r = lam[..., None] + scale[..., None] * uu / (1.0 - uu)
    jac = scale[..., None] / (1.0 - uu) ** 2
    p = propagation.los_factor(cfg, kind, r)
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        growth = r**t.alpha * np.exp(t.zeta * r)
        denom = 1.0 + growth / np.where(eta[..., None] > 0, eta[..., None], 1.0)
        vals = np.where(eta[..., None] > 0, r * p / denom * jac, 0.0)
    return (vals * uw).sum(axis=-1)


def _equal_power_maps(cfg: ValidatedConfig, kind: TierKind, x):
    """{tier: equal-power distance of tier i at serving distance x};
    inf past the underflow range (those x contribute nothing anyway)."""
    out = {}
    with np.errstate(over="ignore"):
        ell = np.asarray(propagation.path_loss(cfg, kind, x))
    live = ell > 0.0
    for i in ALL_TIERS:
        if i is kind:
            out[i] = np.asarray(x, dtype=float)
            continue
        lam = np.full_like(np.asarray(x, dtype=float), np.inf)
        if live.any():
            lam[live] = propagation.lambda_map(cfg, kind, i, np.asarray(x)[live])
        out[i] = lam
    return out


def _conditional_parts(cfg: ValidatedConfig, kind: TierKind, x, s,
                       lam_maps=None, orders=(48, 64)):
    """(beyond, inside) of the serving-state interference transform.

    ``beyond`` is the exponent of the Poisson field outside every tier's
    equal-power distance; ``inside[tier]`` is the per-rival suppression
    factor E[exp(-s P G h l(r))] for one rival inside that distance.  ``s``
    broadcasts against ``x`` (e.g. a threshold column against a distance
    row).  With ``interference_unconditional`` set, ``beyond`` is the full
    unconditioned exponent and every inside factor is 1.
    """
    x = np.asarray(x, dtype=float)
    s = np.asarray(s, dtype=float)
    if lam_maps is None:
        lam_maps = _equal_power_maps(cfg, kind, x)
    unconditional = cfg.interference_unconditional
    beyond = np.zeros(np.broadcast_shapes(s.shape, x.shape))
    inside = {}
    for i in ALL_TIERS:
        t = tier_params(cfg, i)
        gains, probs = propagation.gain_arrays(cfg, t.tx_class)
        lam_i = np.zeros_like(lam_maps[i]) if unconditional else lam_maps[i]
        lam_b = np.broadcast_to(lam_i, beyond.shape)
        fin = np.isfinite(lam_b)
        lam_fin = np.where(fin, lam_b, 0.0)
        omega_lam = None
        c_sum = None
        for g, p in zip(gains, probs):
            eta = s * t.ptx * g * np.ones_like(x)
            tail = np.where(
                fin,
                _suppression_tail(cfg, i, np.where(fin, eta, 1.0), lam_fin,
                                  order=orders[1]),
                0.0,
            )
            beyond += 2.0 * math.pi * t.density * p * tail
            if not unconditional and not i.is_bs:
                if omega_lam is None:
                    omega_lam = np.asarray(association.omega(cfg, i, lam_fin))
                sup = _suppression_inside(cfg, i, eta, lam_fin, order=orders[0])
                with np.errstate(invalid="ignore", divide="ignore"):
                    frac = np.where(omega_lam > 0.0, sup / np.where(omega_lam > 0, omega_lam, 1.0), 0.0)
                c_sum = (0.0 if c_sum is None else c_sum) + p * (1.0 - frac)
        if unconditional or i.is_bs:
            # BS tiers never hold walked-past rivals (the first one serves).
            inside[i] = np.ones(beyond.shape)
        else:
            inside[i] = np.clip(c_sum, 0.0, 1.0)
    return beyond, inside


def conditional_kernel(cfg: ValidatedConfig, kind: TierKind,
                       state: AssociationState, tau: float):
    """x -> P(SINR > tau | serving tier, state, distance x), marginal over
    fading, rival placement, and the outer interference field."""
    sigma2 = cfg.noise_power

    def kernel(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        ok = x > 0
        if not ok.any():
            return out
        xx = x[ok]
        T = np.asarray(desired_power(cfg, kind, xx))
        live = T > 0
        with np.errstate(divide="ignore", over="ignore"):
            noise_fac = np.where(live, np.exp(-tau * sigma2 / np.where(live, T, 1.0)), 0.0)
        act = noise_fac > 1e-300
        vals = np.zeros_like(T)
        if act.any():
            s = tau / T[act]
            beyond, inside = _conditional_parts(cfg, kind, xx[act], s)
            k = noise_fac[act] * np.exp(-beyond)
            for i in ALL_TIERS:
                j = state.step_index(i) - 1
                if j > 0:
                    k = k * inside[i] ** j
            vals[act] = k
        idx = np.flatnonzero(ok)
        out[idx] = vals
        return out

    return kernel


def sinr_coverage_tier(cfg: ValidatedConfig, kind: TierKind,
                       state: AssociationState, tau: float) -> float:
    """Coverage P(SINR > tau) conditioned on serving tier and walk state."""
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    a = association.association_probability(cfg, kind, state)
    if a <= 0.0:
        return 0.0
    kernel = conditional_kernel(cfg, kind, state, tau)
    f_num = association._state_integrand(cfg, kind, state)

    def integrand(x):
        return kernel(x) * f_num(x)

    scale = association._char_distance(cfg, kind) * math.sqrt(state.step_index(kind))
    res = numerics.integrate(integrand, 0.0, math.inf, cfg.numerics, scale=scale)
    return min(max(res.value / a, 0.0), 1.0)


# ---------------------------------------------------------------------------
# Case mixtures
# ---------------------------------------------------------------------------

def _retrieval_weight_kernel(cfg: ValidatedConfig, case: CaseKind, kind: TierKind,
                             level: str = "fine"):
    """Radial density of retrieval mass on the shared grid for one case and
    serving tier, truncated consistently with :func:`case_probabilities`.

    Collapsing the (n, m) double sum with the Poisson convolution identity
    gives a single q-sum that equals the truncated state family exactly.
    """
    split = case_probabilities(cfg)
    x, w, dens = _case_radial_mass(cfg, case, kind, split.truncated_at,
                                   level=level)
    return x, w, dens


def _case_radial_mass(cfg: ValidatedConfig, case: CaseKind, kind: TierKind,
                      n_stop: int, inside=None, level: str = "fine"):
    """sum_{n,m <= n_stop} P^(n,m) f_X^(n,m)(x) (times optional per-rival
    suppression factors ``inside``) on the shared grid."""
    p_h = association.cache_hit_probability(cfg)
    miss = 1.0 - p_h
    x, w, base, mu_own, mu_other = association._grid_geometry(cfg, kind, level)

    def scaled(tier, mu):
        if inside is None:
            return mu
        return mu * inside[tier]

    if kind.is_bs:
        if case is not CaseKind.V2I:
            raise ValueError("BS tiers serve the V2I case")
        other_bs = TierKind.NLOS_BS if kind is TierKind.LOS_BS else TierKind.LOS_BS
        with np.errstate(over="ignore"):
            block = base * np.where(
                np.isinf(mu_own) | np.isinf(mu_other[other_bs]), 0.0,
                np.exp(-mu_own - mu_other[other_bs]),
            )
        mu_rivals = mu_other[TierKind.LOS_VUE] + mu_other[TierKind.NLOS_VUE]
        m_eff = (scaled(TierKind.LOS_VUE, mu_other[TierKind.LOS_VUE])
                 + scaled(TierKind.NLOS_VUE, mu_other[TierKind.NLOS_VUE]))
        lead = miss
    else:
        if case is not CaseKind.V2V:
            raise ValueError("vehicle tiers serve the V2V case")
        mate = TierKind.NLOS_VUE if kind is TierKind.LOS_VUE else TierKind.LOS_VUE
        with np.errstate(over="ignore"):
            block = base * np.where(
                np.isinf(mu_other[TierKind.LOS_BS]) | np.isinf(mu_other[TierKind.NLOS_BS]),
                0.0,
                np.exp(-mu_other[TierKind.LOS_BS] - mu_other[TierKind.NLOS_BS]),
            )
        mu_rivals = mu_own + mu_other[mate]
        m_eff = scaled(kind, mu_own) + scaled(mate, mu_other[mate])
        lead = p_h * miss

    dens = np.zeros_like(x)
    if lead > 0.0 and n_stop >= 1:
        with np.errstate(over="ignore", invalid="ignore"):
            # sum_q (miss * m_eff)^q / q! * exp(-mu_rivals), truncated
            term = np.where(np.isinf(mu_rivals), 0.0, np.exp(-mu_rivals))
            acc = term.copy()
            for q in range(1, n_stop):
                term = np.where(np.isinf(mu_rivals), 0.0,
                                term * miss * m_eff / q)
                acc = acc + term
        dens = lead * block * acc
    return x, w, dens


def tier_case_mass(cfg: ValidatedConfig, case: CaseKind, kind: TierKind) -> float:
    """Truncated retrieval mass sum_{n,m} P_(case,kind)^(n,m)."""
    x, w, dens = _retrieval_weight_kernel(cfg, case, kind)
    return float(np.dot(w, dens))


def case_coverage_mass(cfg: ValidatedConfig, case: CaseKind, kind: TierKind,
                       tau: float, stay=None, level: str = "fine") -> float:
    """sum_{n,m} P^(n,m) * P(SINR > tau AND stay | state) for one serving
    tier, in one radial quadrature.  ``stay`` optionally weights the
    integrand by a motion-survival factor on the grid."""
    if tier_params(cfg, kind).density <= 0.0:
        return 0.0
    split = case_probabilities(cfg)
    sigma2 = cfg.noise_power
    x, w, *_ = association._grid_geometry(cfg, kind, level)
    T = np.asarray(desired_power(cfg, kind, x))
    live = T > 0
    with np.errstate(divide="ignore", over="ignore"):
        noise_fac = np.where(live, np.exp(-tau * sigma2 / np.where(live, T, 1.0)), 0.0)
    act = noise_fac > 1e-300
    if not act.any():
        return 0.0
    s = tau / T[act]
    lam_maps = {i: m[act] for i, m in _equal_power_maps(cfg, kind, x).items()}
    beyond, inside = _conditional_parts(cfg, kind, x[act], s, lam_maps=lam_maps)
    inside_full = {i: _embed(v, act, x.size) for i, v in inside.items()}
    _, _, dens = _case_radial_mass(cfg, case, kind, split.truncated_at,
                                   inside=inside_full, level=level)
    kern = np.zeros_like(x)
    kern[act] = noise_fac[act] * np.exp(-beyond)
    if stay is not None:
        kern = kern * stay
    return float(np.dot(w, kern * dens))


def _embed(values, mask, size):
    out = np.ones(size)
    out[mask] = values
    return out


def sinr_coverage_case(cfg: ValidatedConfig, case: CaseKind, tau: float) -> float:
    """Case-conditional SINR coverage (local retrieval always succeeds)."""
    if case is CaseKind.LOCAL:
        return 1.0
    split = case_probabilities(cfg)
    p_case = split.total(case)
    if p_case <= 0.0:
        return 0.0
    num = sum(case_coverage_mass(cfg, case, kind, tau)
              for kind in case_tiers(case))
    return min(max(num / p_case, 0.0), 1.0)


def total_sinr_coverage(cfg: ValidatedConfig, tau: float) -> float:
    """Average SINR coverage over the retrieval-case mixture."""
    total = association.cache_hit_probability(cfg)
    for case in (CaseKind.V2I, CaseKind.V2V):
        total += sum(case_coverage_mass(cfg, case, kind, tau)
                     for kind in case_tiers(case))
    return min(max(total, 0.0), 1.0)


def load(cfg: ValidatedConfig, kind: TierKind, state: AssociationState,
         case: CaseKind) -> float:
    """Mean number of vehicles sharing the serving node's resources.

    The divergent NLOS normalization integral is truncated at the r_max
    policy radius.
    """
    t = tier_params(cfg, kind)
    p = association.state_probability(cfg, case, kind, state)
    omega_total = association.omega(
        cfg, kind, math.inf if kind.is_los else cfg.numerics.r_max
    )
    lam_k = t.density * omega_total
    return 1.0 + p * cfg.lambda_vue / lam_k


def _rate_threshold_to_sinr(cfg: ValidatedConfig, rho: float, n_load: float):
    """tau such that (W / N) log2(1 + tau) == rho; inf when it overflows."""
    expo = rho * n_load / cfg.bandwidth
    if expo > 1000.0:
        return math.inf
    return 2.0**expo - 1.0


def rate_coverage(cfg: ValidatedConfig, case: CaseKind, rho: float,
                  kind: TierKind | None = None,
                  state: AssociationState | None = None) -> float:
    """P(rate > rho).  With ``kind``/``state`` given: conditioned on that
    serving tier and walk state; otherwise the per-case mixture.

    The per-case mixture normalizes the state weights by the case mass so
    the case totals recombine without double counting; set
    ``rate_mixture_unnormalized`` in the config to keep the raw weights.
    """
    if rho < 0:
        raise ValueError("rho must be nonnegative")
    if case is CaseKind.LOCAL:
        return 1.0
    if state is not None:
        if kind is None:
            raise ValueError("a per-state rate coverage needs the serving tier")
        n_load = load(cfg, kind, state, case)
        tau = _rate_threshold_to_sinr(cfg, rho, n_load)
        if math.isinf(tau):
            return 0.0
        return sinr_coverage_tier(cfg, kind, state, tau)

    split = case_probabilities(cfg)
    p_case = split.total(case)
    if p_case <= 0.0:
        return 0.0
    total = _case_rate_mass(cfg, case, rho)
    if cfg.rate_mixture_unnormalized:
        return min(max(total, 0.0), 1.0)
    return min(max(total / p_case, 0.0), 1.0)


def _state_coverage_batch(cfg: ValidatedConfig, kind: TierKind, states, taus):
    """SC^(n,m)(tau) for many states of one serving tier, each at its own
    threshold, on the coarse grid.

    Per-state thresholds cluster tightly (loads differ by tiny amounts),
    so the threshold-dependent transform parts are computed on a few
    log-spaced anchor thresholds and interpolated; the anchor spacing
    keeps that error far below the Monte Carlo resolution.  Anchors fall
    back to one exact evaluation per distinct threshold when the spread is
    wide.
    """
    sigma2 = cfg.noise_power
    taus = np.asarray(taus, dtype=float)
    sc = np.zeros(len(states))
    finite = np.isfinite(taus) & (taus >= 0.0)
    if not finite.any():
        return sc
    x, w, rows = association.state_density_rows(cfg, kind, states, level="coarse")
    a_vals = rows @ w
    T = np.asarray(desired_power(cfg, kind, x))
    live = T > 0
    if not live.any():
        return sc
    lam_live = {i: m[live] for i, m in _equal_power_maps(cfg, kind, x).items()}

    lo, hi = taus[finite].min(), taus[finite].max()
    if lo <= 0.0 or hi / lo - 1.0 < 1e-9:
        anchors = np.array([max(lo, 0.0)])
    else:
        span = math.log(hi / lo)
        n_anchor = min(16, max(2, math.ceil(span / 0.05) + 1))
        if span / (n_anchor - 1) > 0.06:  # too wide to interpolate safely
            anchors = None
        else:
            anchors = np.geomspace(lo, hi, n_anchor)

    if anchors is None:
        anchors = np.unique(taus[finite])
        exact_lookup = {t: i for i, t in enumerate(anchors)}
    else:
        exact_lookup = None

    beyond_tab = np.zeros((anchors.size, x.size))
    ln_in_tab = {i: np.zeros((anchors.size, x.size)) for i in ALL_TIERS}
    for a_idx, tau_a in enumerate(anchors):
        s = np.where(live, tau_a / np.where(live, T, 1.0), 1.0)
        beyond, inside = _conditional_parts(cfg, kind, x[live], s[live],
                                            lam_maps=lam_live)
        beyond_tab[a_idx, live] = beyond
        with np.errstate(divide="ignore"):
            for i, v in inside.items():
                ln_in_tab[i][a_idx, live] = np.maximum(np.log(v), -1e3)

    ln_anchor = np.log(anchors) if anchors.size > 1 else None
    for idx, (st, tau) in enumerate(zip(states, taus)):
        if not finite[idx] or a_vals[idx] <= 0.0:
            continue
        if exact_lookup is not None:
            j0, j1, w1 = exact_lookup[tau], exact_lookup[tau], 0.0
        elif ln_anchor is None:
            j0, j1, w1 = 0, 0, 0.0
        else:
            pos = np.clip(np.searchsorted(anchors, tau), 1, anchors.size - 1)
            j0, j1 = pos - 1, pos
            w1 = (math.log(tau) - ln_anchor[j0]) / (ln_anchor[j1] - ln_anchor[j0])
        beyond = (1.0 - w1) * beyond_tab[j0] + w1 * beyond_tab[j1]
        expo = -beyond
        for i in ALL_TIERS:
            j_cnt = st.step_index(i) - 1
            if j_cnt > 0:
                expo = expo + j_cnt * ((1.0 - w1) * ln_in_tab[i][j0]
                                       + w1 * ln_in_tab[i][j1])
        with np.errstate(divide="ignore", over="ignore"):
            noise_fac = np.where(live, np.exp(-tau * sigma2 / np.where(live, T, 1.0)), 0.0)
            kern = np.where(noise_fac > 1e-300, noise_fac * np.exp(expo), 0.0)
        cov = float(np.dot(w * kern, rows[idx]))
        sc[idx] = min(max(cov / a_vals[idx], 0.0), 1.0)
    return sc


def _case_rate_mass(cfg: ValidatedConfig, case: CaseKind, rho: float) -> float:
    """sum_{k,n,m} P^(n,m) * SC^(n,m)(tau(rho, N^(n,m))) for one case."""
    split = case_probabilities(cfg)
    total = 0.0
    for kind in case_tiers(case):
        entries = [
            (AssociationState(n, m), p)
            for (c, k, n, m), p in split.family.items()
            if c is case and k is kind and p > 0.0
        ]
        if not entries:
            continue
        states = [st for st, _ in entries]
        weights = np.array([p for _, p in entries])
        taus = [_rate_threshold_to_sinr(cfg, rho, load(cfg, kind, st, case))
                for st in states]
        sc = _state_coverage_batch(cfg, kind, states, taus)
        total += float(np.dot(weights, sc))
    return total


def total_rate_coverage(cfg: ValidatedConfig, rho: float) -> float:
    """Average rate coverage over the retrieval-case mixture."""
    split = case_probabilities(cfg)
    total = split.local  # local reads clear any threshold
    for case in (CaseKind.V2I, CaseKind.V2V):
        mass = _case_rate_mass(cfg, case, rho)
        if cfg.rate_mixture_unnormalized:
            # literal composition: the raw case mixture re-weighted by the
            # case probability (double-counts the state weights on purpose)
            total += split.total(case) * mass
        else:
            total += mass
    return min(max(total, 0.0), 1.0)
