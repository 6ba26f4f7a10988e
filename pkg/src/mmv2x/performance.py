"""Average achievable rate, average connection time, throughput, and the
content-delivery delay.

Rates integrate the rate-coverage tail; connection times combine the
sojourn probability with the expected travel distance to the beam edge.
Per-state quantities share one radial grid per serving tier, so the whole
(n, m) family reduces to row/column contractions against cached tables.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import association, coverage, mobility, numerics
from .association import AssociationState, CaseKind, case_probabilities, case_tiers
from .config import ALL_TIERS, TierKind, ValidatedConfig, tier_params

__all__ = [
    "max_traverse_distance",
    "average_rate",
    "average_rate_from_coverage",
    "average_connection_time",
    "throughput",
    "delay",
    "performance_summary",
    "PerfBreakdown",
    "ThroughputReport",
]

_LN2 = math.log(2.0)


def max_traverse_distance(x, theta, psi):
    """Distance from the receiver to the beam edge along direction
    ``theta`` (measured from the outward bisector): x sin(psi/2) /
    sin(theta + psi/2).  Defined while the exit ray actually crosses the
    wedge side, i.e. sin(theta + psi/2) > 0."""
    x = np.asarray(x, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if np.any(x <= 0):
        raise ValueError("need x > 0")
    s = np.sin(theta + 0.5 * psi)
    if np.any(s <= 0):
        raise ValueError("exit angle outside the wedge: sin(theta + psi/2) <= 0")
    out = x * math.sin(0.5 * psi) / s
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Shared tables on the per-tier radial grids
# ---------------------------------------------------------------------------

@lru_cache(maxsize=16)
def _u_quad():
    """Composite Gauss grid for SINR-threshold integrals, geometric panels
    over u in (0, 1e12]."""
    edges = np.concatenate([[0.0], np.geomspace(1e-8, 1e12, 21)])
    nodes, wts = np.polynomial.legendre.leggauss(5)
    mid = 0.5 * (edges[:-1] + edges[1:])[:, None]
    half = 0.5 * (edges[1:] - edges[:-1])[:, None]
    u = (mid + half * nodes[None, :]).ravel()
    w = (half * wts[None, :]).ravel()
    return u, w


@lru_cache(maxsize=64)
def _rate_tensors(cfg: ValidatedConfig, kind: TierKind):
    """Threshold-by-distance coverage tensors on the coarse grid.

    ``kern``[u, x] is the state-free part of P(SINR > u | x); adding
    rival-count multiples of ``ln_inside``[tier] to its log specializes it
    to a walk state.  Contracting with 1/(1+u) du yields the rate
    integral.

    The suppression-integral nodes here depend only on the exclusion
    radii, so the blockage/path-loss factors are evaluated once per tier
    and reused across the whole threshold axis.
    """
    from .config import tier_params
    from . import propagation

    x, w = association._shared_grid(cfg, kind, "coarse")
    u, uw = _u_quad()
    sigma2 = cfg.noise_power
    T = np.asarray(coverage.desired_power(cfg, kind, x))
    live = T > 0
    n_live = int(live.sum())
    kern = np.zeros((u.size, x.size))
    ln_inside = {i: np.zeros((u.size, x.size)) for i in ALL_TIERS}
    if not live.any():
        return x, w, u, uw, kern, ln_inside

    with np.errstate(over="ignore", divide="ignore"):
        s_mat = u[:, None] / T[None, live]
        noise = np.where(np.isfinite(s_mat), np.exp(-sigma2 * s_mat), 0.0)
        s_mat = np.where(noise > 1e-300, s_mat, 1.0)
    lam_live = {i: m[live]
                for i, m in coverage._equal_power_maps(cfg, kind, x).items()}
    unconditional = cfg.interference_unconditional
    beyond = np.zeros((u.size, n_live))
    gl_in, glw_in = np.polynomial.legendre.leggauss(32)
    t_in, tw_in = 0.5 * (gl_in + 1.0), 0.5 * glw_in
    gl_tl, glw_tl = np.polynomial.legendre.leggauss(40)
    t_tl, tw_tl = 0.5 * (gl_tl + 1.0), 0.5 * glw_tl

    for i in ALL_TIERS:
        t = tier_params(cfg, i)
        gains, probs = propagation.gain_arrays(cfg, t.tx_class)
        lam = np.zeros(n_live) if unconditional else lam_live[i]
        fin = np.isfinite(lam)
        lam_f = np.where(fin, lam, 0.0)
        # inside nodes r = lam * t and tail nodes r = lam + scale*t/(1-t)
        r_in = lam_f[:, None] * t_in[None, :]
        p_in = propagation.los_factor(cfg, i, r_in)
        with np.errstate(over="ignore"):
            g_in = r_in**t.alpha * np.exp(t.zeta * r_in)
        decay = 1.0 / t.blockage if i.is_los else (
            1.0 / t.zeta if t.zeta > 0 else 10.0 / t.blockage)
        scale = np.maximum(lam_f, decay)
        r_tl = lam_f[:, None] + scale[:, None] * t_tl[None, :] / (1.0 - t_tl[None, :])
        jac = scale[:, None] / (1.0 - t_tl[None, :]) ** 2
        p_tl = propagation.los_factor(cfg, i, r_tl)
        with np.errstate(over="ignore"):
            g_tl = r_tl**t.alpha * np.exp(t.zeta * r_tl)
        base_tl = r_tl * p_tl * jac * tw_tl
        base_in = r_in * p_in * tw_in
        omega_lam = np.asarray(association.omega(cfg, i, lam_f))
        c_sum = np.zeros((u.size, n_live))
        for g, pr in zip(gains, probs):
            eta = s_mat * (t.ptx * g)
            with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
                inv_eta = 1.0 / eta
                tail = np.einsum(
                    "xn,uxn->ux", base_tl,
                    1.0 / (1.0 + np.where(np.isfinite(g_tl[None, :, :]),
                                          g_tl[None, :, :], np.inf)
                           * inv_eta[:, :, None]),
                )
            beyond += 2.0 * math.pi * t.density * pr * np.where(fin, tail, 0.0)
            if not unconditional and not i.is_bs:
                with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
                    sup = lam_f[None, :] * np.einsum(
                        "xn,uxn->ux", base_in,
                        1.0 / (1.0 + g_in[None, :, :] * inv_eta[:, :, None]),
                    )
                    frac = np.where(omega_lam > 0.0,
                                    sup / np.where(omega_lam > 0, omega_lam, 1.0), 0.0)
                c_sum += pr * (1.0 - frac)
        if not unconditional and not i.is_bs:
            with np.errstate(divide="ignore"):
                block = np.zeros((u.size, x.size))
                block[:, live] = np.maximum(np.log(np.clip(c_sum, 0.0, 1.0)), -1e3)
                ln_inside[i] = block
    with np.errstate(over="ignore"):
        kern[:, live] = np.where(noise > 1e-300, noise * np.exp(-beyond), 0.0)
    return x, w, u, uw, kern, ln_inside


def _state_kern(kern, ln_inside, state):
    """Specialize the state-free coverage tensor to one walk state."""
    expo = None
    for i, ln_c in ln_inside.items():
        j = state.step_index(i) - 1
        if j > 0:
            expo = j * ln_c if expo is None else expo + j * ln_c
    if expo is None:
        return kern
    with np.errstate(over="ignore"):
        return kern * np.exp(expo)


def _state_rate_integral(cfg, kind, state, tensors) -> float:
    """f_X-average of int P(SINR > u | x, state) / (1+u) du, unnormalized."""
    x, w, u, uw, kern, ln_inside = tensors
    j_of_x = (uw / (1.0 + u)) @ _state_kern(kern, ln_inside, state)
    _, _, rows = association.state_density_rows(cfg, kind, [state], level="coarse")
    return float(np.dot(w, rows[0] * j_of_x))


def _leave_window(s_norm, half):
    """[lo, hi] of folded motion angles for which the receiver exits the
    wedge within the slot; empty (lo == hi) when no exit is possible."""
    s = np.clip(s_norm, 0.0, 1.0)
    arc = np.arcsin(s)
    hi = math.pi - arc - half
    lo = np.maximum(arc - half, 0.0)
    return np.minimum(lo, hi), hi


@lru_cache(maxsize=64)
def _v2i_motion_table(cfg: ValidatedConfig, kind: TierKind):
    """(stay(x), leave_time(x)) for BS serving: the conditional sojourn and
    the uniform-angle mean of d(x, theta) / v over the exit window."""
    x, w = association._shared_grid(cfg, kind, "coarse")
    stay = np.asarray(mobility.sojourn_v2i(cfg, x))
    reach = cfg.speed * cfg.slot
    if reach == 0.0:
        return stay, np.zeros_like(x)
    half = 0.5 * cfg.beamwidth_bs
    lo, hi = _leave_window(x * math.sin(half) / reach, half)

    def anti(theta):
        return np.log(np.tan(0.5 * (theta + half)))

    inner = x * math.sin(half) / math.pi * (anti(hi) - anti(lo))
    return stay, np.maximum(inner, 0.0) / cfg.speed


@lru_cache(maxsize=64)
def _v2v_motion_table(cfg: ValidatedConfig, kind: TierKind):
    """(stay(x), leave_time(x)) for vehicle serving, averaged over the
    half-difference angle; the relative speed 2 v |cos beta| drives both
    the exit window and the exit time."""
    x, w = association._shared_grid(cfg, kind, "coarse")
    stay = mobility.mean_sojourn_over_beta(cfg, x)
    if cfg.speed == 0.0:
        return stay, np.zeros_like(x)
    if cfg.v2v_time_literal:
        return stay, _v2v_leave_literal(cfg, x)
    half = 0.5 * cfg.beamwidth_vue
    f_beta, _ = mobility.angle_pdfs()
    b, bw = mobility._beta_quad()
    reach = 2.0 * cfg.speed * cfg.slot * np.abs(np.cos(b))  # (beta,)
    nodes, wts = np.polynomial.legendre.leggauss(16)

    ok = reach > 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        s_norm = np.where(ok[None, :], x[:, None] * math.sin(half) / reach[None, :], np.inf)
    lo, hi = _leave_window(s_norm, half)
    mid = 0.5 * (lo + hi)
    hw = 0.5 * (hi - lo)
    theta = mid[:, :, None] + hw[:, :, None] * nodes[None, None, :]
    # folded average-angle density 2 theta / pi^2; d(x, theta) / v'
    dens = 2.0 * theta / math.pi**2
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        d = x[:, None, None] * math.sin(half) / np.sin(theta + half)
        t_leave = d / reach[None, :, None] * cfg.slot
    contrib = (dens * t_leave * wts[None, None, :]).sum(axis=2) * hw
    contrib = np.where(ok[None, :] & (hw > 0), contrib, 0.0)
    leave = 2.0 * (contrib * (f_beta(b) * bw)[None, :]).sum(axis=1)
    return stay, leave


def _v2v_leave_literal(cfg: ValidatedConfig, x: np.ndarray):
    """Expected exit time per the literal printed triple integral: 1/v
    prefactor, the average-angle density on its (0, pi) branch, the second
    term doubled, and the inner radial bound at v t_s."""
    half = 0.5 * cfg.beamwidth_vue
    f_beta, f_theta = mobility.angle_pdfs()
    b, bw = mobility._beta_quad()
    reach = 2.0 * cfg.speed * cfg.slot * np.abs(np.cos(b))
    v_ts = cfg.speed * cfg.slot
    nodes, wts = np.polynomial.legendre.leggauss(16)
    xg = x[:, None]
    out = np.zeros_like(x)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        s_norm = np.where(reach[None, :] > 0, xg * math.sin(half) / reach[None, :], np.inf)
        s = np.clip(s_norm, 0.0, 1.0)
        arc = np.arcsin(s)
        theta3 = math.pi - arc - half
        theta1 = arc - half
        theta2 = math.pi - arc - half
        for sel, lo, hi, factor in (
            (xg < reach[None, :], np.zeros_like(arc), theta3, 1.0),
            ((xg >= v_ts) & (s_norm <= 1.0), theta1, theta2, 2.0),
        ):
            lo = np.maximum(lo, 0.0)
            hw = 0.5 * np.maximum(hi - lo, 0.0)
            mid = 0.5 * (lo + hi)
            theta = mid[:, :, None] + hw[:, :, None] * nodes[None, None, :]
            d = xg[:, :, None] * math.sin(half) / np.sin(theta + half)
            inner = (f_theta(theta) * d * wts[None, None, :]).sum(axis=2) * hw
            inner = np.where(sel & (hw > 0), inner, 0.0)
            out += factor * (inner * (f_beta(b) * bw)[None, :]).sum(axis=1)
    return out / cfg.speed


# ---------------------------------------------------------------------------
# Per-state operations
# ---------------------------------------------------------------------------

def average_rate_from_coverage(sc_fn, n_load: float, bandwidth: float, policy) -> float:
    """E[rate] = int_0^inf P(rate > rho) d rho for rate = (W/N) log2(1+SINR),
    given the SINR-coverage tail ``sc_fn``.  Substituting the rate
    threshold for the SINR threshold maps this onto
    W / (N ln 2) * int sc(u) / (1 + u) du."""
    def integrand(u):
        u = np.asarray(u, dtype=float)
        return np.asarray(sc_fn(u)) / (1.0 + u)

    res = numerics.integrate(integrand, 0.0, math.inf, policy, scale=10.0)
    return bandwidth / (n_load * _LN2) * res.value


def _state_row(cfg: ValidatedConfig, kind: TierKind, state: AssociationState):
    x, w, rows = association.state_density_rows(cfg, kind, [state], level="coarse")
    row = rows[0]
    a = float(np.dot(w, row))
    return x, w, row, a


def average_rate(cfg: ValidatedConfig, case: CaseKind,
                 kind: TierKind | None = None,
                 state: AssociationState | None = None) -> float:
    """Mean achievable rate [bit/s] conditioned on the serving tier and
    walk state (local retrieval returns the configured local read rate)."""
    if case is CaseKind.LOCAL:
        return cfg.local_rate
    if kind is None or state is None:
        raise ValueError("V2I/V2V average rate needs a serving tier and state")
    x, w, row, a = _state_row(cfg, kind, state)
    if a <= 0.0:
        return 0.0
    tensors = _rate_tensors(cfg, kind)
    n_load = coverage.load(cfg, kind, state, case)
    raw = _state_rate_integral(cfg, kind, state, tensors)
    return cfg.bandwidth / (n_load * _LN2) * raw / a


def average_connection_time(cfg: ValidatedConfig, case: CaseKind,
                            kind: TierKind | None = None,
                            state: AssociationState | None = None) -> float:
    """Mean time [s] the link survives within one slot: the full slot when
    the beam alignment holds, else the travel time to the beam edge."""
    if case is CaseKind.LOCAL:
        return cfg.slot
    if kind is None or state is None:
        raise ValueError("V2I/V2V connection time needs a serving tier and state")
    if cfg.speed == 0.0:
        return cfg.slot
    x, w, row, a = _state_row(cfg, kind, state)
    if a <= 0.0:
        return cfg.slot
    if case is CaseKind.V2I:
        stay, leave = _v2i_motion_table(cfg, kind)
    else:
        stay, leave = _v2v_motion_table(cfg, kind)
    w_always, w_cond = mobility.sojourn_weights(cfg, case)
    stay_total = w_always + w_cond * float(np.dot(w, row * stay)) / a
    leave_mean = w_cond * float(np.dot(w, row * leave)) / a
    return min(stay_total * cfg.slot + leave_mean, cfg.slot)


# ---------------------------------------------------------------------------
# Throughput and delay
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StatePerf:
    weight: float
    avg_rate: float
    avg_time: float

    @property
    def product(self) -> float:
        return self.avg_rate * self.avg_time


@dataclass(frozen=True)
class ThroughputReport:
    per_state: dict  # (CaseKind, TierKind, n, m) -> StatePerf
    per_case: dict  # CaseKind -> mean throughput conditioned on the case
    total: float  # bits per slot
    tail_mass: float


@lru_cache(maxsize=64)
def throughput(cfg: ValidatedConfig) -> ThroughputReport:
    """Average bits delivered per slot, per state / per case / total.

    Per-state throughput is the product of the average rate and the
    average connection time; case mixtures use weights normalized by the
    case mass (unless ``rate_mixture_unnormalized`` is set), and the local
    case contributes the configured local read rate.
    """
    split = case_probabilities(cfg)
    p_h = split.local
    per_state = {}
    case_raw = {CaseKind.V2I: 0.0, CaseKind.V2V: 0.0}
    # states below this mass cannot move the total by more than ~1e-5 bits
    # relative; see the tail bound carried in the report
    weight_floor = 1e-8
    for case in (CaseKind.V2I, CaseKind.V2V):
        for kind in case_tiers(case):
            entries = [
                (AssociationState(n, m), p)
                for (c, k, n, m), p in split.family.items()
                if c is case and k is kind and p > weight_floor
            ]
            if not entries:
                continue
            states = [st for st, _ in entries]
            x, w, rows = association.state_density_rows(cfg, kind, states,
                                                        level="coarse")
            a_vals = rows @ w
            _, _, u, uw, kern, ln_inside = _rate_tensors(cfg, kind)
            rate_wt = uw / (1.0 + u)
            if case is CaseKind.V2I:
                stay, leave = _v2i_motion_table(cfg, kind)
            else:
                stay, leave = _v2v_motion_table(cfg, kind)
            w_always, w_cond = mobility.sojourn_weights(cfg, case)
            stay_dot = rows @ (w * stay)
            leave_dot = rows @ (w * leave)
            for idx, (state, p) in enumerate(entries):
                a = a_vals[idx]
                if a <= 0.0:
                    continue
                j_of_x = rate_wt @ _state_kern(kern, ln_inside, state)
                n_load = coverage.load(cfg, kind, state, case)
                rate = cfg.bandwidth / (n_load * _LN2) * float(
                    np.dot(w, rows[idx] * j_of_x)) / a
                if cfg.speed == 0.0:
                    t_mean = cfg.slot
                else:
                    stay_total = w_always + w_cond * stay_dot[idx] / a
                    t_mean = min(stay_total * cfg.slot + w_cond * leave_dot[idx] / a,
                                 cfg.slot)
                per_state[(case, kind, state.n, state.m)] = StatePerf(p, rate, t_mean)
                case_raw[case] += p * rate * t_mean

    per_case = {CaseKind.LOCAL: cfg.local_rate * cfg.slot}
    total = p_h * per_case[CaseKind.LOCAL]
    for case in (CaseKind.V2I, CaseKind.V2V):
        p_case = split.total(case)
        if cfg.rate_mixture_unnormalized:
            per_case[case] = case_raw[case]
            total += p_case * case_raw[case]
        else:
            per_case[case] = case_raw[case] / p_case if p_case > 0.0 else 0.0
            total += case_raw[case]
    return ThroughputReport(per_state, per_case, total, split.tail_mass_bound)


def delay(cfg: ValidatedConfig) -> float:
    """Average content-delivery delay in slots: (1 - p_h) S / T.

    Zero when every request hits the local cache; infinite when nothing
    can be delivered at all.
    """
    p_h = association.cache_hit_probability(cfg)
    if p_h >= 1.0:
        return 0.0
    total = throughput(cfg).total
    if total <= 0.0:
        return math.inf
    return (1.0 - p_h) * cfg.content_bits / total


def mean_connection_time(cfg: ValidatedConfig) -> float:
    """Slot-level mean connection time over the whole retrieval mixture."""
    split = case_probabilities(cfg)
    report = throughput(cfg)
    total = split.local * cfg.slot
    for key, perf in report.per_state.items():
        total += perf.weight * perf.avg_time
    # unaccounted tail states cannot outlast the slot either
    return min(total + split.tail_mass_bound * cfg.slot, cfg.slot)


@dataclass(frozen=True)
class PerfBreakdown:
    """Per-state rates and connection times with the headline totals."""

    avg_rate: dict
    avg_conn_time: dict
    throughput_total: float
    delay_slots: float


def performance_summary(cfg: ValidatedConfig) -> PerfBreakdown:
    report = throughput(cfg)
    return PerfBreakdown(
        avg_rate={k: v.avg_rate for k, v in report.per_state.items()},
        avg_conn_time={k: v.avg_time for k, v in report.per_state.items()},
        throughput_total=report.total,
        delay_slots=delay(cfg),
    )
