"""Drop-based ground-truth simulator.

Each drop samples a fresh network in a disc around the typical receiver,
executes the content-retrieval walk over the power-ordered nodes, and
measures SINR, sojourn, rate, and connection time.  Per-drop RNG
substreams are derived from (seed, drop index), so runs are bit-exact
regardless of worker count and individual drops can be replayed.

Per-drop draw order: cache hit; node counts; BS polar positions; vehicle
polar positions; BS link blockage; vehicle link blockage; vehicle content
flags; fading (BS block then vehicle block); interferer beam alignment
uniforms; receiver motion angle; transmitter motion angle.  Caching a
content set of K_n uniform titles and testing membership of the requested
title is equivalent to the Bernoulli(K_n / N) content flags drawn here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import association, coverage
from .association import AssociationState, CaseKind
from .config import TierKind, ValidatedConfig, tier_params

__all__ = [
    "R_MIN",
    "DropRecord",
    "DropBatch",
    "Estimate",
    "run_drop",
    "run_drops",
    "sc_estimate",
    "pc_estimate",
    "rc_estimate",
    "case_estimate",
    "connection_time_estimate",
    "throughput_estimate",
    "delay_estimate",
    "sample_interference",
    "sample_tier_distances",
    "write_trace",
]

R_MIN = 1.0  # near-field exclusion for sampled links [m]

_TIER_CODES = {
    TierKind.LOS_BS: 0, TierKind.NLOS_BS: 1,
    TierKind.LOS_VUE: 2, TierKind.NLOS_VUE: 3,
}
_CODE_TIERS = {v: k for k, v in _TIER_CODES.items()}
_CASE_CODES = {CaseKind.LOCAL: 0, CaseKind.V2I: 1, CaseKind.V2V: 2}
_CODE_CASES = {v: k for k, v in _CASE_CODES.items()}


@dataclass(frozen=True)
class DropRecord:
    """One Monte Carlo realization of the full protocol."""

    case: CaseKind
    tier: TierKind | None
    n: int
    m: int
    x: float
    sinr: float
    covered: bool
    sojourn: bool
    connected: bool
    rate: float
    connection_time: float


@dataclass
class DropBatch:
    """Column-wise store of many drops plus the generating context."""

    cfg: ValidatedConfig
    seed: int
    case: np.ndarray
    tier: np.ndarray
    n: np.ndarray
    m: np.ndarray
    x: np.ndarray
    sinr: np.ndarray
    sojourn: np.ndarray
    rate: np.ndarray
    connection_time: np.ndarray
    n_bs: np.ndarray
    n_vue: np.ndarray
    redraws: int

    def __len__(self):
        return self.case.size

    def record(self, i: int) -> DropRecord:
        case = _CODE_CASES[int(self.case[i])]
        tier = None if self.tier[i] < 0 else _CODE_TIERS[int(self.tier[i])]
        covered = bool(self.sinr[i] > self.cfg.sinr_threshold)
        return DropRecord(
            case=case, tier=tier, n=int(self.n[i]), m=int(self.m[i]),
            x=float(self.x[i]), sinr=float(self.sinr[i]), covered=covered,
            sojourn=bool(self.sojourn[i]),
            connected=covered and bool(self.sojourn[i]),
            rate=float(self.rate[i]),
            connection_time=float(self.connection_time[i]),
        )


@dataclass(frozen=True)
class Estimate:
    """Point estimate with a 95% normal-approximation interval."""

    value: float
    ci_lo: float | None
    ci_hi: float | None
    drops: int


@lru_cache(maxsize=64)
class _DrawContext:
    """Per-config constants shared by every drop."""

    def __init__(self, cfg: ValidatedConfig):
        self.cfg = cfg
        radius = cfg.numerics.mc_window_radius
        area = math.pi * radius**2
        self.radius = radius
        self.mean_bs = cfg.lambda_bs * area
        self.mean_vue = cfg.lambda_vue * area
        self.p_h = association.cache_hit_probability(cfg)
        self.sigma2 = cfg.noise_power
        from .propagation import gain_arrays

        self.gains_b, pb = gain_arrays(cfg, "b")
        self.gains_u, pu = gain_arrays(cfg, "u")
        self.cum_b = np.cumsum(pb)
        self.cum_u = np.cumsum(pu)


def _pathloss_vec(cfg: ValidatedConfig, r, los, is_bs: bool):
    alpha = np.where(los, cfg.alpha_los, cfg.alpha_nlos)
    return r ** (-alpha) * np.exp(-cfg.zeta * r)


@lru_cache(maxsize=200000)
def _state_load(cfg: ValidatedConfig, case: CaseKind, kind: TierKind,
                n: int, m: int) -> float:
    return coverage.load(cfg, kind, AssociationState(n, m), case)


def _empirical_load(cfg, ctx, rng, serving_global, xy_bs, xy_vue, has_content):
    """Count window vehicles whose own retrieval walk selects the typical
    receiver's serving node.  Quadratic in the node count; meant for
    spot checks with small windows."""
    n_bs, n_vue = xy_bs.shape[0], xy_vue.shape[0]
    nodes = np.vstack([xy_bs, xy_vue])
    is_bs = np.arange(nodes.shape[0]) < n_bs
    count = 0
    for u in range(n_vue):
        if rng.random() < ctx.p_h:  # own-cache hit: no network walk
            continue
        d = np.hypot(nodes[:, 0] - xy_vue[u, 0], nodes[:, 1] - xy_vue[u, 1])
        d = np.maximum(d, R_MIN)
        d[n_bs + u] = np.inf  # a vehicle is not its own candidate
        a = np.where(is_bs, cfg.a_los_bs, cfg.a_los_vue)
        los = rng.random(nodes.shape[0]) < np.exp(-a * d)
        with np.errstate(divide="ignore"):
            ell = d ** (-np.where(los, cfg.alpha_los, cfg.alpha_nlos)) * np.exp(-cfg.zeta * d)
        power = np.where(is_bs, cfg.ptx_bs * cfg.gain_main_bs,
                         cfg.ptx_vue * cfg.gain_main_vue) * ell
        has_u = rng.random(n_vue) < ctx.p_h
        cand = is_bs.copy()
        cand[n_bs:] |= has_u
        cand[n_bs + u] = False
        if not cand.any():
            continue
        pick = np.argmax(np.where(cand, power, -np.inf))
        if pick == serving_global:
            count += 1
    return count


def _one_drop(cfg: ValidatedConfig, ctx: _DrawContext, rng) -> tuple:
    p_h = ctx.p_h
    redraws = 0
    while True:
        hit = rng.random() < p_h
        nb = int(rng.poisson(ctx.mean_bs))
        nu = int(rng.poisson(ctx.mean_vue))
        if nb + nu == 0:
            redraws += 1
            if redraws > 1000:
                raise RuntimeError("window repeatedly empty; densities too small")
            continue
        if hit:
            return (0, -1, 0, 0, math.nan, math.inf, True, math.inf,
                    cfg.slot, nb, nu, redraws)

        rb = ctx.radius * np.sqrt(rng.random(nb))
        phib = 2.0 * math.pi * rng.random(nb)
        ru = ctx.radius * np.sqrt(rng.random(nu))
        phiu = 2.0 * math.pi * rng.random(nu)
        rb = np.maximum(rb, R_MIN)
        ru = np.maximum(ru, R_MIN)
        los_b = rng.random(nb) < np.exp(-cfg.a_los_bs * rb)
        los_u = rng.random(nu) < np.exp(-cfg.a_los_vue * ru)
        has_content = rng.random(nu) < p_h

        if nb == 0 and not has_content.any():
            redraws += 1
            if redraws > 1000:
                raise RuntimeError("no reachable content source; densities too small")
            continue

        ell_b = _pathloss_vec(cfg, rb, los_b, True)
        ell_u = _pathloss_vec(cfg, ru, los_u, False)
        power_b = cfg.ptx_bs * cfg.gain_main_bs * ell_b
        power_u = cfg.ptx_vue * cfg.gain_main_vue * ell_u

        power = np.concatenate([power_b, power_u])
        cand = np.concatenate([np.ones(nb, bool), has_content])
        serving = int(np.argmax(np.where(cand, power, -np.inf)))
        p_srv = power[serving]
        stronger = power > p_srv
        n_step = 1 + int(stronger.sum())
        los_all = np.concatenate([los_b, los_u])
        is_vue = np.concatenate([np.zeros(nb, bool), np.ones(nu, bool)])
        m_step = int((stronger & is_vue & los_all).sum())

        if serving < nb:
            case = CaseKind.V2I
            kind = TierKind.LOS_BS if los_b[serving] else TierKind.NLOS_BS
            x = float(rb[serving])
        else:
            case = CaseKind.V2V
            kind = TierKind.LOS_VUE if los_u[serving - nb] else TierKind.NLOS_VUE
            x = float(ru[serving - nb])

        # SINR: aligned serving beams, random interferer alignment,
        # unit-mean exponential fading on every link.
        h = rng.exponential(1.0, nb + nu)
        u_gain = rng.random(nb + nu)
        g_int = np.concatenate([
            ctx.gains_b[np.searchsorted(ctx.cum_b, u_gain[:nb])],
            ctx.gains_u[np.searchsorted(ctx.cum_u, u_gain[nb:])],
        ])
        ell = np.concatenate([ell_b, ell_u])
        ptx = np.where(is_vue, cfg.ptx_vue, cfg.ptx_bs)
        rx_terms = ptx * g_int * h * ell
        interference = float(rx_terms.sum() - rx_terms[serving])
        t = tier_params(cfg, kind)
        g0 = t.gain_main * cfg.gain_main_vue
        desired = t.ptx * g0 * h[serving] * ell[serving]
        sinr = desired / (ctx.sigma2 + interference)

        # Motion: the serving-side wedge must keep the receiver all slot.
        theta_r = 2.0 * math.pi * rng.random()
        theta_t = 2.0 * math.pi * rng.random()
        psi = t.beamwidth
        if case is CaseKind.V2V:
            beta = 0.5 * (theta_r - theta_t)
            v_eff = abs(2.0 * cfg.speed * math.cos(beta))
            theta = 0.5 * (theta_r + theta_t)
        else:
            v_eff = cfg.speed
            theta = theta_r
        theta_f = theta if theta <= math.pi else 2.0 * math.pi - theta
        if v_eff * cfg.slot == 0.0 or theta_f > math.pi - 0.5 * psi:
            stays, t_conn = True, cfg.slot
        else:
            sin_exit = math.sin(theta_f + 0.5 * psi)
            d_exit = math.inf if sin_exit <= 0 else x * math.sin(0.5 * psi) / sin_exit
            stays = d_exit >= v_eff * cfg.slot
            t_conn = cfg.slot if stays else d_exit / v_eff

        if cfg.numerics.mc_empirical_load:
            xy_bs = np.column_stack([rb * np.cos(phib), rb * np.sin(phib)])
            xy_vue = np.column_stack([ru * np.cos(phiu), ru * np.sin(phiu)])
            n_load = 1.0 + _empirical_load(cfg, ctx, rng, serving, xy_bs,
                                           xy_vue, has_content)
        else:
            n_load = _state_load(cfg, case, kind, n_step, m_step)
        rate = cfg.bandwidth / n_load * math.log2(1.0 + sinr)

        return (_CASE_CODES[case], _TIER_CODES[kind], n_step, m_step, x,
                sinr, stays, rate, t_conn, nb, nu, redraws)


def _drop_rng(seed: int, index: int):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


def run_drop(cfg: ValidatedConfig, seed: int, index: int = 0) -> DropRecord:
    """Replay a single drop of the (seed, index) substream."""
    ctx = _DrawContext(cfg)
    vals = _one_drop(cfg, ctx, _drop_rng(seed, index))
    case = _CODE_CASES[vals[0]]
    tier = None if vals[1] < 0 else _CODE_TIERS[vals[1]]
    covered = vals[5] > cfg.sinr_threshold
    return DropRecord(
        case=case, tier=tier, n=vals[2], m=vals[3], x=vals[4], sinr=vals[5],
        covered=bool(covered), sojourn=bool(vals[6]),
        connected=bool(covered and vals[6]), rate=vals[7],
        connection_time=vals[8],
    )


def run_drops(cfg: ValidatedConfig, drops: int | None = None,
              seed: int | None = None, jobs: int | None = None) -> DropBatch:
    """Simulate ``drops`` independent drops (defaults from the numerics
    policy).  ``jobs`` only parallelizes; results are bit-identical for
    any worker count."""
    drops = cfg.numerics.mc_drops if drops is None else int(drops)
    seed = cfg.numerics.mc_seed if seed is None else int(seed)
    ctx = _DrawContext(cfg)

    case = np.empty(drops, np.int8)
    tier = np.empty(drops, np.int8)
    n = np.empty(drops, np.int32)
    m = np.empty(drops, np.int32)
    x = np.empty(drops, np.float64)
    sinr = np.empty(drops, np.float64)
    sojourn = np.empty(drops, bool)
    rate = np.empty(drops, np.float64)
    t_conn = np.empty(drops, np.float64)
    n_bs = np.empty(drops, np.int32)
    n_vue = np.empty(drops, np.int32)
    redraw_counts = np.zeros(drops, np.int32)

    def fill(i0: int, i1: int):
        for i in range(i0, i1):
            vals = _one_drop(cfg, ctx, _drop_rng(seed, i))
            (case[i], tier[i], n[i], m[i], x[i], sinr[i], sojourn[i],
             rate[i], t_conn[i], n_bs[i], n_vue[i], redraw_counts[i]) = vals

    if jobs is None or jobs <= 1 or drops < 2:
        fill(0, drops)
    else:
        from concurrent.futures import ThreadPoolExecutor

        chunk = max(1, math.ceil(drops / jobs))
        bounds = [(i, min(i + chunk, drops)) for i in range(0, drops, chunk)]
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            list(pool.map(lambda b: fill(*b), bounds))

    return DropBatch(
        cfg=cfg, seed=seed, case=case, tier=tier, n=n, m=m, x=x, sinr=sinr,
        sojourn=sojourn, rate=rate, connection_time=t_conn, n_bs=n_bs,
        n_vue=n_vue, redraws=int(redraw_counts.sum()),
    )


# ---------------------------------------------------------------------------
# Estimators
# ---------------------------------------------------------------------------

def _bernoulli(flags: np.ndarray) -> Estimate:
    k = flags.size
    mean = float(flags.mean()) if k else math.nan
    half = 1.96 * math.sqrt(max(mean * (1.0 - mean), 0.0) / k) if k else math.nan
    return Estimate(mean, max(mean - half, 0.0), min(mean + half, 1.0), k)


def _mean(values: np.ndarray) -> Estimate:
    k = values.size
    if k == 0:
        return Estimate(math.nan, None, None, 0)
    mean = float(values.mean())
    half = 1.96 * float(values.std(ddof=1)) / math.sqrt(k) if k > 1 else math.nan
    return Estimate(mean, mean - half, mean + half, k)


def _select(batch: DropBatch, case=None, kind=None, n=None, m=None):
    mask = np.ones(len(batch), bool)
    if case is not None:
        mask &= batch.case == _CASE_CODES[case]
    if kind is not None:
        mask &= batch.tier == _TIER_CODES[kind]
    if n is not None:
        mask &= batch.n == n
    if m is not None:
        mask &= batch.m == m
    return mask


def sc_estimate(batch: DropBatch, tau: float, **strata) -> Estimate:
    """P(SINR > tau); local retrievals always count as covered."""
    mask = _select(batch, **strata)
    return _bernoulli(batch.sinr[mask] > tau)


def pc_estimate(batch: DropBatch, tau: float, **strata) -> Estimate:
    """P(SINR > tau and the beam alignment survives the slot)."""
    mask = _select(batch, **strata)
    return _bernoulli((batch.sinr[mask] > tau) & batch.sojourn[mask])


def rc_estimate(batch: DropBatch, rho: float, **strata) -> Estimate:
    """P(rate > rho)."""
    mask = _select(batch, **strata)
    return _bernoulli(batch.rate[mask] > rho)


def case_estimate(batch: DropBatch, case: CaseKind) -> Estimate:
    return _bernoulli(batch.case == _CASE_CODES[case])


def connection_time_estimate(batch: DropBatch, **strata) -> Estimate:
    mask = _select(batch, **strata)
    return _mean(batch.connection_time[mask])


def throughput_estimate(batch: DropBatch, form: str = "product") -> Estimate:
    """Mean delivered bits per slot.

    ``product`` composes mean rate x mean connection time per walk state
    (mirroring the analytic definition); ``joint`` averages the per-drop
    product and so measures what the independence step leaves out.  Local
    retrievals contribute the configured local read rate.
    """
    cfg = batch.cfg
    local_bits = cfg.local_rate * cfg.slot
    if form == "joint":
        contrib = np.where(batch.case == _CASE_CODES[CaseKind.LOCAL],
                           local_bits, batch.rate * batch.connection_time)
        return _mean(contrib)
    if form != "product":
        raise ValueError("form must be 'product' or 'joint'")
    k = len(batch)
    network = batch.case != _CASE_CODES[CaseKind.LOCAL]
    total = (~network).mean() * local_bits
    if network.any():
        keys = (batch.tier.astype(np.int64) + 4 * batch.n.astype(np.int64)
                + 4 * 2**32 * batch.m.astype(np.int64))[network]
        order = np.argsort(keys, kind="stable")
        keys = keys[order]
        rates = batch.rate[network][order]
        times = batch.connection_time[network][order]
        starts = np.flatnonzero(np.concatenate([[True], keys[1:] != keys[:-1]]))
        counts = np.diff(np.concatenate([starts, [keys.size]]))
        rate_means = np.add.reduceat(rates, starts) / counts
        time_means = np.add.reduceat(times, starts) / counts
        total += float((counts / k * rate_means * time_means).sum())
    return Estimate(float(total), None, None, k)


def delay_estimate(batch: DropBatch) -> Estimate:
    """(1 - p_h) S / T with the product-form throughput estimate."""
    cfg = batch.cfg
    p_h = association.cache_hit_probability(cfg)
    if p_h >= 1.0:
        return Estimate(0.0, None, None, len(batch))
    t = throughput_estimate(batch, form="product")
    value = math.inf if t.value <= 0 else (1.0 - p_h) * cfg.content_bits / t.value
    return Estimate(value, None, None, len(batch))


# ---------------------------------------------------------------------------
# Targeted samplers for cross-validation
# ---------------------------------------------------------------------------

def sample_interference(cfg: ValidatedConfig, drops: int, seed: int) -> np.ndarray:
    """Aggregate interference of the unconditioned field, one value per
    drop (all nodes transmit; no association involved)."""
    ctx = _DrawContext(cfg)
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0x1F,)))
    counts_b = rng.poisson(ctx.mean_bs, drops)
    counts_u = rng.poisson(ctx.mean_vue, drops)
    out = np.zeros(drops)
    for is_bs, counts in ((True, counts_b), (False, counts_u)):
        total = int(counts.sum())
        r = np.maximum(ctx.radius * np.sqrt(rng.random(total)), R_MIN)
        a = cfg.a_los_bs if is_bs else cfg.a_los_vue
        los = rng.random(total) < np.exp(-a * r)
        ell = _pathloss_vec(cfg, r, los, is_bs)
        h = rng.exponential(1.0, total)
        cum = ctx.cum_b if is_bs else ctx.cum_u
        gains = ctx.gains_b if is_bs else ctx.gains_u
        g = gains[np.searchsorted(cum, rng.random(total))]
        ptx = cfg.ptx_bs if is_bs else cfg.ptx_vue
        terms = ptx * g * h * ell
        idx = np.repeat(np.arange(drops), counts)
        np.add.at(out, idx, terms)
    return out


def sample_tier_distances(cfg: ValidatedConfig, kind: TierKind, n: int,
                          samples: int, seed: int) -> np.ndarray:
    """Distance to the n-th closest tier-``kind`` node over independent
    windows; inf when fewer than n such nodes exist."""
    t = tier_params(cfg, kind)
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0x2F,)))
    radius = cfg.numerics.mc_window_radius
    counts = rng.poisson(t.density * math.pi * radius**2, samples)
    total = int(counts.sum())
    r = radius * np.sqrt(rng.random(total))
    p_los = np.exp(-t.blockage * r)
    keep = rng.random(total) < (p_los if kind.is_los else 1.0 - p_los)
    r = np.where(keep, r, np.inf)
    out = np.full(samples, np.inf)
    start = 0
    for i, c in enumerate(counts):
        if c:
            seg = np.sort(r[start:start + c])
            if c >= n and np.isfinite(seg[n - 1]):
                out[i] = seg[n - 1]
            start += c
    return out


def write_trace(batch: DropBatch, path) -> None:
    """One drop per line, columnar text."""
    cols = ("case", "tier", "n", "m", "x", "sinr", "covered", "sojourn",
            "connected", "rate", "connection_time")
    with open(path, "w") as fh:
        fh.write("# " + " ".join(cols) + "\n")
        for i in range(len(batch)):
            rec = batch.record(i)
            fh.write(
                f"{rec.case.value} {rec.tier.value if rec.tier else '-'} "
                f"{rec.n} {rec.m} {rec.x:.6g} {rec.sinr:.6g} "
                f"{int(rec.covered)} {int(rec.sojourn)} {int(rec.connected)} "
                f"{rec.rate:.6g} {rec.connection_time:.6g}\n"
            )
