"""Distance order statistics of the node processes, the multi-step
cache-aware association law, and the content-retrieval case split.

The serving node is found by walking all nodes in decreasing boresight
received power; vehicles without the requested content are skipped, the
first base station always serves.  A walk state (n, m) means the n-th
contacted node serves after m LOS-vehicle and n-m-1 NLOS-vehicle misses.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import special

from .config import ALL_TIERS, BS_TIERS, VUE_TIERS, TierKind, ValidatedConfig, tier_params
from . import numerics, propagation

__all__ = [
    "AssociationState",
    "CaseKind",
    "CaseSplit",
    "omega",
    "intensity",
    "nth_distance_cdf",
    "nth_distance_pdf",
    "association_probability",
    "serving_distance_pdf",
    "cache_hit_probability",
    "case_probabilities",
]


@dataclass(frozen=True)
class AssociationState:
    """Walk step index ``n`` and LOS-vehicle miss count ``m`` (m <= n-1)."""

    n: int
    m: int

    def __post_init__(self):
        if self.n < 1 or not 0 <= self.m <= self.n - 1:
            raise ValueError(f"invalid association state (n={self.n}, m={self.m})")

    def step_index(self, kind: TierKind) -> int:
        """Which order statistic of tier ``kind`` the walk touches."""
        if kind.is_bs:
            return 1
        if kind is TierKind.LOS_VUE:
            return self.m + 1
        return self.n - self.m


class CaseKind(enum.Enum):
    """Where the content comes from."""

    LOCAL = "local"
    V2I = "v2i"
    V2V = "v2v"


def case_tiers(case: CaseKind):
    if case is CaseKind.V2I:
        return BS_TIERS
    if case is CaseKind.V2V:
        return VUE_TIERS
    return ()


def omega(cfg: ValidatedConfig, kind: TierKind, r):
    """Radial intensity integral of the tier thinning, int_0^r P_k(x) x dx.

    LOS tiers admit the closed form (1 - (1 + a r) e^(-a r)) / a^2 and a
    finite limit at r = inf; the NLOS integral grows like r^2/2 and is
    divergent at infinity, so a finite radius (e.g. the r_max policy knob)
    is required there.
    """
    t = tier_params(cfg, kind)
    a = t.blockage
    arr = np.asarray(r, dtype=float)
    scalar = arr.ndim == 0
    r = np.atleast_1d(arr).astype(float)
    if np.any(r < 0):
        raise ValueError("need r >= 0")
    inf = np.isinf(r)
    if inf.any() and not kind.is_los:
        raise ValueError(
            "omega diverges for NLOS tiers at r = inf; integrate to a "
            "finite radius such as the r_max policy"
        )
    ar = np.where(inf, 0.0, a * r)
    los_part = -np.expm1(-ar) - ar * np.exp(-ar)
    # equivalent to 1 - (1 + ar) e^(-ar), written to stay accurate near 0
    los_part = np.where(ar < 1e-4, 0.5 * ar**2 - ar**3 / 3.0, los_part) / a**2
    los_part[inf] = 1.0 / a**2
    out = los_part if kind.is_los else 0.5 * r**2 - los_part
    return float(out[0]) if scalar else out


def intensity(cfg: ValidatedConfig, kind: TierKind, r):
    """Mean number of tier-k nodes within radius ``r``: 2 pi lambda Omega."""
    t = tier_params(cfg, kind)
    if not kind.is_los:
        arr = np.asarray(r, dtype=float)
        if np.any(np.isinf(arr)):
            scalar = arr.ndim == 0
            r1 = np.atleast_1d(arr).astype(float)
            out = np.full_like(r1, np.inf if t.density > 0 else 0.0)
            fin = ~np.isinf(r1)
            out[fin] = 2.0 * np.pi * t.density * omega(cfg, kind, r1[fin])
            return float(out[0]) if scalar else out
    return 2.0 * np.pi * t.density * omega(cfg, kind, r)


def poisson_pmf(j: int, mu):
    """P(N = j) for N ~ Poisson(mu), stable for large mu, vectorized in mu."""
    mu = np.asarray(mu, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        logp = j * np.log(mu) - mu - special.gammaln(j + 1)
        out = np.exp(logp)
    out = np.where(mu == 0.0, 1.0 if j == 0 else 0.0, out)
    out = np.where(np.isinf(mu), 0.0, out)
    return float(out) if out.ndim == 0 else out


def nth_distance_cdf(cfg: ValidatedConfig, kind: TierKind, n: int, r):
    """CDF of the distance to the n-th closest tier-k node.

    Defective for LOS tiers: the limit at infinity is the probability that
    at least n LOS nodes exist at all.
    """
    if n < 0:
        raise ValueError("order must be >= 0")
    if n == 0:
        r = np.asarray(r, dtype=float)
        out = np.zeros_like(r)
        return float(out) if out.ndim == 0 else out
    mu = np.asarray(intensity(cfg, kind, r), dtype=float)
    out = np.where(np.isinf(mu), 1.0, special.gammainc(n, np.where(np.isinf(mu), 1.0, mu)))
    return float(out) if out.ndim == 0 else out


def nth_distance_pdf(cfg: ValidatedConfig, kind: TierKind, n: int, r):
    """Density of the distance to the n-th closest tier-k node."""
    if n < 1:
        raise ValueError("order must be >= 1")
    t = tier_params(cfg, kind)
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("need r >= 0")
    mu = intensity(cfg, kind, r)
    base = 2.0 * np.pi * r * t.density * propagation.los_factor(cfg, kind, r)
    out = base * poisson_pmf(n - 1, mu)
    return float(out) if out.ndim == 0 else out


def _char_distance(cfg: ValidatedConfig, kind: TierKind) -> float:
    t = tier_params(cfg, kind)
    if kind.is_los or t.density <= 0.0:
        return 2.0 / t.blockage
    return 1.0 / math.sqrt(math.pi * t.density)


def _state_integrand(cfg: ValidatedConfig, kind: TierKind, state: AssociationState):
    """Vectorized integrand of the association probability for one state:
    the serving-tier order-statistic density times the probability that
    every other tier has exactly the walked-past number of stronger nodes.
    """
    others = [i for i in ALL_TIERS if i is not kind]
    n_k = state.step_index(kind)

    def integrand(r):
        arr = np.asarray(r, dtype=float)
        scalar = arr.ndim == 0
        r1 = np.atleast_1d(arr).astype(float)
        out = np.zeros_like(r1)
        ok = r1 > 0
        if ok.any():
            rr = r1[ok]
            with np.errstate(over="ignore"):
                ell = np.asarray(propagation.path_loss(cfg, kind, rr))
            live = ell > 0.0  # beyond underflow range everything is 0 anyway
            rr = rr[live]
            if rr.size:
                val = nth_distance_pdf(cfg, kind, n_k, rr)
                for i in others:
                    lam = propagation.lambda_map(cfg, kind, i, rr)
                    val = val * poisson_pmf(state.step_index(i) - 1,
                                            intensity(cfg, i, lam))
                idx = np.flatnonzero(ok)
                out[idx[live]] = val
        return float(out[0]) if scalar else out

    return integrand


@lru_cache(maxsize=200000)
def association_probability(
    cfg: ValidatedConfig, kind: TierKind, state: AssociationState
) -> float:
    """Probability that the walk's n-th contact is a tier-k node after m
    LOS-vehicle and n-m-1 NLOS-vehicle misses."""
    if tier_params(cfg, kind).density <= 0.0:
        return 0.0
    integrand = _state_integrand(cfg, kind, state)
    scale = _char_distance(cfg, kind) * math.sqrt(state.step_index(kind))
    res = numerics.integrate(integrand, 0.0, math.inf, cfg.numerics, scale=scale)
    return min(max(res.value, 0.0), 1.0)


def serving_distance_pdf(cfg: ValidatedConfig, kind: TierKind, state: AssociationState, x):
    """Density of the serving distance, conditioned on tier and walk state."""
    a = association_probability(cfg, kind, state)
    if a <= 0.0:
        raise ValueError(
            f"serving-distance distribution undefined: association "
            f"probability vanishes for {kind} at (n={state.n}, m={state.m})"
        )
    out = _state_integrand(cfg, kind, state)(x) / a
    arr = np.asarray(out)
    return float(arr) if arr.ndim == 0 else out


def cache_hit_probability(cfg: ValidatedConfig) -> float:
    """Chance the requested content sits in the local cache."""
    return cfg.cache_size / cfg.catalog_size


# ---------------------------------------------------------------------------
# Shared radial grids: one fixed high-resolution grid per serving tier lets
# the whole (n, m) family reduce to row operations over cached geometry.
# ---------------------------------------------------------------------------

@lru_cache(maxsize=128)
def _shared_grid(cfg: ValidatedConfig, kind: TierKind, level: str = "fine"):
    """Fixed radial grid (nodes, weights) over (0, inf) for tier ``kind``;
    resolution is checked against the closed-form total mass of the
    nearest-node density and refined if needed.  The ``coarse`` level backs
    the heavy per-state tensor paths."""
    scale = 2.0 * _char_distance(cfg, kind)
    t = tier_params(cfg, kind)
    order, panels = (12, (201, 401, 801)) if level == "fine" else (6, (61, 121, 241))

    def build(n_lin):
        edges = np.concatenate([
            [0.0], np.geomspace(1e-7, 0.02, 24), np.linspace(0.02, 1.0, n_lin)[1:]
        ])
        nodes, wts = np.polynomial.legendre.leggauss(order)
        a_e, b_e = edges[:-1], edges[1:]
        mid = 0.5 * (a_e + b_e)[:, None]
        half = 0.5 * (b_e - a_e)[:, None]
        tt = (mid + half * nodes[None, :]).ravel()
        ww = (half * wts[None, :]).ravel()
        x = scale * tt / (1.0 - tt)
        w = ww * scale / (1.0 - tt) ** 2
        return x, w

    if t.density <= 0.0:
        target = 0.0
    elif kind.is_los:
        target = -math.expm1(-float(intensity(cfg, kind, math.inf)))
    else:
        target = 1.0
    tol = 1e-7 if level == "fine" else 1e-6
    for n_lin in panels:
        x, w = build(n_lin)
        mass = float(np.dot(w, nth_distance_pdf(cfg, kind, 1, x)))
        if abs(mass - target) < tol:
            break
    return x, w


@lru_cache(maxsize=128)
def _grid_geometry(cfg: ValidatedConfig, kind: TierKind, level: str = "fine"):
    """Per-node geometry shared by every state with serving tier ``kind``:
    the base density factor, own-tier intensity, and the other-tier
    intensities at the equal-power distances."""
    x, w = _shared_grid(cfg, kind, level)
    t = tier_params(cfg, kind)
    base = 2.0 * math.pi * x * t.density * propagation.los_factor(cfg, kind, x)
    mu_own = np.asarray(intensity(cfg, kind, x))
    mu_other = {}
    with np.errstate(over="ignore"):
        ell = np.asarray(propagation.path_loss(cfg, kind, x))
    live = ell > 0.0
    for i in ALL_TIERS:
        if i is kind:
            continue
        mu = np.full_like(x, np.inf)
        if live.any():
            lam = propagation.lambda_map(cfg, kind, i, x[live])
            mu[live] = intensity(cfg, i, lam)
        mu_other[i] = mu
    return x, w, base, mu_own, mu_other


def _poisson_rows(mu: np.ndarray, j_max: int) -> np.ndarray:
    """Rows pois(j, mu) for j = 0..j_max, vectorized over mu."""
    rows = np.empty((j_max + 1, mu.size))
    with np.errstate(over="ignore", invalid="ignore"):
        rows[0] = np.where(np.isinf(mu), 0.0, np.exp(-mu))
        for j in range(1, j_max + 1):
            rows[j] = np.where(np.isinf(mu), 0.0, rows[j - 1] * mu / j)
    return rows


def state_density_rows(cfg: ValidatedConfig, kind: TierKind, states,
                       level: str = "fine"):
    """Unnormalized serving-distance density rows (one per state) on the
    shared grid; row integrals equal the association probabilities."""
    x, w, base, mu_own, mu_other = _grid_geometry(cfg, kind, level)
    all_states = list(states)
    need = {i: 1 for i in ALL_TIERS}
    for st in all_states:
        for i in ALL_TIERS:
            need[i] = max(need[i], st.step_index(i))
    own_rows = _poisson_rows(mu_own, need[kind] - 1)
    other_rows = {i: _poisson_rows(mu_other[i], need[i] - 1)
                  for i in ALL_TIERS if i is not kind}
    out = np.empty((len(all_states), x.size))
    for idx, st in enumerate(all_states):
        row = base * own_rows[st.step_index(kind) - 1]
        for i, rows in other_rows.items():
            row = row * rows[st.step_index(i) - 1]
        out[idx] = row
    return x, w, out


@lru_cache(maxsize=4096)
def _step_masses(cfg: ValidatedConfig, n: int):
    """Association probabilities of every (tier, m) combination at walk
    step ``n``, evaluated in one batch on the shared grids."""
    states = [AssociationState(n, m) for m in range(n)]
    masses = {}
    for kind in ALL_TIERS:
        if tier_params(cfg, kind).density <= 0.0:
            for st in states:
                masses[(kind, st.m)] = 0.0
            continue
        x, w, rows = state_density_rows(cfg, kind, states)
        vals = rows @ w
        for st, v in zip(states, vals):
            masses[(kind, st.m)] = float(min(max(v, 0.0), 1.0))
    return masses


@dataclass(frozen=True)
class CaseSplit:
    """Total and per-state content-retrieval probabilities."""

    local: float
    v2i: float
    v2v: float
    family: dict  # (CaseKind, TierKind, n, m) -> probability
    tail_mass_bound: float
    truncated_at: int
    tail_warning: bool

    def total(self, case: CaseKind) -> float:
        return {CaseKind.LOCAL: self.local, CaseKind.V2I: self.v2i,
                CaseKind.V2V: self.v2v}[case]

    def state_probability(self, case: CaseKind, kind: TierKind,
                          state: AssociationState) -> float:
        return self.family.get((case, kind, state.n, state.m), 0.0)


def state_probability(cfg: ValidatedConfig, case: CaseKind, kind: TierKind,
                      state: AssociationState) -> float:
    """P that retrieval resolves in ``case`` via tier ``kind`` at state
    (n, m): the walk geometry times the cache miss/hit run."""
    p_h = cache_hit_probability(cfg)
    a = _step_masses(cfg, state.n)[(kind, state.m)]
    if case is CaseKind.V2I:
        if not kind.is_bs:
            raise ValueError("V2I pairs with BS tiers")
        return (1.0 - p_h) ** state.n * a
    if case is CaseKind.V2V:
        if kind.is_bs:
            raise ValueError("V2V pairs with vehicle tiers")
        return (1.0 - p_h) ** state.n * p_h * a
    raise ValueError("local retrieval has no walk state")


@lru_cache(maxsize=64)
def case_probabilities(cfg: ValidatedConfig) -> CaseSplit:
    """Split the retrieval probability into local / V2I / V2V.

    The infinite double sum over walk states is truncated once the
    unaccounted probability mass falls below the series tail tolerance;
    the residual is reported, not hidden.
    """
    p_h = cache_hit_probability(cfg)
    family = {}

    def step_mass(n, m):
        a_vals = _step_masses(cfg, n)
        run = (1.0 - p_h) ** n
        mass = 0.0
        for kind in BS_TIERS:
            p = run * a_vals[(kind, m)]
            family[(CaseKind.V2I, kind, n, m)] = p
            mass += p
        for kind in VUE_TIERS:
            p = run * p_h * a_vals[(kind, m)]
            family[(CaseKind.V2V, kind, n, m)] = p
            mass += p
        return mass

    series = numerics.sum_steps(
        lambda n, m: 1.0, step_mass, cfg.numerics, mass_budget=1.0 - p_h
    )
    v2i = sum(p for (case, _, _, _), p in family.items() if case is CaseKind.V2I)
    v2v = sum(p for (case, _, _, _), p in family.items() if case is CaseKind.V2V)
    return CaseSplit(
        local=p_h,
        v2i=v2i,
        v2v=v2v,
        family=family,
        tail_mass_bound=series.tail_mass_bound,
        truncated_at=series.truncated_at,
        tail_warning=series.tail_warning,
    )
