"""Shared numerical machinery: adaptive quadrature, truncated double series,
and the principal Lambert-W branch.

Everything here is pure and reentrant.  The quadrature works on vectorized
integrands (callables that accept/return numpy arrays); scalar callables can
be used with ``vectorized=False``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = [
    "QuadResult",
    "SeriesResult",
    "QuadratureError",
    "integrate",
    "sum_steps",
    "lambert_w0",
    "LAMBERT_TOL",
]

LAMBERT_TOL = 1e-12

# Gauss-Kronrod 7-15 pair on [-1, 1].  Kronrod nodes/weights, with the
# embedded 7-point Gauss rule sitting on every other node.
_XK = np.array([
    -0.991455371120812639206854697526329,
    -0.949107912342758524526189684047851,
    -0.864864423359769072789712788640926,
    -0.741531185599394439863864773280788,
    -0.586087235467691130294144838258730,
    -0.405845151377397166906606412076961,
    -0.207784955007898467600689403773245,
    0.0,
    0.207784955007898467600689403773245,
    0.405845151377397166906606412076961,
    0.586087235467691130294144838258730,
    0.741531185599394439863864773280788,
    0.864864423359769072789712788640926,
    0.949107912342758524526189684047851,
    0.991455371120812639206854697526329,
])
_WK = np.array([
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
    0.204432940075298892414161999234649,
    0.190350578064785409913256402421014,
    0.169004726639267902826583426598550,
    0.140653259715525918745189590510238,
    0.104790010322250183839876322541518,
    0.063092092629978553290700663189204,
    0.022935322010529224963732008058970,
])
_WG = np.array([
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
    0.381830050505118944950369775488975,
    0.279705391489276667901467771423780,
    0.129484966168869693270611432679082,
])


@dataclass(frozen=True)
class QuadResult:
    """Outcome of one quadrature: value, error bound, work done."""

    value: float
    abs_error_estimate: float
    evaluations: int


@dataclass(frozen=True)
class SeriesResult:
    """Outcome of a truncated (n, m) double sum.

    ``tail_mass_bound`` is the probability mass left unsummed; it bounds the
    truncation error of any series whose terms lie in [0, 1].
    """

    value: float
    truncated_at: int
    tail_mass_bound: float
    tail_warning: bool = False


class QuadratureError(RuntimeError):
    """Quadrature did not converge.  Carries the best estimate."""

    def __init__(self, message: str, result: QuadResult):
        super().__init__(message)
        self.result = result


def _panel_rule(f, panels: np.ndarray):
    """Apply the GK 7-15 pair to every [a, b] row of ``panels`` at once."""
    mid = 0.5 * (panels[:, 0] + panels[:, 1])
    half = 0.5 * (panels[:, 1] - panels[:, 0])
    pts = mid[:, None] + half[:, None] * _XK[None, :]
    y = np.asarray(f(pts.ravel()), dtype=float).reshape(pts.shape)
    k15 = (y * _WK).sum(axis=1) * half
    g7 = (y[:, 1::2] * _WG).sum(axis=1) * half
    err = np.abs(k15 - g7)
    return k15, err, y.size


def integrate(
    f: Callable,
    lo: float,
    hi: float,
    policy=None,
    *,
    breakpoints=(),
    scale: float = 1.0,
    vectorized: bool = True,
    max_panels: int = 4096,
) -> QuadResult:
    """Integrate ``f`` over (lo, hi) with adaptive Gauss-Kronrod panels.

    ``hi`` may be ``inf``; the semi-infinite range is mapped onto (0, 1)
    through r = lo + scale * t / (1 - t) before subdividing, so no naive
    upper-limit truncation is involved.  ``breakpoints`` (in the original
    coordinate) seed panel edges, which helps with piecewise-smooth
    integrands.

    Raises :class:`QuadratureError` (carrying the best estimate) if the
    panel budget is exhausted before the tolerances are met.
    """
    rel_tol = getattr(policy, "quad_rel_tol", 1e-8)
    abs_tol = getattr(policy, "quad_abs_tol", 1e-12)

    if not vectorized:
        g = f
        f = lambda x: np.array([g(float(v)) for v in np.atleast_1d(x)])

    if math.isinf(hi):
        inner = f
        s = float(scale)

        def f(t):  # noqa: ANN001 - vectorized wrapper
            t = np.asarray(t, dtype=float)
            u = 1.0 - t
            return inner(lo + s * t / u) * (s / u**2)

        edges = [0.0]
        for b in breakpoints:
            rb = (b - lo) / s
            if rb > 0:
                edges.append(rb / (1.0 + rb))
        edges.append(1.0)
        edges = np.unique(np.clip(edges, 0.0, 1.0))
    else:
        edges = np.unique(np.clip([lo, *breakpoints, hi], lo, hi))

    panels = np.column_stack([edges[:-1], edges[1:]])
    vals, errs, nev = _panel_rule(f, panels)
    evals = nev

    while True:
        total = vals.sum()
        err_total = errs.sum()
        target = max(abs_tol, rel_tol * abs(total))
        if err_total <= target:
            return QuadResult(float(total), float(err_total), evals)
        if len(panels) >= max_panels:
            raise QuadratureError(
                f"no convergence after {len(panels)} panels "
                f"(error {err_total:.3e} > target {target:.3e})",
                QuadResult(float(total), float(err_total), evals),
            )
        # Split every panel holding a meaningful share of the excess error.
        cut = max(errs.max() * 0.25, target / max(len(panels), 1) * 0.5)
        split = errs >= cut
        if not split.any():
            split[np.argmax(errs)] = True
        keep_p, keep_v, keep_e = panels[~split], vals[~split], errs[~split]
        a, b = panels[split, 0], panels[split, 1]
        m = 0.5 * (a + b)
        new_panels = np.column_stack(
            [np.concatenate([a, m]), np.concatenate([m, b])]
        )
        new_vals, new_errs, nev = _panel_rule(f, new_panels)
        evals += nev
        panels = np.vstack([keep_p, new_panels])
        vals = np.concatenate([keep_v, new_vals])
        errs = np.concatenate([keep_e, new_errs])


def sum_steps(term, weight, policy, mass_budget: float = 1.0) -> SeriesResult:
    """Sum ``term(n, m) * weight(n, m)`` over n >= 1, 0 <= m <= n-1.

    The weights must be the nonnegative per-step probability masses; their
    grand total is ``mass_budget``.  Summation stops at the first n where
    the remaining mass ``mass_budget - accumulated`` drops below
    ``policy.series_tail_tol``, or at ``policy.series_max_steps``.  The
    residual mass is reported as ``tail_mass_bound``; if it still exceeds
    ten times the tolerance at the cap, the result carries a warning flag.
    """
    n_max = policy.series_max_steps
    tol = policy.series_tail_tol
    value = 0.0
    acc = 0.0
    truncated_at = 0
    for n in range(1, n_max + 1):
        for m in range(n):
            w = weight(n, m)
            if w < 0:
                raise ValueError(f"negative weight {w} at (n={n}, m={m})")
            if w:
                value += term(n, m) * w
                acc += w
        truncated_at = n
        if mass_budget - acc < tol:
            break
    tail = max(mass_budget - acc, 0.0)
    return SeriesResult(value, truncated_at, tail, tail > 10.0 * tol)


def lambert_w0(y, tol: float = LAMBERT_TOL):
    """Principal branch of the Lambert W function, w * exp(w) = y.

    Valid for y >= -1/e.  Halley iteration from the usual piecewise initial
    guess; converges to a relative residual below ``tol``.  Accepts scalars
    or arrays.
    """
    arr = np.asarray(y, dtype=float)
    scalar = arr.ndim == 0
    v = np.atleast_1d(arr).copy()

    branch = -1.0 / math.e
    if np.any(v < branch - 1e-14) or np.any(np.isnan(v)):
        raise ValueError("lambert_w0 requires y >= -1/e")
    v = np.maximum(v, branch)

    w = np.empty_like(v)
    near = v < -0.25
    if near.any():
        p = np.sqrt(2.0 * np.maximum(1.0 + math.e * v[near], 0.0))
        w[near] = -1.0 + p - p**2 / 3.0 + 11.0 * p**3 / 72.0
    big = v > math.e
    if big.any():
        lv = np.log(v[big])
        llv = np.log(lv)
        w[big] = lv - llv + llv / lv
    mid = ~(near | big)
    w[mid] = v[mid] / (1.0 + v[mid])  # fine for y in [-0.25, e]

    for _ in range(80):
        ew = np.exp(w)
        res = w * ew - v
        if np.all(np.abs(res) <= tol * np.maximum(np.abs(v), 1e-290)):
            break
        wp1 = w + 1.0
        # Halley step; at the branch point wp1 == 0 and w is already exact.
        denom = ew * wp1 - (w + 2.0) * res / (2.0 * wp1)
        step = np.where(wp1 != 0.0, res / np.where(denom != 0.0, denom, 1.0), 0.0)
        w = w - step

    return float(w[0]) if scalar else w.reshape(arr.shape)
