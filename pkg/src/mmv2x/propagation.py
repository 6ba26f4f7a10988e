"""Blockage, path loss, antenna-gain distribution, and the equal-power
distance map between tiers.

All functions are pure in the validated config and accept scalars or
numpy arrays for the geometric argument.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .config import TierKind, ValidatedConfig, tier_params
from .numerics import lambert_w0

__all__ = [
    "GainOutcome",
    "los_probability",
    "los_factor",
    "path_loss",
    "inverse_path_loss",
    "received_power",
    "lambda_map",
    "gain_distribution",
    "gain_arrays",
]


@dataclass(frozen=True)
class GainOutcome:
    """One of the four effective antenna gains seen from an interferer."""

    gain: float
    prob: float


def _blockage(cfg: ValidatedConfig, tx_class: str) -> float:
    return cfg.a_los_bs if tx_class == "b" else cfg.a_los_vue


def los_probability(cfg: ValidatedConfig, tx_class: str, r):
    """Probability that a link of length ``r`` from a ``tx_class``
    transmitter ('b' or 'u') is line of sight: exp(-a * r)."""
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("distance must be nonnegative")
    out = np.exp(-_blockage(cfg, tx_class) * r)
    return float(out) if out.ndim == 0 else out


def los_factor(cfg: ValidatedConfig, kind: TierKind, r):
    """Tier thinning P_k(r): the LOS probability for LOS tiers, its
    complement for NLOS tiers."""
    p = los_probability(cfg, kind.tx_class, r)
    return p if kind.is_los else 1.0 - p


def path_loss(cfg: ValidatedConfig, kind: TierKind, r):
    """Power attenuation r^(-alpha) * exp(-zeta * r); strictly decreasing."""
    t = tier_params(cfg, kind)
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise ValueError("path loss is singular at r = 0; need r > 0")
    out = r ** (-t.alpha) * np.exp(-t.zeta * r)
    return float(out) if out.ndim == 0 else out


def inverse_path_loss(cfg: ValidatedConfig, kind: TierKind, y):
    """Distance at which the tier's path loss equals ``y``.

    For zeta > 0 this is (alpha/zeta) * W0((zeta/alpha) * y^(-1/alpha));
    with zeta = 0 it reduces to y^(-1/alpha).
    """
    t = tier_params(cfg, kind)
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0) or np.any(~np.isfinite(y)):
        raise ValueError("inverse path loss needs finite y > 0")
    if t.zeta == 0.0:
        out = y ** (-1.0 / t.alpha)
    else:
        ratio = t.alpha / t.zeta
        out = ratio * np.asarray(
            lambert_w0(y ** (-1.0 / t.alpha) / ratio,
                       tol=cfg.numerics.lambertw_tol))
    return float(out) if out.ndim == 0 else out


def received_power(cfg: ValidatedConfig, kind: TierKind, r):
    """Boresight association power P_t * g_M * l_k(r) from a tier-k node."""
    t = tier_params(cfg, kind)
    return t.ptx * t.gain_main * path_loss(cfg, kind, r)


def lambda_map(cfg: ValidatedConfig, k: TierKind, i: TierKind, r):
    """Distance at which tier ``i`` delivers the same association power as
    tier ``k`` does at distance ``r``.  Identity when i == k."""
    if i == k:
        r = np.asarray(r, dtype=float)
        if np.any(r <= 0):
            raise ValueError("need r > 0")
        return float(r) if r.ndim == 0 else r.copy()
    tk, ti = tier_params(cfg, k), tier_params(cfg, i)
    ratio = (tk.ptx * tk.gain_main) / (ti.ptx * ti.gain_main)
    return inverse_path_loss(cfg, i, ratio * path_loss(cfg, k, r))


def gain_distribution(cfg: ValidatedConfig, tx_class: str):
    """The four effective antenna-gain outcomes from a ``tx_class``
    interferer at the (vehicle) receiver, with their probabilities.

    Main/side lobe selection on each end is governed by the beamwidth
    fraction psi / (2*pi); the four probabilities partition unity exactly.
    """
    if tx_class == "b":
        g_main, g_side, psi = cfg.gain_main_bs, cfg.gain_side_bs, cfg.beamwidth_bs
    elif tx_class == "u":
        g_main, g_side, psi = cfg.gain_main_vue, cfg.gain_side_vue, cfg.beamwidth_vue
    else:
        raise ValueError(f"unknown transmitter class {tx_class!r}")
    w_tx = psi / (2.0 * np.pi)
    w_rx = cfg.beamwidth_vue / (2.0 * np.pi)
    p_mm = w_tx * w_rx
    p_ms = w_tx * (1.0 - w_rx)
    p_sm = (1.0 - w_tx) * w_rx
    # closing against the in-order partial sum keeps the in-order total an
    # exact 1.0 in floating point
    p_ss = 1.0 - (p_mm + p_ms + p_sm)
    return (
        GainOutcome(g_main * cfg.gain_main_vue, p_mm),
        GainOutcome(g_main * cfg.gain_side_vue, p_ms),
        GainOutcome(g_side * cfg.gain_main_vue, p_sm),
        GainOutcome(g_side * cfg.gain_side_vue, p_ss),
    )


@lru_cache(maxsize=None)
def gain_arrays(cfg: ValidatedConfig, tx_class: str):
    """(gains, probabilities) of :func:`gain_distribution` as ndarrays."""
    outcomes = gain_distribution(cfg, tx_class)
    gains = np.array([o.gain for o in outcomes])
    probs = np.array([o.prob for o in outcomes])
    return gains, probs


def boresight_gain(cfg: ValidatedConfig, kind: TierKind) -> float:
    """Desired-link gain: both ends aligned on their main lobes."""
    t = tier_params(cfg, kind)
    return t.gain_main * cfg.gain_main_vue
