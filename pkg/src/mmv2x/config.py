"""System parameters, validation, and the four-tier view of the network.

Every physical symbol used by the model lives in :class:`SystemConfig`;
defaults follow the standard evaluation parameter set.  All fields are
stored in SI/linear units internally.  Config files (flat JSON) may use
unit-suffixed key variants such as ``ptx_bs_dbm`` or ``beamwidth_bs_deg``,
which are normalized on load.
"""

from __future__ import annotations

import enum
import json
import math
import warnings
from dataclasses import dataclass, field, fields
from functools import lru_cache
from pathlib import Path

__all__ = [
    "ConfigError",
    "NumericsPolicy",
    "SystemConfig",
    "ValidatedConfig",
    "TierKind",
    "TierParams",
    "BS_TIERS",
    "VUE_TIERS",
    "ALL_TIERS",
    "db_to_linear",
    "linear_to_db",
    "dbm_to_watts",
    "watts_to_dbm",
    "config_from_dict",
    "load_config",
    "check",
    "validate",
    "tier_params",
]


def db_to_linear(x: float) -> float:
    return 10.0 ** (x / 10.0)


def linear_to_db(x: float) -> float:
    return 10.0 * math.log10(x)


def dbm_to_watts(x: float) -> float:
    return 10.0 ** ((x - 30.0) / 10.0)


def watts_to_dbm(x: float) -> float:
    return 10.0 * math.log10(x) + 30.0


class ConfigError(ValueError):
    """Raised when a configuration violates an invariant.

    ``diagnostics`` lists every violation, one message per field.
    """

    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(self.diagnostics))


@dataclass(frozen=True)
class NumericsPolicy:
    """Knobs of the numerical evaluation, independent of the physics."""

    quad_rel_tol: float = 1e-8
    quad_abs_tol: float = 1e-12
    series_max_steps: int = 30
    series_tail_tol: float = 1e-4
    r_max: float = 20000.0  # truncation radius for divergent radial integrals [m]
    lambertw_tol: float = 1e-12
    mc_drops: int = 10000
    mc_seed: int = 1
    mc_window_radius: float = 2000.0  # simulation disc radius [m]
    mc_empirical_load: bool = False  # count served users per drop (slow)

    def issues(self):
        out = []
        for name in ("quad_rel_tol", "quad_abs_tol", "series_tail_tol", "lambertw_tol"):
            if getattr(self, name) <= 0:
                out.append(f"{name}: must be positive")
        if self.series_max_steps < 1:
            out.append("series_max_steps: must be >= 1")
        if self.r_max <= 0:
            out.append("r_max: must be positive")
        if self.mc_drops < 1:
            out.append("mc_drops: must be >= 1")
        if self.mc_window_radius <= 0:
            out.append("mc_window_radius: must be positive")
        return out


@dataclass(frozen=True)
class SystemConfig:
    """Physical and protocol parameters, SI/linear units.

    Densities are per square meter, powers in watts, gains linear,
    beamwidths in radians, speed in m/s.  Defaults reproduce the standard
    28 GHz evaluation setup.
    """

    lambda_bs: float = 10e-6  # BS density [1/m^2]
    lambda_vue: float = 200e-6  # vehicle density [1/m^2]
    ptx_bs: float = 1.0  # 30 dBm
    ptx_vue: float = dbm_to_watts(23.0)
    gain_main_bs: float = db_to_linear(18.0)
    gain_side_bs: float = db_to_linear(-2.0)
    gain_main_vue: float = db_to_linear(12.0)
    gain_side_vue: float = db_to_linear(-10.0)
    beamwidth_bs: float = math.radians(10.0)
    beamwidth_vue: float = math.radians(30.0)
    alpha_los: float = 2.0
    alpha_nlos: float = 4.0
    zeta: float = 0.45e-3  # atmospheric attenuation [1/m]
    a_los_bs: float = 0.0149  # inverse average LOS radius, BS links [1/m]
    a_los_vue: float = 0.033
    noise_psd: float = dbm_to_watts(-174.0)  # [W/Hz]
    bandwidth: float = 400e6  # [Hz]
    speed: float = 60.0 / 3.6  # [m/s]
    slot: float = 1.0  # [s]
    cache_size: int = 10
    catalog_size: int = 100
    content_bits: float = 1e8
    sinr_threshold: float = 1.0  # linear
    rate_threshold: float = 1e8  # [bit/s]
    carrier_freq: float = 28e9  # metadata only; path loss is set by alpha/zeta
    local_rate: float = 0.0  # cache-hit read rate [bit/s]; 0 = no contribution
    rate_mixture_unnormalized: bool = False  # keep the raw per-case rate mixture
    v2v_time_literal: bool = False  # literal printed V2V connection-time integral
    interference_unconditional: bool = False  # drop the serving-state conditioning


@dataclass(frozen=True)
class ValidatedConfig(SystemConfig):
    """A checked, immutable :class:`SystemConfig` with derived quantities.

    Safe to share across workers; every downstream operation is a pure
    function of one of these.
    """

    noise_power: float = 0.0  # sigma^2 = noise_psd * bandwidth [W]
    numerics: NumericsPolicy = field(default_factory=NumericsPolicy)


class TierKind(enum.Enum):
    """The four link classes: LOS/NLOS crossed with BS/vehicle."""

    LOS_BS = "los_bs"
    NLOS_BS = "nlos_bs"
    LOS_VUE = "los_vue"
    NLOS_VUE = "nlos_vue"

    @property
    def is_los(self) -> bool:
        return self in (TierKind.LOS_BS, TierKind.LOS_VUE)

    @property
    def is_bs(self) -> bool:
        return self in (TierKind.LOS_BS, TierKind.NLOS_BS)

    @property
    def tx_class(self) -> str:
        return "b" if self.is_bs else "u"


BS_TIERS = (TierKind.LOS_BS, TierKind.NLOS_BS)
VUE_TIERS = (TierKind.LOS_VUE, TierKind.NLOS_VUE)
ALL_TIERS = BS_TIERS + VUE_TIERS


@dataclass(frozen=True)
class TierParams:
    """Per-tier accessors: path-loss law, blockage, power, gain, density."""

    kind: TierKind
    alpha: float
    zeta: float
    blockage: float  # inverse average LOS radius of the parent class [1/m]
    ptx: float
    gain_main: float
    gain_side: float
    beamwidth: float
    density: float  # parent-process density [1/m^2]
    tx_class: str
    is_los: bool
    is_bs: bool


@lru_cache(maxsize=None)
def tier_params(cfg: ValidatedConfig, kind: TierKind) -> TierParams:
    if kind.is_bs:
        ptx, g_m, g_s = cfg.ptx_bs, cfg.gain_main_bs, cfg.gain_side_bs
        psi, lam, a = cfg.beamwidth_bs, cfg.lambda_bs, cfg.a_los_bs
    else:
        ptx, g_m, g_s = cfg.ptx_vue, cfg.gain_main_vue, cfg.gain_side_vue
        psi, lam, a = cfg.beamwidth_vue, cfg.lambda_vue, cfg.a_los_vue
    alpha = cfg.alpha_los if kind.is_los else cfg.alpha_nlos
    return TierParams(
        kind=kind,
        alpha=alpha,
        zeta=cfg.zeta,
        blockage=a,
        ptx=ptx,
        gain_main=g_m,
        gain_side=g_s,
        beamwidth=psi,
        density=lam,
        tx_class=kind.tx_class,
        is_los=kind.is_los,
        is_bs=kind.is_bs,
    )


# Unit-suffixed key variants accepted in config files / CLI values.
# Each entry maps a suffix to the converter applied to the raw number.
_SUFFIXES = {
    "_dbm_per_hz": dbm_to_watts,
    "_per_km2": lambda v: v * 1e-6,
    "_dbm": dbm_to_watts,
    "_dbi": db_to_linear,
    "_deg": math.radians,
    "_kmh": lambda v: v / 3.6,
    "_db": db_to_linear,
    "_ghz": lambda v: v * 1e9,
    "_mhz": lambda v: v * 1e6,
    "_gbps": lambda v: v * 1e9,
    "_mbps": lambda v: v * 1e6,
    "_ms": lambda v: v * 1e-3,
}

_SYSTEM_FIELDS = {f.name: f for f in fields(SystemConfig)}
_POLICY_FIELDS = {f.name: f for f in fields(NumericsPolicy)}


def resolve_key(key: str):
    """Map a possibly unit-suffixed key to (base_name, converter)."""
    if key in _SYSTEM_FIELDS or key in _POLICY_FIELDS:
        return key, lambda v: v
    for suffix, conv in _SUFFIXES.items():
        if key.endswith(suffix):
            base = key[: -len(suffix)]
            if base in _SYSTEM_FIELDS or base in _POLICY_FIELDS:
                return base, conv
    return None, None


def config_from_dict(doc: dict):
    """Build (SystemConfig, NumericsPolicy) from a flat key/value mapping.

    Keys are field names or unit-suffixed variants; unknown keys and
    duplicate (base + suffixed) specifications are rejected.
    """
    sys_kw, pol_kw, bad = {}, {}, []
    for key, raw in doc.items():
        base, conv = resolve_key(key)
        if base is None:
            bad.append(f"{key}: unknown parameter")
            continue
        target = sys_kw if base in _SYSTEM_FIELDS else pol_kw
        if base in target:
            bad.append(f"{key}: duplicates an earlier value for '{base}'")
            continue
        spec = _SYSTEM_FIELDS.get(base) or _POLICY_FIELDS[base]
        if spec.type in ("int", int):
            value = conv(raw)
            if isinstance(raw, bool) or abs(value - round(value)) > 1e-9:
                bad.append(f"{key}: expected an integer")
                continue
            value = int(round(value))
        elif spec.type in ("bool", bool):
            if not isinstance(raw, bool):
                bad.append(f"{key}: expected true/false")
                continue
            value = raw
        else:
            if isinstance(raw, bool) or not isinstance(raw, (int, float)):
                bad.append(f"{key}: expected a number")
                continue
            value = float(conv(raw))
        target[base] = value
    if bad:
        raise ConfigError(bad)
    return SystemConfig(**sys_kw), NumericsPolicy(**pol_kw)


def load_config(source):
    """Load (SystemConfig, NumericsPolicy) from a JSON file, path, or dict.

    A top-level ``"sweep"`` object, if present, is ignored here; the CLI
    consumes it.
    """
    if isinstance(source, dict):
        doc = dict(source)
    else:
        doc = json.loads(Path(source).read_text())
    doc.pop("sweep", None)
    return config_from_dict(doc)


def check(cfg: SystemConfig) -> list:
    """Return the list of invariant violations (empty when valid)."""
    bad = []

    positive = [
        "lambda_bs", "lambda_vue", "ptx_bs", "ptx_vue",
        "gain_main_bs", "gain_side_bs", "gain_main_vue", "gain_side_vue",
        "bandwidth", "noise_psd", "a_los_bs", "a_los_vue",
        "alpha_los", "alpha_nlos", "slot", "content_bits",
        "sinr_threshold", "rate_threshold",
    ]
    for name in positive:
        if getattr(cfg, name) <= 0:
            bad.append(f"{name}: must be strictly positive")
    for name in ("gain_main_bs", "gain_side_bs", "gain_main_vue", "gain_side_vue"):
        if getattr(cfg, name) < 0:
            bad.append(
                f"{name}: negative value looks like dBi passed as linear; "
                f"use the {name}_dbi key"
            )
    if cfg.zeta < 0:
        bad.append("zeta: must be nonnegative")
    if cfg.speed < 0:
        bad.append("speed: must be nonnegative")
    for name in ("beamwidth_bs", "beamwidth_vue"):
        bw = getattr(cfg, name)
        if not 0.0 < bw <= 2.0 * math.pi:
            hint = f"; use {name}_deg for degrees" if bw > 2.0 * math.pi else ""
            bad.append(f"{name}: must lie in (0, 2*pi]{hint}")
    if cfg.catalog_size < 1:
        bad.append("catalog_size: must be >= 1")
    if cfg.cache_size < 0:
        bad.append("cache_size: must be >= 0")
    elif cfg.cache_size > cfg.catalog_size:
        bad.append("cache_size exceeds catalog_size")
    if cfg.lambda_vue < cfg.lambda_bs:
        bad.append("lambda_vue: must be >= lambda_bs (vehicle-dense regime)")
    if cfg.local_rate < 0:
        bad.append("local_rate: must be nonnegative")
    return bad


def validate(cfg: SystemConfig, policy: NumericsPolicy | None = None) -> ValidatedConfig:
    """Check all invariants and return an immutable, derived-field config.

    Raises :class:`ConfigError` carrying every violated invariant.  Emits a
    warning when the vehicle/BS density ratio drops below 2, where the
    vehicle-dense modeling assumption starts to strain.
    """
    if isinstance(cfg, ValidatedConfig) and policy is None:
        return cfg
    policy = policy if policy is not None else NumericsPolicy()
    bad = check(cfg) + policy.issues()
    if cfg.ptx_bs > 1e3 or cfg.ptx_vue > 1e3:
        bad.append("ptx: transmit power above 1 kW; did you mean the _dbm key?")
    if bad:
        raise ConfigError(bad)
    if cfg.lambda_vue < 2.0 * cfg.lambda_bs:
        warnings.warn(
            "lambda_vue / lambda_bs < 2: the vehicle-dense assumption is weak",
            stacklevel=2,
        )
    base = {f.name: getattr(cfg, f.name) for f in fields(SystemConfig)}
    return ValidatedConfig(
        **base,
        noise_power=cfg.noise_psd * cfg.bandwidth,
        numerics=policy,
    )


def with_params(cfg: ValidatedConfig, **changes) -> ValidatedConfig:
    """Re-validate ``cfg`` with some fields replaced."""
    policy = changes.pop("numerics", cfg.numerics)
    base = {f.name: getattr(cfg, f.name) for f in fields(SystemConfig)}
    base.update(changes)
    return validate(SystemConfig(**base), policy)
