import dataclasses
import json
import math

import pytest

from mmv2x.config import (
    ConfigError, NumericsPolicy, SystemConfig, TierKind, check,
    config_from_dict, db_to_linear, dbm_to_watts, linear_to_db, load_config,
    tier_params, validate, watts_to_dbm, with_params,
)


class TestUnits:
    def test_30_dbm_is_one_watt(self):
        assert dbm_to_watts(30.0) == pytest.approx(1.0, rel=1e-12)

    @pytest.mark.parametrize("db", [-174.0, -10.0, 0.0, 12.0, 18.0, 23.0, 30.0])
    def test_round_trip(self, db):
        assert linear_to_db(db_to_linear(db)) == pytest.approx(db, abs=1e-12)
        assert watts_to_dbm(dbm_to_watts(db)) == pytest.approx(db, abs=1e-12)


class TestValidation:
    def test_defaults_are_valid(self):
        cfg = validate(SystemConfig())
        assert cfg.noise_power == pytest.approx(
            dbm_to_watts(-174.0) * 400e6, rel=1e-12)
        assert cfg.lambda_bs == pytest.approx(10e-6)
        assert cfg.lambda_vue == pytest.approx(200e-6)
        assert cfg.gain_main_bs == pytest.approx(db_to_linear(18.0))
        assert cfg.beamwidth_bs == pytest.approx(math.radians(10.0))

    def test_cache_overflow_reported_by_name(self):
        with pytest.raises(ConfigError) as err:
            validate(SystemConfig(cache_size=101, catalog_size=100))
        assert any("cache_size exceeds catalog_size" in d
                   for d in err.value.diagnostics)

    def test_multiple_diagnostics_collected(self):
        msgs = check(SystemConfig(lambda_bs=-1.0, slot=0.0, beamwidth_bs=7.0))
        joined = " ".join(msgs)
        assert "lambda_bs" in joined and "slot" in joined and "beamwidth_bs" in joined

    def test_density_ordering_enforced(self):
        with pytest.raises(ConfigError):
            validate(SystemConfig(lambda_vue=5e-6, lambda_bs=10e-6))

    def test_density_ratio_warning(self):
        with pytest.warns(UserWarning):
            validate(SystemConfig(lambda_vue=15e-6, lambda_bs=10e-6))

    def test_negative_gain_hints_at_dbi(self):
        with pytest.raises(ConfigError) as err:
            validate(SystemConfig(gain_side_bs=-2.0))
        assert any("_dbi" in d for d in err.value.diagnostics)

    def test_suspicious_power_flagged(self):
        with pytest.raises(ConfigError) as err:
            validate(SystemConfig(ptx_bs=3000.0))
        assert any("_dbm" in d for d in err.value.diagnostics)

    def test_validated_config_is_frozen(self):
        cfg = validate(SystemConfig())
        with pytest.raises(dataclasses.FrozenInstanceError):
            cfg.speed = 0.0

    def test_with_params_revalidates(self):
        cfg = validate(SystemConfig())
        cfg2 = with_params(cfg, speed=0.0)
        assert cfg2.speed == 0.0
        with pytest.raises(ConfigError):
            with_params(cfg, cache_size=1000)

    def test_policy_issues(self):
        with pytest.raises(ConfigError):
            validate(SystemConfig(), NumericsPolicy(series_max_steps=0))


class TestLoading:
    def test_suffixed_keys(self):
        sys_cfg, policy = config_from_dict({
            "ptx_bs_dbm": 30, "gain_main_bs_dbi": 18, "beamwidth_bs_deg": 10,
            "lambda_bs_per_km2": 10, "speed_kmh": 60, "sinr_threshold_db": 0,
            "mc_drops": 500,
        })
        assert sys_cfg.ptx_bs == pytest.approx(1.0)
        assert sys_cfg.gain_main_bs == pytest.approx(db_to_linear(18))
        assert sys_cfg.beamwidth_bs == pytest.approx(math.radians(10))
        assert sys_cfg.lambda_bs == pytest.approx(1e-5)
        assert sys_cfg.speed == pytest.approx(60 / 3.6)
        assert sys_cfg.sinr_threshold == pytest.approx(1.0)
        assert policy.mc_drops == 500

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError) as err:
            config_from_dict({"ptx_base_station": 1.0})
        assert "unknown parameter" in str(err.value)

    def test_duplicate_key_rejected(self):
        with pytest.raises(ConfigError):
            config_from_dict({"ptx_bs": 1.0, "ptx_bs_dbm": 30})

    def test_type_checks(self):
        with pytest.raises(ConfigError):
            config_from_dict({"cache_size": 2.5})
        with pytest.raises(ConfigError):
            config_from_dict({"speed": "fast"})

    def test_load_from_file_ignores_sweep(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({
            "cache_size": 5, "sweep": {"param": "speed_kmh"},
        }))
        sys_cfg, _ = load_config(path)
        assert sys_cfg.cache_size == 5


class TestTiers:
    def test_four_tiers(self):
        assert len(TierKind) == 4

    def test_accessors(self):
        cfg = validate(SystemConfig())
        los_bs = tier_params(cfg, TierKind.LOS_BS)
        nlos_vue = tier_params(cfg, TierKind.NLOS_VUE)
        assert los_bs.alpha == cfg.alpha_los
        assert nlos_vue.alpha == cfg.alpha_nlos
        assert los_bs.ptx == cfg.ptx_bs and nlos_vue.ptx == cfg.ptx_vue
        assert los_bs.density == cfg.lambda_bs
        assert nlos_vue.density == cfg.lambda_vue
        assert los_bs.blockage == cfg.a_los_bs
        assert nlos_vue.blockage == cfg.a_los_vue
        assert los_bs.tx_class == "b" and nlos_vue.tx_class == "u"
        assert los_bs.is_los and los_bs.is_bs
        assert not nlos_vue.is_los and not nlos_vue.is_bs
