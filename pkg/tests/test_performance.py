import math

import numpy as np
import pytest

from mmv2x import montecarlo
from mmv2x.association import AssociationState, CaseKind
from mmv2x.config import NumericsPolicy, SystemConfig, TierKind, validate, with_params
from mmv2x.performance import (
    average_connection_time, average_rate, average_rate_from_coverage, delay,
    max_traverse_distance, mean_connection_time, performance_summary, throughput,
)

LOS_BS, LOS_VUE = TierKind.LOS_BS, TierKind.LOS_VUE
NLOS_VUE = TierKind.NLOS_VUE


class TestMaxTraverseDistance:
    def test_perpendicular_exit(self):
        psi = math.radians(30)
        theta = math.pi / 2 - psi / 2
        assert max_traverse_distance(100.0, theta, psi) == pytest.approx(
            100.0 * math.sin(psi / 2), rel=1e-12)

    def test_near_edge_exit(self):
        psi = math.radians(30)
        assert max_traverse_distance(100.0, 1e-9, psi) == pytest.approx(100.0, rel=1e-6)

    def test_monotone_in_theta(self):
        psi = math.radians(30)
        thetas = np.linspace(1e-3, math.pi / 2 - psi / 2, 50)
        vals = max_traverse_distance(100.0, thetas, psi)
        assert np.all(np.diff(vals) < 0)

    def test_domain_error(self):
        with pytest.raises(ValueError):
            max_traverse_distance(10.0, math.pi, math.radians(30))


class TestAverageRate:
    def test_step_coverage_oracle(self, cfg):
        # coverage = 1 below tau*, 0 after: the closed form is
        # (W / N) log2(1 + tau*)
        tau_star, n_load = 7.0, 1.5
        sc = lambda u: np.where(np.asarray(u) <= tau_star, 1.0, 0.0)
        got = average_rate_from_coverage(sc, n_load, cfg.bandwidth, cfg.numerics)
        want = cfg.bandwidth / n_load * math.log2(1.0 + tau_star)
        assert got == pytest.approx(want, rel=1e-6)

    def test_zero_coverage(self, cfg):
        got = average_rate_from_coverage(lambda u: 0.0 * np.asarray(u), 1.0,
                                         cfg.bandwidth, cfg.numerics)
        assert got == pytest.approx(0.0, abs=1e-6)

    def test_local_case(self, cfg):
        assert average_rate(cfg, CaseKind.LOCAL) == cfg.local_rate

    def test_positive_and_bounded(self, cfg):
        r = average_rate(cfg, CaseKind.V2I, LOS_BS, AssociationState(1, 0))
        assert 0.0 < r < cfg.bandwidth * math.log2(1.0 + 1e12)

    def test_against_drop_means(self, cfg, batch20k):
        from mmv2x.montecarlo import _CASE_CODES, _TIER_CODES

        for kind, case, code in ((LOS_BS, CaseKind.V2I, 1),
                                 (LOS_VUE, CaseKind.V2V, 2)):
            mask = ((batch20k.case == code)
                    & (batch20k.tier == _TIER_CODES[kind])
                    & (batch20k.n == 1))
            emp = batch20k.rate[mask].mean()
            ana = average_rate(cfg, case, kind, AssociationState(1, 0))
            assert abs(ana / emp - 1.0) < 0.05, (kind, ana, emp)


class TestAverageConnectionTime:
    def test_motionless(self):
        cfg = validate(SystemConfig(speed=0.0))
        got = average_connection_time(cfg, CaseKind.V2I, LOS_BS,
                                      AssociationState(1, 0))
        assert got == cfg.slot

    def test_local(self, cfg):
        assert average_connection_time(cfg, CaseKind.LOCAL) == cfg.slot

    def test_within_slot(self, cfg):
        for case, kind in ((CaseKind.V2I, LOS_BS), (CaseKind.V2V, LOS_VUE),
                           (CaseKind.V2V, NLOS_VUE)):
            for n, m in ((1, 0), (3, 1)):
                t = average_connection_time(cfg, case, kind, AssociationState(n, m))
                assert 0.0 < t <= cfg.slot

    def test_decreasing_in_speed(self):
        vals = []
        for v in (5.0, 20.0, 40.0):
            cfg = validate(SystemConfig(speed=v))
            vals.append(average_connection_time(cfg, CaseKind.V2I, LOS_BS,
                                                AssociationState(1, 0)))
        assert vals[0] > vals[1] > vals[2]

    def test_v2i_against_drop_means(self, cfg, batch20k):
        from mmv2x.montecarlo import _TIER_CODES

        mask = ((batch20k.case == 1) & (batch20k.tier == _TIER_CODES[LOS_BS])
                & (batch20k.n == 1))
        emp = batch20k.connection_time[mask].mean()
        ana = average_connection_time(cfg, CaseKind.V2I, LOS_BS,
                                      AssociationState(1, 0))
        assert abs(ana / emp - 1.0) < 0.05

    def test_literal_variant_runs(self, cfg):
        lit = with_params(cfg, v2v_time_literal=True)
        t_lit = average_connection_time(lit, CaseKind.V2V, LOS_VUE,
                                        AssociationState(1, 0))
        assert 0.0 < t_lit <= cfg.slot


class TestThroughputAndDelay:
    def test_totals_positive(self, cfg):
        rep = throughput(cfg)
        assert rep.total > 0
        assert rep.per_case[CaseKind.V2I] > 0
        assert rep.per_case[CaseKind.V2V] > 0
        sane_cap = cfg.bandwidth * cfg.slot * math.log2(1 + 1e12)
        assert rep.total < sane_cap

    def test_full_cache_degenerate(self):
        cfg = validate(SystemConfig(cache_size=100))
        assert delay(cfg) == 0.0
        assert throughput(cfg).total == 0.0  # no local read rate configured

    def test_local_rate_convention(self):
        cfg = validate(SystemConfig(cache_size=100, local_rate=1e9))
        assert throughput(cfg).total == pytest.approx(1e9 * cfg.slot * 1.0)
        assert delay(cfg) == 0.0  # hit probability 1 wins regardless

    def test_delay_scales_with_content_size(self, cfg):
        d1 = delay(cfg)
        d2 = delay(with_params(cfg, content_bits=2 * cfg.content_bits))
        assert d2 == pytest.approx(2 * d1, rel=1e-12)

    def test_delay_infinite_without_throughput(self, cfg, monkeypatch):
        from mmv2x import performance

        class Stub:
            total = 0.0

        monkeypatch.setattr(performance, "throughput", lambda c: Stub())
        assert performance.delay(cfg) == math.inf

    def test_throughput_decreasing_in_speed(self):
        vals = [throughput(validate(SystemConfig(speed=v / 3.6))).total
                for v in (20.0, 60.0, 110.0)]
        assert vals[0] > vals[1] > vals[2]

    def test_against_drop_product_estimate(self, cfg, batch20k):
        rep = throughput(cfg)
        est = montecarlo.throughput_estimate(batch20k, form="product")
        assert abs(rep.total / est.value - 1.0) < 0.05

    def test_independence_gap_is_measured(self, cfg, batch20k):
        prod = montecarlo.throughput_estimate(batch20k, form="product").value
        joint = montecarlo.throughput_estimate(batch20k, form="joint").value
        assert prod != joint  # the decomposition is an approximation, not a fact

    def test_mean_connection_time_mixture(self, cfg, batch20k):
        ana = mean_connection_time(cfg)
        est = montecarlo.connection_time_estimate(batch20k)
        assert abs(ana - est.value) < 0.03
        assert 0.0 < ana <= cfg.slot

    def test_summary_fields(self, cfg):
        rep = performance_summary(cfg)
        assert rep.throughput_total > 0 and rep.delay_slots > 0
        assert all(v >= 0 for v in rep.avg_rate.values())
        assert all(0 < v <= cfg.slot for v in rep.avg_conn_time.values())
