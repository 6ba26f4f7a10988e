import math

import numpy as np
import pytest
from scipy import integrate as sci

from mmv2x import montecarlo
from mmv2x.association import AssociationState, CaseKind, case_probabilities
from mmv2x.config import (
    ALL_TIERS, NumericsPolicy, SystemConfig, TierKind, validate, with_params,
)
from mmv2x.coverage import (
    DivergenceError, conditional_kernel, desired_power, laplace_interference,
    load, rate_coverage, sinr_coverage_case, sinr_coverage_tier,
    tier_case_mass, total_rate_coverage, total_sinr_coverage, w_integral,
)

LOS_BS, NLOS_BS = TierKind.LOS_BS, TierKind.NLOS_BS
LOS_VUE, NLOS_VUE = TierKind.LOS_VUE, TierKind.NLOS_VUE


class TestWIntegral:
    def test_zero_eta(self, cfg):
        assert w_integral(cfg, LOS_VUE, 0.0) == 0.0

    def test_against_midpoint_oracle(self):
        cfg = validate(SystemConfig(zeta=0.0))
        a, alpha, eta = 0.033, 2.0, 1.0
        r = np.linspace(0.0, 4000.0, 2_000_001)[1:] - 0.001
        mid = 0.002 * np.sum(r * np.exp(-a * r) / (1.0 + r**alpha / eta))
        got = w_integral(cfg, LOS_VUE, eta)
        assert got == pytest.approx(mid, rel=1e-5)

    def test_monotone_in_eta(self, cfg):
        vals = [w_integral(cfg, NLOS_VUE, eta) for eta in np.geomspace(1e-3, 1e6, 10)]
        assert all(a < b for a, b in zip(vals, vals[1:]))

    def test_divergence_detected(self):
        cfg = validate(SystemConfig(zeta=0.0, alpha_nlos=2.0))
        with pytest.raises(DivergenceError):
            w_integral(cfg, NLOS_VUE, 1.0)

    def test_negative_eta(self, cfg):
        with pytest.raises(ValueError):
            w_integral(cfg, LOS_VUE, -1.0)


class TestLaplaceFunctional:
    def test_at_zero(self, cfg):
        assert laplace_interference(cfg, 0.0) == 1.0

    def test_monotone_and_bounded(self, cfg):
        s = np.geomspace(1e-2, 1e8, 24)
        vals = laplace_interference(cfg, s)
        assert np.all(vals > 0.0) and np.all(vals <= 1.0)
        assert np.all(np.diff(vals) < 0.0)

    def test_log_convex_on_grid(self, cfg):
        # log-convexity holds in s itself (uniform linear grid)
        s = np.linspace(1e2, 1e6, 64)
        ln_vals = np.log(laplace_interference(cfg, s))
        second = np.diff(ln_vals, 2)
        assert np.all(second > -1e-9)

    def test_table_against_direct_quadrature(self, cfg):
        for s in (1e1, 1e3, 1e5, 1e7):
            fast = laplace_interference(cfg, s)
            slow = laplace_interference(cfg, s, exact=True)
            assert fast == pytest.approx(slow, rel=1e-6)

    def test_against_empirical_interference(self, cfg):
        samples = montecarlo.sample_interference(cfg, 30000, seed=3)
        for s in (1e2, 1e3, 1e4, 1e5):
            emp = float(np.exp(-s * samples).mean())
            assert abs(laplace_interference(cfg, s) - emp) < 0.01

    def test_negative_s_rejected(self, cfg):
        with pytest.raises(ValueError):
            laplace_interference(cfg, -1.0)


class TestTierCoverage:
    def test_low_threshold_limit(self, cfg):
        st = AssociationState(1, 0)
        assert sinr_coverage_tier(cfg, LOS_BS, st, 1e-12) == pytest.approx(1.0, abs=1e-6)

    def test_high_threshold_limit(self, cfg):
        st = AssociationState(1, 0)
        assert sinr_coverage_tier(cfg, LOS_BS, st, 1e16) == pytest.approx(0.0, abs=1e-8)

    def test_monotone_in_tau(self, cfg):
        st = AssociationState(2, 1)
        taus = np.geomspace(1e-2, 1e4, 8)
        vals = [sinr_coverage_tier(cfg, LOS_VUE, st, t) for t in taus]
        assert all(a >= b - 1e-9 for a, b in zip(vals, vals[1:]))

    def test_unconditional_toggle_matches_plain_functional(self, cfg):
        # with conditioning disabled the kernel must reduce to
        # exp(-tau s2/T) L_I(tau/T): an independent composition check
        cfg_u = with_params(cfg, interference_unconditional=True)
        st = AssociationState(1, 0)
        tau = 1.0
        got = sinr_coverage_tier(cfg_u, LOS_BS, st, tau)
        from mmv2x.association import serving_distance_pdf

        def integrand(x):
            T = desired_power(cfg_u, LOS_BS, x)
            return (math.exp(-tau * cfg_u.noise_power / T)
                    * float(laplace_interference(cfg_u, tau / T))
                    * float(serving_distance_pdf(cfg_u, LOS_BS, st, x)))

        expected, _ = sci.quad(integrand, 0.0, np.inf, limit=300)
        assert got == pytest.approx(expected, rel=1e-5)

    def test_conditional_kernel_tends_to_unconditional_near_zero(self, cfg):
        # a serving node at negligible distance excludes almost nothing
        st = AssociationState(1, 0)
        tau = 1.0
        k = conditional_kernel(cfg, LOS_BS, st, tau)(np.array([0.05]))[0]
        T = desired_power(cfg, LOS_BS, 0.05)
        plain = math.exp(-tau * cfg.noise_power / T) * float(
            laplace_interference(cfg, tau / T))
        assert k == pytest.approx(plain, rel=1e-3)

    def test_conditional_against_drops(self, cfg, batch20k):
        tau = 1.0
        for kind, case, n, m in ((LOS_BS, CaseKind.V2I, 1, 0),
                                 (NLOS_VUE, CaseKind.V2V, 1, 0),
                                 (LOS_VUE, CaseKind.V2V, 2, 1)):
            ana = sinr_coverage_tier(cfg, kind, AssociationState(n, m), tau)
            est = montecarlo.sc_estimate(batch20k, tau, case=case, kind=kind,
                                         n=n, m=m)
            assert abs(ana - est.value) < 0.02, (kind, n, m)


class TestCaseCoverage:
    def test_local_case(self, cfg):
        assert sinr_coverage_case(cfg, CaseKind.LOCAL, 5.0) == 1.0

    def test_full_cache_total(self):
        cfg = validate(SystemConfig(cache_size=100))
        assert total_sinr_coverage(cfg, 10.0) == 1.0

    def test_degenerate_case_mass_skipped(self):
        cfg = validate(SystemConfig(cache_size=0))
        assert sinr_coverage_case(cfg, CaseKind.V2V, 1.0) == 0.0

    def test_total_non_increasing(self, cfg):
        taus = np.geomspace(1e-2, 1e4, 13)
        vals = [total_sinr_coverage(cfg, t) for t in taus]
        assert all(a >= b - 1e-9 for a, b in zip(vals, vals[1:]))

    def test_mixture_matches_per_state_sum(self):
        # exchangeability of the state sum and the radial integral
        cfg = validate(SystemConfig(),
                       NumericsPolicy(series_max_steps=6, series_tail_tol=1e-12))
        tau = 1.0
        split = case_probabilities(cfg)
        total = split.local
        for (case, kind, n, m), p in split.family.items():
            if p > 0:
                total += p * sinr_coverage_tier(cfg, kind, AssociationState(n, m), tau)
        fast = total_sinr_coverage(cfg, tau)
        assert fast == pytest.approx(total, abs=3e-4)

    def test_tier_case_mass_matches_family(self, cfg):
        split = case_probabilities(cfg)
        for case in (CaseKind.V2I, CaseKind.V2V):
            for kind in ((LOS_BS, NLOS_BS) if case is CaseKind.V2I
                         else (LOS_VUE, NLOS_VUE)):
                fam = sum(p for (c, k, _, _), p in split.family.items()
                          if c is case and k is kind)
                assert tier_case_mass(cfg, case, kind) == pytest.approx(fam, abs=1e-7)


class TestLoad:
    def test_at_least_one(self, cfg):
        for kind, case in ((LOS_BS, CaseKind.V2I), (NLOS_VUE, CaseKind.V2V)):
            assert load(cfg, kind, AssociationState(1, 0), case) >= 1.0

    def test_zero_weight_gives_unit_load(self):
        cfg = validate(SystemConfig(cache_size=0))  # V2V never happens
        assert load(cfg, LOS_VUE, AssociationState(1, 0), CaseKind.V2V) == 1.0

    def test_nlos_uses_truncation_radius(self, cfg):
        short = with_params(cfg, numerics=NumericsPolicy(r_max=5000.0))
        assert load(short, NLOS_BS, AssociationState(1, 0), CaseKind.V2I) > \
            load(cfg, NLOS_BS, AssociationState(1, 0), CaseKind.V2I)


class TestRateCoverage:
    def test_local(self, cfg):
        assert rate_coverage(cfg, CaseKind.LOCAL, 1e9) == 1.0

    def test_low_threshold(self, cfg):
        assert total_rate_coverage(cfg, 1e3) == pytest.approx(1.0, abs=2e-3)

    def test_non_increasing(self, cfg):
        rhos = np.geomspace(1e7, 5e9, 8)
        vals = [total_rate_coverage(cfg, r) for r in rhos]
        assert all(a >= b - 1e-9 for a, b in zip(vals, vals[1:]))

    def test_identity_with_sinr_coverage(self, cfg):
        # rho chosen so the rate event is exactly the SINR event
        st = AssociationState(1, 0)
        tau = 3.0
        n_load = load(cfg, LOS_BS, st, CaseKind.V2I)
        rho = cfg.bandwidth * math.log2(1.0 + tau) / n_load
        rc = rate_coverage(cfg, CaseKind.V2I, rho, LOS_BS, st)
        sc = sinr_coverage_tier(cfg, LOS_BS, st, tau)
        assert rc == pytest.approx(sc, rel=1e-9)

    def test_overflowing_threshold(self, cfg):
        st = AssociationState(1, 0)
        assert rate_coverage(cfg, CaseKind.V2I, 1e15, LOS_BS, st) == 0.0

    def test_against_drops(self, cfg, batch20k):
        for rho in (1e7, 1e8, 1e9, 5e9):
            ana = total_rate_coverage(cfg, rho)
            est = montecarlo.rc_estimate(batch20k, rho)
            assert abs(ana - est.value) < 0.02
