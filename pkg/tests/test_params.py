"""Design-parameter validation and the closed-form constants.

Frozen expected values are independent closed-form substitutions (see the
inline expressions); property checks use seeded random parameter draws.
"""

import math

import numpy as np
import pytest
import scipy.linalg

from funnelctl import (FunnelParams, containment_fractions,
                       lower_envelope, nominal_funnel, ratio_bound_constants,
                       recovery_bound, recovery_coeffs,
                       saturation_level_constants, validate_params)
from funnelctl.errors import InitialConditionViolation


def case1_params(**kw):
    return FunnelParams(alpha=(1.5, 1.35), beta=(0.15, 0.675), p=(1.1,),
                        psi0=(4.1, 2.0), **kw)


def random_valid_params(rng, r):
    alpha = [rng.uniform(0.5, 3.0)]
    for _ in range(r - 1):
        alpha.append(alpha[-1] * rng.uniform(0.5, 0.95))
    beta = [a * rng.uniform(0.05, 1.0) for a in alpha]
    p = [rng.uniform(1.01, 3.0) for _ in range(r - 1)]
    psi0 = [b / a + rng.uniform(0.3, 4.0) for a, b in zip(alpha, beta)]
    return FunnelParams(alpha=alpha, beta=beta, p=p, psi0=psi0)


class TestValidate:
    def test_case1_valid(self):
        assert validate_params(case1_params()) == []

    def test_equal_alphas_rejected(self):
        p = FunnelParams(alpha=(1.0, 1.0), beta=(0.1, 0.1), p=(1.1,), psi0=(2.0, 2.0))
        msgs = validate_params(p)
        assert any("alpha_1 > alpha_2" in m for m in msgs)

    def test_psi0_on_floor_rejected(self):
        # psi_1^0 exactly beta_1/alpha_1 (exactly representable): strict fails
        p = FunnelParams(alpha=(2.0, 1.0), beta=(0.5, 0.5), p=(1.1,),
                         psi0=(0.25, 2.0))
        msgs = validate_params(p)
        assert any("psi_1^0" in m for m in msgs)

    def test_p_not_above_one_rejected(self):
        p = FunnelParams(alpha=(1.5, 1.35), beta=(0.15, 0.675), p=(1.0,),
                         psi0=(4.1, 2.0))
        assert any("p_1 > 1" in m for m in validate_params(p))

    def test_shape_errors_raise(self):
        with pytest.raises(ValueError):
            FunnelParams(alpha=(1.0,), beta=(0.1, 0.2), p=(), psi0=(1.0,))
        with pytest.raises(ValueError):
            FunnelParams(alpha=(1.0, 0.9), beta=(0.1, 0.1), p=(), psi0=(1.0, 1.0))


class TestRecoveryCoeffs:
    def test_case1_nu12(self):
        dc = recovery_coeffs(case1_params())
        assert dc.nu[0, 1] == pytest.approx(1.1 / (1.5 - 1.35), rel=1e-12)

    def test_nu_diagonal_is_one(self):
        rng = np.random.default_rng(7)
        for r in (1, 2, 4, 6):
            dc = recovery_coeffs(random_valid_params(rng, r))
            assert np.allclose(np.diag(dc.nu), 1.0)

    def test_case1_mu0(self):
        dc = recovery_coeffs(case1_params())
        assert dc.mu0 == pytest.approx([4.0, 1.5], rel=1e-12)

    def test_matches_bruteforce_product(self):
        # independent oracle: plain nested loops over the product formula
        rng = np.random.default_rng(42)
        for _ in range(25):
            r = int(rng.integers(1, 7))
            p = random_valid_params(rng, r)
            dc = recovery_coeffs(p)
            for i in range(r):
                for j in range(i, r):
                    prod = 1.0
                    for k in range(i, j):
                        prod *= p.p[k] / (p.alpha[k] - p.alpha[j])
                    assert dc.nu[i, j] == pytest.approx(prod, rel=1e-12)

    def test_invalid_params_rejected(self):
        p = FunnelParams(alpha=(1.0, 1.0), beta=(0.1, 0.1), p=(1.1,), psi0=(2.0, 2.0))
        with pytest.raises(ValueError):
            recovery_coeffs(p)


class TestRecoveryBound:
    def test_case1_at_zero(self):
        b = recovery_bound(case1_params(), (4.1, 2.0), 0.0)
        # 0.1 + 4.0 + (1.1/0.15)*1.5
        assert b[0] == pytest.approx(0.1 + 4.0 + (1.1 / 0.15) * 1.5, rel=1e-12)
        assert b[1] == pytest.approx(2.0, rel=1e-12)

    def test_limit_is_floor(self):
        p = case1_params()
        b = recovery_bound(p, (4.1, 2.0), 1e3)
        assert b == pytest.approx(p.psi_floor, abs=1e-12)

    def test_r1_single_term(self):
        p = FunnelParams(alpha=(1.2,), beta=(0.6,), p=(), psi0=(3.0,))
        for dt in (0.0, 0.7, 2.5):
            expect = 0.5 + (3.0 - 0.5) * math.exp(-1.2 * dt)
            assert recovery_bound(p, (3.0,), dt)[0] == pytest.approx(expect, rel=1e-12)

    def test_nonincreasing_in_dt_and_above_floor(self):
        rng = np.random.default_rng(3)
        dts = np.linspace(0.0, 8.0, 33)
        for _ in range(20):
            p = random_valid_params(rng, int(rng.integers(1, 5)))
            vals = recovery_bound(p, p.psi0, dts)
            assert np.all(np.diff(vals, axis=1) <= 1e-12)
            assert np.all(vals >= p.psi_floor[:, None] - 1e-12)

    def test_negative_dt_rejected(self):
        with pytest.raises(ValueError):
            recovery_bound(case1_params(), (4.1, 2.0), -0.1)


class TestLowerEnvelope:
    def test_at_zero_equals_psi0(self):
        p = case1_params()
        assert lower_envelope(p, 0.0) == pytest.approx([4.1, 2.0], rel=1e-12)

    def test_case1_at_one(self):
        vals = lower_envelope(case1_params(), 1.0)
        assert vals[0] == pytest.approx(4.0 * math.exp(-1.5) + 0.1, rel=1e-12)
        assert vals[1] == pytest.approx(1.5 * math.exp(-1.35) + 0.5, rel=1e-12)

    def test_limit_is_floor(self):
        p = case1_params()
        assert lower_envelope(p, 1e3) == pytest.approx(p.psi_floor, abs=1e-12)

    def test_floor_below_ceiling(self):
        # lower envelope never exceeds the recovery bound from psi0
        rng = np.random.default_rng(11)
        ts = np.linspace(0.0, 6.0, 25)
        for _ in range(20):
            p = random_valid_params(rng, int(rng.integers(1, 6)))
            low = lower_envelope(p, ts)
            high = recovery_bound(p, p.psi0, ts)
            assert np.all(low <= high + 1e-10)


class TestNominalFunnel:
    def test_case1_level2_closed_form(self):
        p = case1_params()
        for dt in (0.0, 0.5, 2.0, 10.0):
            val = nominal_funnel(p, p.psi0, dt)
            assert val[1] == pytest.approx(1.5 * math.exp(-1.35 * dt) + 0.5, rel=1e-12)

    def test_matches_matrix_exponential(self):
        # independent oracle: expm of the affine system's matrix
        rng = np.random.default_rng(17)
        for _ in range(20):
            r = int(rng.integers(1, 6))
            p = random_valid_params(rng, r)
            A = np.diag(-np.asarray(p.alpha))
            for i in range(r - 1):
                A[i, i + 1] = p.p[i]
            psi_t0 = np.asarray(p.psi0) + rng.uniform(0.0, 2.0, size=r)
            for dt in (0.0, 0.3, 1.7):
                expect = p.psi_floor + scipy.linalg.expm(A * dt) @ (psi_t0 - p.psi_floor)
                got = nominal_funnel(p, psi_t0, dt)
                assert got == pytest.approx(expect, rel=1e-10, abs=1e-12)

    def test_below_recovery_bound(self):
        rng = np.random.default_rng(23)
        ts = np.linspace(0.0, 5.0, 21)
        for _ in range(15):
            p = random_valid_params(rng, int(rng.integers(1, 5)))
            assert np.all(nominal_funnel(p, p.psi0, ts)
                          <= recovery_bound(p, p.psi0, ts) + 1e-10)


class TestRatioBounds:
    def test_case1_vs_last(self):
        rb = ratio_bound_constants(case1_params())
        expect = max(4.1 / 2.0, (1.1 * 0.675 + 0.15 * 1.35) / (0.675 * 0.15))
        assert rb.vs_last == pytest.approx([expect], rel=1e-12)
        assert rb.adjacent.size == 0

    def test_case2_r3_values(self):
        a2, a3 = 0.9 * 1.5, 0.9 * 0.9 * 1.5
        p = FunnelParams(alpha=(1.5, a2, a3), beta=(0.1, 0.5 * a2, 0.5 * a3),
                         p=(1.1, 1.1), psi0=(3.1, 1.6, 1.6))
        rb = ratio_bound_constants(p)
        # frozen from direct substitution of the base case and one recursion step
        assert rb.vs_last[1] == pytest.approx(18.14814814814815, rel=1e-12)
        assert rb.vs_last[0] == pytest.approx(70.74723846653674, rel=1e-12)
        assert rb.adjacent[0] == pytest.approx(8.666666666666673, rel=1e-10)

    def test_r1_empty(self):
        p = FunnelParams(alpha=(1.0,), beta=(0.5,), p=(), psi0=(2.0,))
        rb = ratio_bound_constants(p)
        assert rb.vs_last.size == 0 and rb.adjacent.size == 0

    def test_near_equal_alphas_diverge(self):
        p = FunnelParams(alpha=(1.0, 1.0 - 1e-9), beta=(0.5, 0.5), p=(1.1,),
                         psi0=(2.0, 2.0))
        rb = ratio_bound_constants(p)
        assert rb.vs_last[0] > 1e8  # reported, not clamped

    def test_max_attained_by_initial_ratio(self):
        p = FunnelParams(alpha=(1.5, 1.35), beta=(0.15, 0.675), p=(1.1,),
                         psi0=(1000.0, 2.0))
        rb = ratio_bound_constants(p)
        assert rb.vs_last[0] == pytest.approx(500.0, rel=1e-12)


class TestContainmentFractions:
    def test_case1_zero_error(self):
        eps = containment_fractions(case1_params(), [0.0], [0.0])
        assert eps[0] == pytest.approx(math.sqrt(1.0 - 1.0 / 7.7), rel=1e-12)

    def test_large_p_pushes_toward_one(self):
        p = FunnelParams(alpha=(1.5, 1.35), beta=(0.15, 0.675), p=(1e6,),
                         psi0=(4.1, 2.0))
        eps = containment_fractions(p, [0.0], [0.0])
        assert 0.999999 < eps[0] < 1.0

    def test_initial_error_dominates(self):
        p = case1_params()
        eps = containment_fractions(p, [0.99 * 4.1], [0.0])
        assert eps[0] == pytest.approx(0.99, rel=1e-12)

    def test_initial_error_outside_funnel_raises(self):
        with pytest.raises(InitialConditionViolation):
            containment_fractions(case1_params(), [4.1], [0.0])

    def test_in_unit_interval_for_random_params(self):
        rng = np.random.default_rng(5)
        for _ in range(30):
            r = int(rng.integers(2, 6))
            p = random_valid_params(rng, r)
            e0 = rng.uniform(0.0, 0.9, size=r - 1) * np.asarray(p.psi0[:-1])
            c = rng.uniform(0.0, 3.0, size=r - 1)
            eps = containment_fractions(p, e0, c)
            assert np.all(eps > 0.0) and np.all(eps < 1.0)


class TestSaturationLevelConstants:
    def test_r1_trivial(self):
        p = FunnelParams(alpha=(1.0,), beta=(0.5,), p=(), psi0=(2.0,))
        sc = saturation_level_constants(p, 0.3)
        assert sc.c == pytest.approx([0.0])
        assert sc.eps_vec.size == 0
        assert sc.psi_max == pytest.approx([2.0], rel=1e-12)  # floor + mu_1(0)

    def test_case1_eps_seeded_low(self):
        sc = saturation_level_constants(case1_params(), 0.1)
        # third max-argument dominates the seed
        assert sc.eps_vec[0] == pytest.approx(math.sqrt(1.0 - 1.0 / 7.7), rel=1e-12)

    def test_case1_psi_max(self):
        sc = saturation_level_constants(case1_params(), 0.1)
        assert sc.psi_max[0] == pytest.approx(15.1, rel=1e-12)
        assert sc.psi_max[1] == pytest.approx(2.0, rel=1e-12)

    def test_case1_c2_frozen(self):
        # frozen from a by-hand pass through the recursion (eps = 0.1):
        # q = 7.7, M_1 = 9.3333..., kappa_1 = -0.4
        sc = saturation_level_constants(case1_params(), 0.1)
        assert sc.c[1] == pytest.approx(1855.7, rel=1e-10)

    def test_eps_out_of_range(self):
        with pytest.raises(ValueError):
            saturation_level_constants(case1_params(), 1.0)
