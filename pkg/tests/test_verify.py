"""Guarantee checks, the escape-time oracle, the high-gain grid and the
constructive saturation level."""

import math

import numpy as np
import pytest

from funnelctl import (FunnelParams, LinearBIF, Saturation, SimConfig, SimTrace,
                       Surjection, blowup_oracle, check_funnel_membership,
                       check_lower_and_ratio_bounds, check_recovery, chi_grid,
                       containment_fractions, HighGainQuery, integrate,
                       integrate_ode, invariant_set_sweep, make_reference,
                       pure_integrator, saturation_level)
from funnelctl.errors import HighGainSearchError, UnsupportedPlant


def case1_params():
    return FunnelParams(alpha=(1.5, 1.35), beta=(0.15, 0.675), p=(1.1,),
                        psi0=(4.1, 2.0))


def synthetic_trace(t, e_norms, psi, sat_active=None, rel_tol=1e-8):
    t = np.asarray(t, dtype=float)
    e_norms = np.asarray(e_norms, dtype=float)
    psi = np.asarray(psi, dtype=float)
    n, r = psi.shape
    if sat_active is None:
        sat_active = np.zeros(n, dtype=bool)
    z = np.zeros((n, 1))
    return SimTrace(t=t, y=z, yref=z, e_norms=e_norms, psi=psi,
                    k=np.ones((n, r)), v=z, u=z, kappa=np.zeros(n),
                    sat_active=np.asarray(sat_active, dtype=bool), events=[],
                    term_reason="completed", rel_tol=rel_tol)


class TestMembership:
    def test_case1_passes(self, case1_result):
        res, _ = case1_result
        rep = check_funnel_membership(res.trace, case1_params())
        assert rep.passed and rep.worst_margin > 0.0

    def test_boundary_row_fails(self):
        tr = synthetic_trace([0.0, 1.0],
                             [[0.5, 0.1], [1.0, 0.1]],
                             [[1.0, 1.0], [1.0, 1.0]])
        rep = check_funnel_membership(tr, case1_params())
        assert not rep.passed
        assert rep.worst_margin <= 0.0
        assert rep.t_worst == 1.0

    def test_single_row_passes(self):
        tr = synthetic_trace([0.0], [[0.5, 0.1]], [[1.0, 1.0]])
        assert check_funnel_membership(tr, case1_params()).passed

    def test_checks_are_pure(self, case1_result):
        # reruns on the same trace yield identical verdicts
        res, _ = case1_result
        p = case1_params()
        for fn in (check_funnel_membership, check_recovery,
                   check_lower_and_ratio_bounds):
            a, b = fn(res.trace, p), fn(res.trace, p)
            assert (a.passed, a.worst_margin, a.t_worst) == \
                   (b.passed, b.worst_margin, b.t_worst)


class TestRecovery:
    def test_identity_run_from_psi0(self):
        # no saturation ever: one span anchored at t = 0, nominal decay
        p = case1_params()
        ts = np.linspace(0.0, 5.0, 51)
        psi = np.array([[0.1 + 4.0 * math.exp(-1.5 * t),
                         0.5 + 1.5 * math.exp(-1.35 * t)] for t in ts])
        tr = synthetic_trace(ts, np.zeros((51, 2)), psi)
        rep = check_recovery(tr, p)
        assert rep.passed

    def test_case1_passes(self, case1_result):
        res, _ = case1_result
        assert check_recovery(res.trace, case1_params()).passed

    def test_case1_passes_at_acceptance_tolerance(self, case1_result):
        res, _ = case1_result
        assert check_recovery(res.trace, case1_params(), tol_abs=1e-4).passed

    def test_inflated_radius_fails(self):
        p = case1_params()
        ts = np.linspace(0.0, 5.0, 51)
        psi = np.array([[0.1 + 4.0 * math.exp(-1.5 * t),
                         0.5 + 1.5 * math.exp(-1.35 * t)] for t in ts])
        psi[25, 0] = 30.0  # impossible bulge inside an unsaturated span
        tr = synthetic_trace(ts, np.zeros((51, 2)), psi)
        rep = check_recovery(tr, p)
        assert not rep.passed
        assert rep.t_worst == pytest.approx(ts[25])


class TestLowerAndRatioBounds:
    def test_case1_passes(self, case1_result):
        res, _ = case1_result
        assert check_lower_and_ratio_bounds(res.trace, case1_params()).passed

    def test_floor_violation_fails(self):
        p = case1_params()
        ts = np.array([0.0, 1.0])
        psi = np.array([[4.1, 2.0], [0.05, 1.0]])  # below the decay floor
        tr = synthetic_trace(ts, np.zeros((2, 2)), psi)
        assert not check_lower_and_ratio_bounds(tr, p).passed

    def test_ratio_violation_fails(self):
        p = case1_params()
        ts = np.array([0.0, 1.0])
        # psi_1/psi_2 = 40 exceeds the vs-last constant 9.33...
        psi = np.array([[4.1, 2.0], [40.0 * 0.51, 0.51]])
        tr = synthetic_trace(ts, np.zeros((2, 2)), psi)
        assert not check_lower_and_ratio_bounds(tr, p).passed

    def test_random_identity_runs_pass(self):
        # small property battery: identity saturation, random valid params
        rng = np.random.default_rng(77)
        ref = make_reference("cosine", m=1, amplitude=0.3)
        for _ in range(10):
            r = int(rng.integers(1, 4))
            alpha = [rng.uniform(0.8, 2.0)]
            for _ in range(r - 1):
                alpha.append(alpha[-1] * rng.uniform(0.6, 0.9))
            beta = [a * rng.uniform(0.1, 0.6) for a in alpha]
            p = FunnelParams(
                alpha=alpha, beta=beta,
                p=[rng.uniform(1.1, 2.0) for _ in range(r - 1)],
                psi0=[b / a + rng.uniform(1.0, 3.0) for a, b in zip(alpha, beta)])
            R = rng.uniform(-0.8, 0.8, size=(r, 1, 1))
            plant = LinearBIF(R=R, S=np.zeros((1, 0)), P=np.zeros((0, 1)),
                              Q=np.zeros((0, 0)), Gamma=[[1.0]], eta0=np.zeros(0))
            cfg = SimConfig(t_end=2.0, rel_tol=1e-6, abs_tol=1e-8,
                            record_stride=0.05)
            trace = integrate(plant, p, Saturation(kind="identity"), ref,
                              np.zeros(r), cfg)
            assert trace.term_reason == "completed"
            assert check_lower_and_ratio_bounds(trace, p).passed
            assert check_recovery(trace, p).passed
            assert check_funnel_membership(trace, p).passed


class TestBlowupOracle:
    def test_acceptance_battery(self):
        rep = blowup_oracle([0.25, 0.81, 1.0, 1.5])
        assert rep.passed
        assert rep.worst_margin >= 0.0

    def test_small_level_detection_accuracy(self):
        rep = blowup_oracle([0.25])
        assert rep.passed
        # margin = 1% - rel_err; detection is far more accurate than 1%
        assert rep.worst_margin > 0.009

    def test_tightening_does_not_worsen_threshold_error(self):
        # compare detection against the exact level-crossing time of the
        # closed-form solution (the integrator stops at state norm 1e6)
        M = 0.25
        s = math.sqrt(M)
        omega = math.log((1 + s) / (1 - s)) / (2 * s)
        t_cross = omega - math.atanh(s / 1e6) / s
        errs = []
        for rt in (1e-4, 5e-5, 2.5e-5, 1.25e-5):
            cfg = SimConfig(t_end=10.0, rel_tol=rt, abs_tol=rt, h_min=1e-14)
            res = integrate_ode(lambda t, x: np.array([x[0] ** 2 - M]),
                                np.array([1.0]), cfg)
            errs.append(abs(res.t_term - t_cross))
        for a, b in zip(errs, errs[1:]):
            assert b <= a + 1e-10

    def test_rejects_nonpositive_level(self):
        with pytest.raises(ValueError):
            blowup_oracle([0.0])


class TestChiGrid:
    def _plant(self, gamma=1.0):
        return LinearBIF(R=np.zeros((1, 1, 1)), S=np.zeros((1, 0)),
                         P=np.zeros((0, 1)), Q=np.zeros((0, 0)),
                         Gamma=[[gamma]], eta0=np.zeros(0))

    def test_point_internal_set(self):
        q = HighGainQuery(plant=self._plant(), R_q=0.0)
        # min over |w| in [1/2, 1] of 4 w^2 = 1
        assert chi_grid(q, -4.0) == pytest.approx(1.0, rel=1e-12)

    def test_zero_field(self):
        q = HighGainQuery(plant=self._plant(), R_q=0.0)
        assert chi_grid(q, 0.0) == pytest.approx(0.0, abs=1e-15)

    def test_ball_internal_set(self):
        q = HighGainQuery(plant=self._plant(), R_q=1.0)
        # min over |w| in [1/2, 1] of (4 w^2 - |w|) at |w| = 1/2: 0.5
        assert chi_grid(q, -4.0) == pytest.approx(0.5, rel=1e-12)

    def test_refinement_never_increases(self):
        rng = np.random.default_rng(13)
        plant = self._plant(gamma=-1.3)
        for _ in range(20):
            s = rng.uniform(-10.0, 10.0)
            rq = rng.uniform(0.0, 2.0)
            coarse = chi_grid(HighGainQuery(plant=plant, R_q=rq,
                                            w_res=33, z_res=33), s)
            fine = chi_grid(HighGainQuery(plant=plant, R_q=rq,
                                          w_res=65, z_res=65), s)
            assert fine <= coarse + 1e-12

    def test_multi_output_rejected(self):
        p = LinearBIF(R=np.zeros((1, 2, 2)), S=np.zeros((2, 0)),
                      P=np.zeros((0, 2)), Q=np.zeros((0, 0)),
                      Gamma=np.eye(2), eta0=np.zeros(0))
        with pytest.raises(UnsupportedPlant):
            HighGainQuery(plant=p)

    def test_resolution_floor(self):
        with pytest.raises(ValueError):
            HighGainQuery(plant=self._plant(), w_res=8)


def integrator_params():
    return FunnelParams(alpha=(1.0,), beta=(0.5,), p=(), psi0=(2.0,),
                        surjection=Surjection(kind="linear_signed", sigma=-1))


class TestSaturationLevel:
    def test_pure_integrator_certificate(self):
        M, cert = saturation_level(pure_integrator(), integrator_params(),
                                   eps=0.5, K=1.0)
        assert M > 0.0
        assert 0.0 < cert["eps_r"] < 1.0
        assert cert["chi_achieved"] >= 2.0 * cert["chi_star"]
        # R_q = 0 for the bare integrator; chi* from hand substitution:
        # (K + 0 + alpha*psi_max) * psi_max = (1 + 2) * 2 = 6
        assert cert["R_q"] == 0.0
        assert cert["chi_star"] == pytest.approx(6.0, rel=1e-12)
        assert M == pytest.approx(cert["sup_N"] * 2.0 + 1.0, rel=1e-12)

    def test_closed_loop_never_saturates(self):
        # end-to-end oracle: run with a box at the computed level and check
        # the demand stays strictly inside
        params = integrator_params()
        plant = pure_integrator()
        M, _ = saturation_level(plant, params, eps=0.5, K=1.0)
        ref = make_reference("cosine", m=1)
        cfg = SimConfig(t_end=10.0, rel_tol=1e-8, abs_tol=1e-8)
        trace = integrate(plant, params, Saturation(kind="box", level=M), ref,
                          np.array([0.5]), cfg)
        assert trace.term_reason == "completed"
        assert float(np.max(np.abs(trace.v))) < M
        assert not any(e.kind.startswith("Sat") for e in trace.events)

    def test_positive_floor_for_tiny_demands(self):
        M, cert = saturation_level(pure_integrator(), integrator_params(),
                                   eps=1e-6, K=1e-6, delta=1.0)
        assert M >= 1.0  # never collapses to zero, delta alone keeps it positive
        assert M > cert["delta"]

    def test_delta_is_additive(self):
        base, _ = saturation_level(pure_integrator(), integrator_params(),
                                   eps=0.5, K=1.0, delta=1.0)
        double, _ = saturation_level(pure_integrator(), integrator_params(),
                                     eps=0.5, K=1.0, delta=2.0)
        assert double - base == pytest.approx(1.0, rel=1e-12)

    def test_certificate_self_consistency_r2(self):
        # recomputing the containment fractions from the certificate's c
        # vector must reproduce eps_vec exactly
        params = FunnelParams(alpha=(1.5, 1.35), beta=(0.15, 0.675), p=(1.1,),
                              psi0=(4.1, 2.0),
                              surjection=Surjection(kind="linear_signed", sigma=-1))
        plant = LinearBIF(R=np.zeros((2, 1, 1)), S=np.zeros((1, 0)),
                          P=np.zeros((0, 1)), Q=np.zeros((0, 0)),
                          Gamma=[[1.0]], eta0=np.zeros(0))
        eps = 0.5
        M, cert = saturation_level(plant, params, eps=eps, K=1.0)
        again = containment_fractions(
            params, np.full(1, eps) * np.asarray(params.psi0[:-1]),
            cert["c"][:1])
        assert np.array_equal(again, cert["eps_vec"])
        assert M > 0.0

    def test_wrong_direction_exhausts_search(self):
        # demanded sign never helps: chi stays negative for every gain
        params = FunnelParams(alpha=(1.0,), beta=(0.5,), p=(), psi0=(2.0,),
                              surjection=Surjection(kind="linear_signed", sigma=1))
        with pytest.raises(HighGainSearchError):
            saturation_level(pure_integrator(), params, eps=0.5, K=1.0,
                             max_steps=30)

    def test_gamma_zero_rejected(self):
        plant = LinearBIF(R=np.zeros((1, 1, 1)), S=np.zeros((1, 0)),
                          P=np.zeros((0, 1)), Q=np.zeros((0, 0)),
                          Gamma=[[0.0]], eta0=np.zeros(0))
        with pytest.raises(UnsupportedPlant):
            saturation_level(plant, integrator_params(), eps=0.5, K=1.0)

    def test_unstable_internal_dynamics_rejected(self):
        plant = LinearBIF(R=np.zeros((1, 1, 1)), S=[[1.0]], P=[[1.0]],
                          Q=[[0.5]], Gamma=[[1.0]], eta0=[0.0])
        with pytest.raises(UnsupportedPlant):
            saturation_level(plant, integrator_params(), eps=0.5, K=1.0)

    def test_internal_dynamics_enlarge_radius(self):
        plant = LinearBIF(R=np.zeros((1, 1, 1)), S=[[1.0]], P=[[1.0]],
                          Q=[[-1.0]], Gamma=[[1.0]], eta0=[0.2])
        M, cert = saturation_level(plant, integrator_params(), eps=0.5, K=1.0)
        assert cert["R_q"] > 0.0
        assert M > 0.0


class TestInvariantSetSweep:
    def test_pure_integrator_passes(self):
        params = integrator_params()
        plant = pure_integrator()
        M, cert = saturation_level(plant, params, eps=0.5, K=1.0)
        ref = make_reference("cosine", m=1)
        rep = invariant_set_sweep(plant, params, M, [cert["eps_r"]], ref,
                                  n_samples=20,
                                  cfg=SimConfig(t_end=5.0, rel_tol=1e-6,
                                                abs_tol=1e-8), seed=3)
        assert rep.passed

    def test_small_level_fails(self):
        params = integrator_params()
        plant = pure_integrator()
        M, cert = saturation_level(plant, params, eps=0.5, K=1.0)
        ref = make_reference("cosine", m=1)
        rep = invariant_set_sweep(plant, params, M / 100.0, [cert["eps_r"]], ref,
                                  n_samples=10,
                                  cfg=SimConfig(t_end=2.0, rel_tol=1e-6,
                                                abs_tol=1e-8), seed=3)
        assert not rep.passed

    def test_zero_errors_zero_reference_trivially_invariant(self):
        params = integrator_params()
        plant = pure_integrator()
        ref = make_reference("zero", m=1)
        rep = invariant_set_sweep(plant, params, 1.0, [1e-9], ref, n_samples=3,
                                  cfg=SimConfig(t_end=1.0, rel_tol=1e-6,
                                                abs_tol=1e-10), seed=0,
                                  tol=1e-8)
        assert rep.passed

    def test_bad_eps_vec(self):
        with pytest.raises(ValueError):
            invariant_set_sweep(pure_integrator(), integrator_params(), 1.0,
                                [1.5], make_reference("zero", m=1))
