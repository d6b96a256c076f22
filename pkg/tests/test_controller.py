import math

import numpy as np
import pytest

from tada.controller import (
    GlobalAccumulator,
    StepPolicy,
    ToleranceSet,
    constraints_ok,
    evaluate_candidate,
    fit_loglog_slope,
    run_adaptive,
    run_exact,
    run_fixed,
    scaling_study,
    select_step,
)
from tada.engine import expectation, prepare_initial
from tada.hamiltonian import build_static_operators
from tada.magnus import PiecewiseCache

from conftest import constant_drive_spec, fast_drive_spec


class TestEvaluateCandidate:
    def test_eigenstate_of_diagonal_hamiltonian_is_stationary(self):
        # with the transverse field off, H is diagonal and a basis state is
        # an eigenstate: the step only adds phases
        spec = constant_drive_spec(4, h_x=0.0)
        state = prepare_initial(4, 0.0)
        ev = evaluate_candidate(state, spec, 0.0, 0.3, 1)
        assert ev.E_f == pytest.approx(ev.E_i, abs=1e-14)
        assert ev.var_i == pytest.approx(0.0, abs=1e-12)
        assert ev.var_f == pytest.approx(0.0, abs=1e-12)

    def test_rollback_leaves_state_bit_identical(self):
        spec = fast_drive_spec(4)
        state = prepare_initial(4, 2.0)
        before = state.amplitudes.copy()
        evaluate_candidate(state, spec, 0.0, 0.4, 5)
        assert np.array_equal(state.amplitudes, before)

    def test_change_scales_at_trotter_order(self):
        spec = fast_drive_spec(5)
        state = prepare_initial(5, 2.0)
        dts = np.geomspace(0.005, 0.05, 6)
        dEs = [
            abs((ev := evaluate_candidate(state, spec, 0.3, float(dt), 5)).E_f - ev.E_i)
            for dt in dts
        ]
        assert fit_loglog_slope(dts, dEs) == pytest.approx(3.0, abs=0.2)

    def test_variance_definition(self):
        spec = fast_drive_spec(3)
        state = prepare_initial(3, 2.0)
        ev = evaluate_candidate(state, spec, 0.0, 0.2, 5)
        from tada.magnus import build_piecewise_hamiltonian
        from tada.engine import second_moment

        op = build_piecewise_hamiltonian(spec, 0.0, 0.2, 5).operator
        L = spec.L
        e = expectation(op, state) / L
        v = second_moment(op, state) / L - L * e * e
        assert ev.E_i == pytest.approx(e)
        assert ev.var_i == pytest.approx(v)


class TestConstraints:
    def test_all_disabled_always_passes(self):
        acc = GlobalAccumulator()
        assert constraints_ok(5.0, 7.0, -3.0, 2.0, acc, ToleranceSet())

    def test_local_bound(self):
        tol = ToleranceSet(d_E=0.01, d_var=0.02)
        acc = GlobalAccumulator()
        assert constraints_ok(0.0, 0.0, 0.009, 0.019, acc, tol)
        assert not constraints_ok(0.0, 0.0, 0.011, 0.0, acc, tol)
        assert not constraints_ok(0.0, 0.0, 0.0, 0.021, acc, tol)

    def test_global_bound_uses_accumulator(self):
        tol = ToleranceSet(dg_E=0.01, dg_var=0.02)
        acc = GlobalAccumulator(sum_dE=0.008, sum_dVar=0.0)
        assert constraints_ok(0.0, 0.0, 0.001, 0.0, acc, tol)
        assert not constraints_ok(0.0, 0.0, 0.003, 0.0, acc, tol)
        # steps pushing the sum back toward zero are welcome
        assert constraints_ok(0.0, 0.0, -0.017, 0.0, acc, tol)

    def test_global_only_implies_local_two_sided_bound(self):
        # any accepted step under the global scheme changes E by < 2 * dg_E
        tol = ToleranceSet(dg_E=0.01, dg_var=math.inf)
        for prior in np.linspace(-0.0099, 0.0099, 21):
            acc = GlobalAccumulator(sum_dE=float(prior), sum_dVar=0.0)
            for dE in np.linspace(-0.03, 0.03, 61):
                if constraints_ok(0.0, 0.0, float(dE), 0.0, acc, tol):
                    assert abs(dE) < 2 * tol.dg_E

    def test_tolerances_must_be_positive(self):
        with pytest.raises(ValueError):
            ToleranceSet(d_E=0.0)


class TestSelectStep:
    def test_unconstrained_accepts_max_step_first_trial(self):
        spec = fast_drive_spec(4)
        state = prepare_initial(4, 2.0)
        policy = StepPolicy(dt_min=0.1, dt_max=0.7, k=5)
        record, _ = select_step(state, spec, 0.0, GlobalAccumulator(), ToleranceSet(), policy)
        assert record.dt == 0.7
        assert record.trials == 1
        assert not record.frozen

    def test_trial_count_within_bisection_bound(self):
        spec = fast_drive_spec(4)
        state = prepare_initial(4, 2.0)
        policy = StepPolicy(dt_min=0.1, dt_max=0.7, bisect_eps=0.01, max_trials=20, k=5)
        bound = policy.trial_bound()
        for tol in (
            ToleranceSet(d_E=1e-3, d_var=1e-2),
            ToleranceSet(d_E=1e-5, d_var=1e-4),
            ToleranceSet(d_E=1e-13, d_var=1e-13),
        ):
            record, _ = select_step(
                state, spec, 0.0, GlobalAccumulator(), tol, policy, cache=PiecewiseCache(spec)
            )
            assert record.trials <= bound
            assert policy.dt_min <= record.dt <= policy.dt_max

    def test_freeze_at_floor_updates_accumulator(self):
        spec = fast_drive_spec(4)
        state = prepare_initial(4, 2.0)
        policy = StepPolicy(dt_min=0.1, dt_max=0.7, k=5)
        acc = GlobalAccumulator()
        record, _ = select_step(state, spec, 0.0, acc, ToleranceSet(d_E=1e-13, d_var=1e-13), policy)
        assert record.frozen
        assert record.dt == policy.dt_min
        assert acc.sum_dE == pytest.approx(record.E_f - record.E_i)
        assert record.cum_dE == pytest.approx(acc.sum_dE)

    def test_bisection_accepts_feasible_interior_step(self):
        spec = fast_drive_spec(4)
        state = prepare_initial(4, 2.0)
        policy = StepPolicy(dt_min=0.01, dt_max=0.7, bisect_eps=0.01, k=5)
        # tolerance sized so dt_max fails but the floor passes comfortably
        tol = ToleranceSet(d_E=2e-3, d_var=math.inf)
        record, _ = select_step(state, spec, 0.0, GlobalAccumulator(), tol, policy)
        assert not record.frozen
        assert policy.dt_min < record.dt < policy.dt_max
        assert abs(record.E_f - record.E_i) < tol.d_E
        # the accepted step rides close to the feasibility boundary
        assert abs(record.E_f - record.E_i) > 0.2 * tol.d_E


class TestRunAdaptive:
    def test_single_unconstrained_step(self):
        spec = fast_drive_spec(3)
        policy = StepPolicy(dt_min=0.1, dt_max=0.7, k=5)
        log = run_adaptive(spec, 2.0, ToleranceSet(), policy, n_steps=1)
        assert len(log) == 1
        assert log.records[0].dt == 0.7
        assert log.records[0].trials == 1
        assert log.records[0].m == 1

    def test_stop_by_time(self):
        spec = fast_drive_spec(3)
        policy = StepPolicy(dt_min=0.1, dt_max=0.5, k=3)
        log = run_adaptive(spec, 2.0, ToleranceSet(), policy, t_final=2.0)
        assert log.final_time >= 2.0 - 1e-12
        assert log.final_time < 2.0 + policy.dt_max

    def test_requires_exactly_one_stop_rule(self):
        spec = fast_drive_spec(3)
        with pytest.raises(ValueError):
            run_adaptive(spec, 2.0, ToleranceSet(), StepPolicy(k=3))
        with pytest.raises(ValueError):
            run_adaptive(spec, 2.0, ToleranceSet(), StepPolicy(k=3), n_steps=2, t_final=1.0)

    def test_global_scheme_bounds_every_nonfrozen_cumulative(self):
        spec = fast_drive_spec(6)
        tol = ToleranceSet(dg_E=0.01, dg_var=0.02)
        policy = StepPolicy(dt_min=0.05, dt_max=0.5, k=3)
        log = run_adaptive(spec, 2.0, tol, policy, n_steps=40)
        for rec in log.records:
            if not rec.frozen:
                assert abs(rec.cum_dE) < tol.dg_E
                assert abs(rec.cum_dVar) < tol.dg_var

    def test_static_limit_reduces_to_energy_conservation_check(self):
        # constant drives: cum_dE telescopes to the per-site energy drift
        # from the start of the run
        spec = constant_drive_spec(5, g=1.0, f=1.0)
        tol = ToleranceSet(dg_E=0.005, dg_var=math.inf)
        policy = StepPolicy(dt_min=0.05, dt_max=0.6, k=3)
        log = run_adaptive(spec, 2.0, tol, policy, n_steps=30)
        G, F = build_static_operators(spec)
        H = G + F
        state = prepare_initial(5, 2.0)
        E0 = expectation(H, state) / spec.L
        for rec in log.records:
            assert rec.cum_dE == pytest.approx(rec.E_f - E0, abs=1e-12)
            if not rec.frozen:
                assert abs(rec.E_f - E0) < tol.dg_E

    def test_freeze_halt_stops_run(self):
        spec = fast_drive_spec(4)
        tol = ToleranceSet(d_E=1e-13, d_var=1e-13)
        policy = StepPolicy(dt_min=0.1, dt_max=0.7, k=5, on_freeze="halt")
        log = run_adaptive(spec, 2.0, tol, policy, n_steps=10)
        assert log.metadata["halted_on_freeze"]
        assert len(log) == 1
        assert log.records[0].frozen

    def test_oracle_columns_filled(self):
        spec = fast_drive_spec(3)
        policy = StepPolicy(dt_min=0.1, dt_max=0.3, k=3)
        log = run_adaptive(spec, 2.0, ToleranceSet(), policy, n_steps=3, oracle=True)
        for rec in log.records:
            assert rec.exact_Mx is not None
            assert rec.exact_Mz is not None
            assert abs(rec.Mx - rec.exact_Mx) < 0.05


class TestRunFixed:
    def test_grid_bookkeeping(self):
        spec = fast_drive_spec(3)
        log = run_fixed(spec, 2.0, 0.25, 8, k=3)
        assert len(log) == 8
        assert log.final_time == pytest.approx(2.0)
        assert all(r.trials == 1 and not r.frozen for r in log.records)

    def test_constant_drive_energy_drift_scales_with_cube(self):
        spec = constant_drive_spec(4, h_x=0.8)
        n = 16
        dts = np.geomspace(0.05, 0.4, 6)
        drifts = []
        for dt in dts:
            log = run_fixed(spec, 2.0, float(dt), n, k=1)
            drifts.append(max(abs(r.cum_dE) for r in log.records))
        assert fit_loglog_slope(dts, drifts) == pytest.approx(3.0, abs=0.35)


class TestRunExact:
    def test_exact_trace_conserves_window_moments(self):
        spec = fast_drive_spec(4)
        log = run_exact(spec, 2.0, 0.3, 6, k=5)
        for rec in log.records:
            assert rec.E_f == pytest.approx(rec.E_i, abs=1e-6)
            assert rec.exact_Mx == rec.Mx
        assert abs(log.records[-1].cum_dE) < 1e-5


class TestScalingStudy:
    def test_constant_drives_have_zero_truncation_gap(self):
        spec = constant_drive_spec(4)
        study = scaling_study(spec, 0.0, [0.05, 0.1, 0.2], [1, 3], theta=2.0)
        for row in study.rows:
            assert row.abs_delta < 1e-11

    def test_trotter_order_slope(self):
        spec = fast_drive_spec(4)
        study = scaling_study(
            spec, 0.3, list(np.geomspace(0.01, 0.1, 6)), [5], theta=2.0
        )
        assert study.slopes["dE_slope_k5"] == pytest.approx(3.0, abs=0.25)

    def test_truncation_gap_decays_at_least_one_order_past_stated(self):
        # the gap's leading order sits at k+2 because even orders vanish;
        # assert the claimed k+1 as a lower bound
        spec = fast_drive_spec(4)
        study = scaling_study(
            spec, 0.3, list(np.geomspace(0.02, 0.2, 8)), [1, 3, 5], theta=2.0
        )
        for k in (1, 3, 5):
            assert study.slopes[f"delta_slope_k{k}"] >= k + 1 - 0.4

    def test_branch_limited_windows_are_trimmed(self):
        spec = fast_drive_spec(4, h_x=3.0)
        study = scaling_study(spec, 0.0, [0.05, 0.8], [1], theta=2.0)
        assert {r.dt for r in study.rows} == {0.05}

    def test_csv_shape(self):
        spec = constant_drive_spec(3)
        study = scaling_study(spec, 0.0, [0.1, 0.2], [1], theta=1.0)
        lines = study.to_csv().strip().splitlines()
        assert lines[0] == "dt,k,abs_dE,abs_dVar,abs_delta"
        assert len(lines) == 3
