import math

import numpy as np
import pytest
import scipy.linalg

from tada.engine import (
    StateVector,
    apply_trotter_step,
    exact_evolve,
    exact_evolve_dense,
    exact_propagator_dense,
    expectation,
    load_state,
    magnetization,
    measure_moments,
    prepare_initial,
    save_state,
    second_moment,
)
from tada.errors import ConvergenceError
from tada.hamiltonian import build_static_operators
from tada.magnus import dense_h_infinity
from tada.pauli import PauliOperator
from tada.controller import fit_loglog_slope

from conftest import constant_drive_spec, fast_drive_spec


def random_state(L, rng):
    amps = rng.normal(size=1 << L) + 1j * rng.normal(size=1 << L)
    amps /= np.linalg.norm(amps)
    return StateVector(L, amps)


class TestPrepareInitial:
    def test_zero_angle_is_all_down(self):
        state = prepare_initial(3, 0.0)
        expected = np.zeros(8)
        expected[-1] = 1.0  # |111> = all spins down
        np.testing.assert_allclose(state.amplitudes, expected)

    def test_half_pi_flips_to_all_up(self):
        state = prepare_initial(2, math.pi / 2)
        assert magnetization(state, "z") == pytest.approx(1.0, abs=1e-12)
        # amplitude concentrates on |00> with phase (-i)^L
        assert abs(state.amplitudes[0]) == pytest.approx(1.0, abs=1e-12)

    def test_single_qubit_rotation_angle(self):
        theta = 2.0
        state = prepare_initial(2, theta)
        assert magnetization(state, "z") == pytest.approx(-math.cos(2 * theta), abs=1e-12)

    def test_equatorial_angle_kills_z(self):
        state = prepare_initial(3, math.pi / 4)
        assert magnetization(state, "z") == pytest.approx(0.0, abs=1e-12)


class TestTrotterStep:
    def test_zero_window_is_identity(self, rng):
        spec = fast_drive_spec(3)
        state = random_state(3, rng)
        out = apply_trotter_step(state, spec, 0.4, 0.0)
        np.testing.assert_array_equal(out.amplitudes, state.amplitudes)

    def test_diagonal_when_transverse_field_off(self, rng):
        spec = fast_drive_spec(3, h_x=0.0)
        state = random_state(3, rng)
        out = apply_trotter_step(state, spec, 0.1, 0.3)
        np.testing.assert_allclose(
            np.abs(out.amplitudes) ** 2, np.abs(state.amplitudes) ** 2, atol=1e-14
        )

    def test_matches_dense_three_factor_product(self, rng):
        spec = fast_drive_spec(4)
        state = random_state(4, rng)
        t, dt = 0.3, 0.2
        out = apply_trotter_step(state, spec, t, dt)
        G, F = build_static_operators(spec)
        gm = float(spec.g_schedule(t + dt / 2))
        fm = float(spec.f_schedule(t + dt / 2))
        half_g = scipy.linalg.expm(-1j * gm * G.to_dense() * dt / 2)
        full_f = scipy.linalg.expm(-1j * fm * F.to_dense() * dt)
        np.testing.assert_allclose(
            out.amplitudes, half_g @ full_f @ half_g @ state.amplitudes, atol=1e-12
        )

    def test_input_state_untouched(self, rng):
        spec = fast_drive_spec(3)
        state = random_state(3, rng)
        before = state.amplitudes.copy()
        apply_trotter_step(state, spec, 0.0, 0.2)
        assert np.array_equal(state.amplitudes, before)

    def test_norm_drift_tiny_per_step(self, rng):
        spec = fast_drive_spec(4)
        state = random_state(4, rng)
        out = apply_trotter_step(state, spec, 0.3, 0.2)
        assert abs(out.norm_error() - state.norm_error()) < 1e-13

    def test_norm_drift_bounded_over_many_steps(self):
        spec = fast_drive_spec(4)
        state = prepare_initial(4, 2.0)
        t = 0.0
        for _ in range(10_000):
            state = apply_trotter_step(state, spec, t, 0.05)
            t += 0.05
        assert state.norm_error() < 1e-9

    def test_midpoint_order_on_states(self):
        # constant drives: one step error vs the exact exponential ~ dt^3
        spec = constant_drive_spec(3, h_x=0.8)
        G, F = build_static_operators(spec)
        H = G.to_dense() + F.to_dense()
        state = prepare_initial(3, 2.0)
        dts = np.geomspace(0.02, 0.4, 8)
        errs = []
        for dt in dts:
            stepped = apply_trotter_step(state, spec, 0.0, float(dt))
            exact = scipy.linalg.expm(-1j * H * dt) @ state.amplitudes
            errs.append(np.linalg.norm(stepped.amplitudes - exact))
        assert fit_loglog_slope(dts, errs) == pytest.approx(3.0, abs=0.2)


class TestExactEvolve:
    def test_constant_drive_matches_matrix_exponential(self):
        spec = constant_drive_spec(2, h_x=0.9, h_z=0.3)
        G, F = build_static_operators(spec)
        H = G.to_dense() + F.to_dense()
        state = prepare_initial(2, 0.7)
        out = exact_evolve(state, spec, 0.0, 1.3)
        ref = scipy.linalg.expm(-1j * H * 1.3) @ state.amplitudes
        assert np.max(np.abs(out.amplitudes - ref)) < 1e-10

    def test_refinement_converges_at_second_order(self):
        from tada.engine import _run_midpoint_substeps

        spec = fast_drive_spec(3)
        state = prepare_initial(3, 2.0)
        reference = exact_evolve(state, spec, 0.0, 0.3, tol=1e-12).amplitudes
        errs = []
        nums = [8, 16, 32, 64, 128]
        for num in nums:
            amps = state.amplitudes.copy()
            _run_midpoint_substeps(amps, spec, 0.0, 0.3, num)
            errs.append(np.max(np.abs(amps - reference)))
        ratios = [errs[i] / errs[i + 1] for i in range(len(errs) - 1)]
        assert all(3.0 < r < 5.0 for r in ratios)  # error ratio ~ 4 per doubling

    def test_dense_variant_agrees(self):
        spec = fast_drive_spec(4)
        state = prepare_initial(4, 2.0)
        a = exact_evolve(state, spec, 0.0, 0.9)
        b = exact_evolve_dense(state, spec, 0.0, 0.9)
        assert np.max(np.abs(a.amplitudes - b.amplitudes)) < 1e-8

    def test_substep_budget_enforced(self):
        spec = fast_drive_spec(2)
        state = prepare_initial(2, 1.0)
        with pytest.raises(ConvergenceError):
            exact_evolve(state, spec, 0.0, 0.5, tol=1e-16, max_substeps=64)

    def test_windowed_moments_conserved_under_exact_evolution(self):
        # piecewise conservation: the window generator's moments match at
        # both window edges when the evolution is exact
        spec = fast_drive_spec(6)
        state = prepare_initial(6, 2.0)
        t = 0.0
        for dt in (0.2, 0.25, 0.15):
            H = dense_h_infinity(spec, t, dt)
            before = np.vdot(state.amplitudes, H @ state.amplitudes).real
            before2 = np.vdot(state.amplitudes, H @ (H @ state.amplitudes)).real
            state = exact_evolve(state, spec, t, t + dt)
            after = np.vdot(state.amplitudes, H @ state.amplitudes).real
            after2 = np.vdot(state.amplitudes, H @ (H @ state.amplitudes)).real
            assert abs(after - before) < 1e-8
            assert abs(after2 - before2) < 1e-8
            t += dt

    def test_expectation_of_drive_hamiltonian_plateaus_after_decay(self):
        # the window average of H(t) varies while the drive rings, then
        # settles once t >> tau
        spec = fast_drive_spec(4)
        from tada.magnus import build_piecewise_hamiltonian
        from tada.engine import StateVector

        state = prepare_initial(4, 2.0)
        dt = 0.25
        values = []
        t = 0.0
        for _ in range(48):
            op = build_piecewise_hamiltonian(spec, t, dt, 5).operator
            values.append(expectation(op, state) / spec.L)
            state = exact_evolve(state, spec, t, t + dt)
            t += dt
        early = np.array(values[:12])
        late = np.array(values[36:])
        assert np.ptp(early) > 10 * np.ptp(late)
        assert np.ptp(late) < 2e-3


class TestMeasurements:
    def test_identity_expectation(self, rng):
        state = random_state(3, rng)
        assert expectation(PauliOperator.identity(3), state) == pytest.approx(1.0)
        assert second_moment(PauliOperator.identity(3), state) == pytest.approx(1.0)

    def test_all_down_total_z(self):
        state = prepare_initial(4, 0.0)
        op = PauliOperator(4, {(0, 1 << j): 1.0 for j in range(4)})
        assert expectation(op, state) == pytest.approx(-4.0)

    def test_non_hermitian_rejected(self, rng):
        state = random_state(2, rng)
        op = PauliOperator(2, {(1, 1): 1.0j})
        with pytest.raises(ValueError):
            expectation(op, state)
        with pytest.raises(ValueError):
            second_moment(op, state)

    def test_against_dense_quadratic_forms(self, rng):
        from tada.pauli import random_hermitian_operator

        for _ in range(10):
            op = random_hermitian_operator(3, 6, rng)
            state = random_state(3, rng)
            dense = op.to_dense()
            e_ref = np.vdot(state.amplitudes, dense @ state.amplitudes).real
            m_ref = np.vdot(state.amplitudes, dense @ dense @ state.amplitudes).real
            assert expectation(op, state) == pytest.approx(e_ref, abs=1e-12)
            assert second_moment(op, state) == pytest.approx(m_ref, abs=1e-11)
            e, m = measure_moments(op, state)
            assert (e, m) == (expectation(op, state), second_moment(op, state))

    def test_eigenstate_second_moment(self):
        # all-down state is an eigenstate of total Z with eigenvalue -L
        state = prepare_initial(3, 0.0)
        op = PauliOperator(3, {(0, 1 << j): 1.0 for j in range(3)})
        assert second_moment(op, state) == pytest.approx(9.0)

    def test_variance_nonnegative(self, rng):
        from tada.pauli import random_hermitian_operator

        for _ in range(10):
            op = random_hermitian_operator(4, 8, rng)
            state = random_state(4, rng)
            e, m = measure_moments(op, state)
            assert m - e * e >= -1e-10


class TestMagnetization:
    def test_all_down(self):
        state = prepare_initial(3, 0.0)
        assert magnetization(state, "z") == pytest.approx(-1.0)
        assert magnetization(state, "x") == pytest.approx(0.0, abs=1e-14)

    def test_axis_validation(self):
        with pytest.raises(ValueError):
            magnetization(prepare_initial(2, 0.0), "y")

    def test_trajectory_matches_exact_oracle(self):
        spec = fast_drive_spec(4)
        trotter = prepare_initial(4, 2.0)
        exact = prepare_initial(4, 2.0)
        t = 0.0
        dt = 0.02
        for _ in range(20):
            trotter = apply_trotter_step(trotter, spec, t, dt)
            exact = exact_evolve(exact, spec, t, t + dt)
            t += dt
        for axis in ("x", "z"):
            assert magnetization(trotter, axis) == pytest.approx(
                magnetization(exact, axis), abs=5e-4
            )


class TestStateDump:
    def test_round_trip(self, tmp_path, rng):
        state = random_state(4, rng)
        path = tmp_path / "state.bin"
        save_state(path, state)
        again = load_state(path)
        assert again.num_sites == 4
        np.testing.assert_array_equal(again.amplitudes, state.amplitudes)

    def test_header_is_little_endian_uint32(self, tmp_path):
        state = prepare_initial(2, 0.0)
        path = tmp_path / "state.bin"
        save_state(path, state)
        raw = path.read_bytes()
        assert raw[:4] == (2).to_bytes(4, "little")
        assert len(raw) == 4 + 16 * 4  # header + 4 amplitudes * 2 doubles
