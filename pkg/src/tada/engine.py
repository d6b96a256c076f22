"""State-vector evolution: midpoint Trotter steps and the exact oracle.

The midpoint step splits H(t) = g(t) G + f(t) F as half-G / full-F / half-G
with both drives evaluated at the window midpoint. The G factor is a uniform
single-qubit X rotation on every site, the F factor a diagonal phase, so one
step costs O(L 2^L). The exact oracle composes the same step over refined
subgrids, doubling the substep count until the state stops moving.
"""

from __future__ import annotations

import functools
import math
import struct
from dataclasses import dataclass

import numba
import numpy as np
import scipy.linalg

from .errors import ConvergenceError, DimensionError
from .hamiltonian import HamiltonianSpec, build_static_operators
from .pauli import PauliOperator

NORM_TOL = 1e-12
ORACLE_TOL = 1e-10
MAX_SUBSTEPS = 1 << 20
DENSE_ORACLE_CAP = 8


@dataclass
class StateVector:
    """Normalized amplitudes over the 2^L computational basis states.

    Site 0 is the most significant index bit, matching the Kronecker
    ordering used by the Pauli algebra.
    """

    num_sites: int
    amplitudes: np.ndarray

    def __post_init__(self) -> None:
        dim = 1 << self.num_sites
        if self.amplitudes.shape != (dim,):
            raise DimensionError(
                f"expected {dim} amplitudes for {self.num_sites} sites,"
                f" got {self.amplitudes.shape}"
            )

    def norm_error(self) -> float:
        return abs(float(np.vdot(self.amplitudes, self.amplitudes).real) - 1.0)

    def copy(self) -> "StateVector":
        return StateVector(self.num_sites, self.amplitudes.copy())


def prepare_initial(L: int, theta: float) -> StateVector:
    """Product state with every site rotated by exp(-i theta X) from spin-down."""
    if L < 2:
        raise ValueError("need at least 2 sites")
    single = np.array([-1j * math.sin(theta), math.cos(theta)], dtype=complex)
    amps = np.array([1.0 + 0.0j])
    for _ in range(L):
        amps = np.kron(amps, single)
    amps /= np.linalg.norm(amps)
    return StateVector(L, amps)


@numba.njit(cache=True)
def _rotate_x_all_sites(amps: np.ndarray, num_sites: int, angle: float) -> None:
    """In-place exp(-i angle X_j) on every site."""
    c = math.cos(angle)
    s = math.sin(angle)
    dim = amps.shape[0]
    for p in range(num_sites):
        stride = 1 << p
        for base in range(0, dim, 2 * stride):
            for off in range(stride):
                i0 = base + off
                i1 = i0 + stride
                a0 = amps[i0]
                a1 = amps[i1]
                amps[i0] = c * a0 - 1j * s * a1
                amps[i1] = c * a1 - 1j * s * a0


@numba.njit(cache=True)
def _midpoint_chunk(
    amps: np.ndarray,
    num_sites: int,
    g_angles: np.ndarray,
    f_phases: np.ndarray,
    energy: np.ndarray,
) -> None:
    """Apply a run of midpoint steps in place.

    g_angles[m] is the per-site X angle of one half-G factor of substep m;
    f_phases[m] multiplies the diagonal F energy table.
    """
    dim = amps.shape[0]
    for m in range(g_angles.shape[0]):
        _rotate_x_all_sites(amps, num_sites, g_angles[m])
        scale = f_phases[m]
        for i in range(dim):
            arg = scale * energy[i]
            amps[i] = amps[i] * complex(math.cos(arg), -math.sin(arg))
        _rotate_x_all_sites(amps, num_sites, g_angles[m])


@functools.lru_cache(maxsize=32)
def _diagonal_energy(spec: HamiltonianSpec) -> np.ndarray:
    """Eigenvalue of F on each basis state (F is diagonal in the Z basis)."""
    _, F = build_static_operators(spec)
    dim = 1 << spec.L
    idx = np.arange(dim, dtype=np.uint64)
    energy = np.zeros(dim)
    for term in F:
        if term.x_mask:
            raise ValueError("F must be diagonal")
        zr = _index_mask(term.z_mask, spec.L)
        parity = (np.bitwise_count(idx & np.uint64(zr)) & np.uint64(1)).astype(bool)
        energy += np.where(parity, -term.coefficient.real, term.coefficient.real)
    return energy


def _index_mask(mask: int, num_sites: int) -> int:
    out = 0
    for site in range(num_sites):
        if (mask >> site) & 1:
            out |= 1 << (num_sites - 1 - site)
    return out


def _run_midpoint_substeps(
    amps: np.ndarray, spec: HamiltonianSpec, t0: float, t1: float, num_substeps: int
) -> None:
    h = (t1 - t0) / num_substeps
    mids = t0 + (np.arange(num_substeps) + 0.5) * h
    g_angles = spec.h_x * np.asarray(spec.g_schedule(mids), dtype=float) * (h / 2.0)
    f_phases = np.asarray(spec.f_schedule(mids), dtype=float) * h
    _midpoint_chunk(amps, spec.L, g_angles, f_phases, _diagonal_energy(spec))


def apply_trotter_step(
    state: StateVector, spec: HamiltonianSpec, t: float, dt: float
) -> StateVector:
    """One midpoint Trotter step over [t, t + dt]; the input state is untouched."""
    if state.num_sites != spec.L:
        raise DimensionError("state and spec disagree on the number of sites")
    amps = state.amplitudes.copy()
    norm_in = float(np.vdot(amps, amps).real)
    if dt != 0.0:
        _run_midpoint_substeps(amps, spec, t, t + dt, 1)
    out = StateVector(spec.L, amps)
    # the step is unitary by construction; only rounding can move the norm
    drift = abs(float(np.vdot(amps, amps).real) - norm_in)
    if drift > NORM_TOL:
        raise ConvergenceError(f"norm drifted by {drift:.3e} in one step")
    return out


def exact_evolve(
    state: StateVector,
    spec: HamiltonianSpec,
    t0: float,
    t1: float,
    *,
    tol: float = ORACLE_TOL,
    max_substeps: int = MAX_SUBSTEPS,
) -> StateVector:
    """Reference evolution over [t0, t1] to amplitude accuracy ``tol``.

    Composes midpoint steps on a subgrid and doubles the substep count until
    successive refinements agree to ``tol`` in max amplitude difference. Each
    substep is exactly unitary, so norms are preserved to rounding. Spans
    longer than one time unit are split into chunks with proportionally
    tightened tolerances, keeping the substep budget per refinement bounded.
    """
    if not t1 > t0:
        raise ValueError("t1 must exceed t0")
    if state.num_sites != spec.L:
        raise DimensionError("state and spec disagree on the number of sites")
    num_chunks = max(1, int(math.ceil((t1 - t0) / 1.0)))
    chunk_tol = tol / num_chunks
    edges = np.linspace(t0, t1, num_chunks + 1)
    current = state
    for a, b in zip(edges[:-1], edges[1:]):
        current = _exact_evolve_window(
            current, spec, float(a), float(b), chunk_tol, max_substeps
        )
    return current


def _exact_evolve_window(
    state: StateVector,
    spec: HamiltonianSpec,
    t0: float,
    t1: float,
    tol: float,
    max_substeps: int,
) -> StateVector:
    num = max(1, int(math.ceil((t1 - t0) / 0.1)))
    prev = state.amplitudes.copy()
    _run_midpoint_substeps(prev, spec, t0, t1, num)
    while True:
        num *= 2
        if num > max_substeps:
            raise ConvergenceError(
                f"exact evolution did not converge within {max_substeps} substeps"
            )
        cur = state.amplitudes.copy()
        _run_midpoint_substeps(cur, spec, t0, t1, num)
        if float(np.max(np.abs(cur - prev))) < tol:
            return StateVector(spec.L, cur)
        prev = cur


@functools.lru_cache(maxsize=16)
def _dense_parts(spec: HamiltonianSpec) -> tuple[np.ndarray, np.ndarray]:
    G, F = build_static_operators(spec)
    return G.to_dense(), F.to_dense()


def exact_propagator_dense(
    spec: HamiltonianSpec,
    t0: float,
    t1: float,
    *,
    tol: float = 1e-12,
    max_substeps: int = MAX_SUBSTEPS,
) -> np.ndarray:
    """Dense U(t1, t0) for small systems (L <= 8).

    Midpoint exponentials of the full matrix on a doubling subgrid; the
    composition is time-symmetric, so Richardson extrapolation of successive
    levels gains two orders, and the result is projected back to the unitary
    manifold via a polar decomposition.
    """
    if spec.L > DENSE_ORACLE_CAP:
        raise DimensionError(f"dense oracle capped at {DENSE_ORACLE_CAP} sites")
    if not t1 > t0:
        raise ValueError("t1 must exceed t0")

    def level(num: int) -> np.ndarray:
        G_d, F_d = _dense_parts(spec)
        h = (t1 - t0) / num
        mids = t0 + (np.arange(num) + 0.5) * h
        g_vals = np.asarray(spec.g_schedule(mids), dtype=float)
        f_vals = np.asarray(spec.f_schedule(mids), dtype=float)
        U = np.eye(G_d.shape[0], dtype=complex)
        for g, f in zip(g_vals, f_vals):
            w, V = np.linalg.eigh(g * G_d + f * F_d)
            U = (V * np.exp(-1j * w * h)) @ V.conj().T @ U
        return U

    num = max(1, int(math.ceil((t1 - t0) / 0.1)))
    coarse = level(num)
    extrapolated = None
    while True:
        num *= 2
        if num > max_substeps:
            raise ConvergenceError(
                f"dense oracle did not converge within {max_substeps} substeps"
            )
        fine = level(num)
        new_extrapolated = (4.0 * fine - coarse) / 3.0
        if extrapolated is not None:
            if float(np.max(np.abs(new_extrapolated - extrapolated))) < tol:
                unitary, _ = scipy.linalg.polar(new_extrapolated)
                return unitary
        extrapolated = new_extrapolated
        coarse = fine


def exact_evolve_dense(
    state: StateVector,
    spec: HamiltonianSpec,
    t0: float,
    t1: float,
    *,
    tol: float = 1e-12,
) -> StateVector:
    U = exact_propagator_dense(spec, t0, t1, tol=tol)
    return StateVector(spec.L, U @ state.amplitudes)


def expectation(op: PauliOperator, state: StateVector) -> float:
    """Real expectation value <psi|O|psi> of a hermitian operator."""
    if not op.is_hermitian():
        raise ValueError("expectation requires a hermitian operator")
    value = np.vdot(state.amplitudes, op.apply(state.amplitudes))
    if abs(value.imag) >= 1e-10:
        raise ArithmeticError(f"expectation has imaginary residue {value.imag:.3e}")
    return float(value.real)


def second_moment(op: PauliOperator, state: StateVector) -> float:
    """<psi|O^2|psi> = ||O psi||^2, via a single operator application."""
    if not op.is_hermitian():
        raise ValueError("second moment requires a hermitian operator")
    w = op.apply(state.amplitudes)
    return float(np.vdot(w, w).real)


def measure_moments(op: PauliOperator, state: StateVector) -> tuple[float, float]:
    """(expectation, second moment) sharing one operator application."""
    if not op.is_hermitian():
        raise ValueError("moments require a hermitian operator")
    w = op.apply(state.amplitudes)
    first = np.vdot(state.amplitudes, w)
    if abs(first.imag) >= 1e-10:
        raise ArithmeticError(f"expectation has imaginary residue {first.imag:.3e}")
    return float(first.real), float(np.vdot(w, w).real)


@functools.lru_cache(maxsize=16)
def _total_spin_operator(L: int, axis: str) -> PauliOperator:
    terms = {}
    for j in range(L):
        bit = 1 << j
        terms[(bit, 0) if axis == "x" else (0, bit)] = 1.0
    return PauliOperator(L, terms)


def magnetization(state: StateVector, axis: str) -> float:
    """Per-site magnetization <sum_j sigma_j^axis> / L for axis in {x, z}."""
    if axis not in ("x", "z"):
        raise ValueError("axis must be 'x' or 'z'")
    op = _total_spin_operator(state.num_sites, axis)
    return expectation(op, state) / state.num_sites


def save_state(path, state: StateVector) -> None:
    """Binary dump: uint32 little-endian L, then interleaved re/im doubles."""
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", state.num_sites))
        interleaved = np.empty(2 * state.amplitudes.size)
        interleaved[0::2] = state.amplitudes.real
        interleaved[1::2] = state.amplitudes.imag
        fh.write(interleaved.astype("<f8").tobytes())


def load_state(path) -> StateVector:
    with open(path, "rb") as fh:
        (L,) = struct.unpack("<I", fh.read(4))
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != 2 * (1 << L):
        raise ValueError("state dump has the wrong amplitude count")
    return StateVector(L, (data[0::2] + 1j * data[1::2]).astype(complex))
