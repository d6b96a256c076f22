"""Truncated Magnus series for the window Hamiltonian H_[k](t, dt).

Over one window the exact propagator is generated by a static operator
H_[inf]; expanding it in Legendre-moment operators A_n gives a series whose
even orders vanish identically. The truncations kept here are k in {1, 3, 5}:

    Omega_1 = A_1
    Omega_3 = -1/6 [A_1, A_2]
    Omega_5 =  1/60 [A_1, [A_1, A_3]] - 1/60 [A_2, [A_1, A_2]]
             + 1/360 [A_1, [A_1, [A_1, A_2]]] - 1/30 [A_2, A_3]

and H_[k] = i/dt * sum of Omega_n for n <= k. A dense matrix-log oracle for
H_[inf] on tiny systems backs the truncation-error measurements.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .engine import exact_propagator_dense
from .errors import BranchCutError, DimensionError
from .hamiltonian import HamiltonianSpec, build_A
from .pauli import PauliOperator, commutator

SUPPORTED_ORDERS = (1, 3, 5)
BRANCH_MARGIN = 0.1
H_INF_SITE_CAP = 8


@dataclass(frozen=True)
class PiecewiseHamiltonian:
    """H_[k] for one window: hermitian, static once (t, dt) are fixed."""

    t: float
    dt: float
    k: int
    operator: PauliOperator


def magnus_terms(spec: HamiltonianSpec, t: float, dt: float, k: int) -> dict[int, PauliOperator]:
    """The operators Omega_1..Omega_k, with explicit zeros at even orders."""
    if k not in SUPPORTED_ORDERS:
        raise ValueError(f"truncation order must be one of {SUPPORTED_ORDERS}, got {k}")
    a1 = build_A(spec, t, dt, 1)
    terms = {1: a1}
    if k >= 3:
        a2 = build_A(spec, t, dt, 2)
        terms[2] = PauliOperator.zero(spec.L)
        terms[3] = (-1.0 / 6.0) * commutator(a1, a2)
    if k >= 5:
        a3 = build_A(spec, t, dt, 3)
        c12 = commutator(a1, a2)
        terms[4] = PauliOperator.zero(spec.L)
        terms[5] = (
            (1.0 / 60.0) * commutator(a1, commutator(a1, a3))
            - (1.0 / 60.0) * commutator(a2, c12)
            + (1.0 / 360.0) * commutator(a1, commutator(a1, c12))
            - (1.0 / 30.0) * commutator(a2, a3)
        )
    return terms


def build_piecewise_hamiltonian(
    spec: HamiltonianSpec, t: float, dt: float, k: int
) -> PiecewiseHamiltonian:
    """Assemble H_[k] = i/dt * sum_n Omega_n over the window [t, t + dt]."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    total = PauliOperator.zero(spec.L)
    for op in magnus_terms(spec, t, dt, k).values():
        total = total + op
    return PiecewiseHamiltonian(t, dt, k, (1j / dt) * total)


class PiecewiseCache:
    """Memoized window-Hamiltonian builds for one controller run.

    Bisection probes re-query identical (t, dt, k) triples; the cache is
    bounded and evicts oldest entries first. One instance per run keeps
    concurrent runs independent.
    """

    def __init__(self, spec: HamiltonianSpec, max_entries: int = 256) -> None:
        self.spec = spec
        self.max_entries = max_entries
        self._store: dict[tuple[float, float, int], PiecewiseHamiltonian] = {}

    def build(self, t: float, dt: float, k: int) -> PiecewiseHamiltonian:
        key = (t, dt, k)
        hit = self._store.get(key)
        if hit is not None:
            return hit
        built = build_piecewise_hamiltonian(self.spec, t, dt, k)
        if len(self._store) >= self.max_entries:
            self._store.pop(next(iter(self._store)))
        self._store[key] = built
        return built


def dense_h_infinity(
    spec: HamiltonianSpec, t: float, dt: float, *, propagator_tol: float = 1e-12
) -> np.ndarray:
    """Dense H_[inf] = i log(U(t+dt, t)) / dt on small systems.

    The principal log is only the generator while every eigenphase of U
    stays clear of the branch cut, so windows whose extreme phase reaches
    pi - 0.1 are refused; shrink dt in that case.
    """
    if spec.L > H_INF_SITE_CAP:
        raise DimensionError(f"dense H_inf capped at {H_INF_SITE_CAP} sites")
    # Wrapped eigenphases alias back into (-pi, pi], so checking the log's
    # output alone cannot detect a crossed branch. Estimate the true phase
    # spread from the window-averaged Hamiltonian (the k=1 build) first.
    H_avg = build_piecewise_hamiltonian(spec, t, dt, 1).operator.to_dense()
    phase_estimate = float(np.max(np.abs(np.linalg.eigvalsh(H_avg)))) * dt
    if phase_estimate >= np.pi - BRANCH_MARGIN:
        raise BranchCutError(
            f"estimated eigenphase {phase_estimate:.4f} reaches the log branch"
            f" cut for window dt={dt}; shrink the window"
        )
    U = exact_propagator_dense(spec, t, t + dt, tol=propagator_tol)
    # U is unitary, hence normal: its Schur form is diagonal and the Schur
    # vectors give a clean spectral log.
    eigvals, Z = _schur_eig(U)
    phases = np.angle(eigvals)
    if float(np.max(np.abs(phases))) >= np.pi - BRANCH_MARGIN:
        raise BranchCutError(
            f"eigenphase {np.max(np.abs(phases)):.4f} too close to the log branch"
            f" cut for window dt={dt}"
        )
    H = (Z * (-phases / dt)) @ Z.conj().T
    H = 0.5 * (H + H.conj().T)
    hermiticity = float(np.max(np.abs(H - H.conj().T)))
    if hermiticity > 1e-10:
        raise ArithmeticError(f"H_inf hermiticity defect {hermiticity:.3e}")
    return H


def _schur_eig(U: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    T, Z = scipy.linalg.schur(U, output="complex")
    return np.diag(T), Z


def truncation_error_norm(spec: HamiltonianSpec, t: float, dt: float, k: int) -> float:
    """Spectral norm of H_[inf] - H_[k] over one window."""
    H_inf = dense_h_infinity(spec, t, dt)
    H_k = build_piecewise_hamiltonian(spec, t, dt, k).operator.to_dense()
    return float(np.linalg.norm(H_inf - H_k, 2))
