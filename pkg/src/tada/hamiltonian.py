"""Time-dependent Ising Hamiltonian H(t) = g(t) G + f(t) F and its moments.

G is the transverse-field part, F the diagonal Ising part. The window
operators fed to the Magnus series are weighted averages of H over
[t, t + dt] against shifted Legendre polynomials, evaluated with a fixed
Gauss-Legendre rule.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from .pauli import PauliOperator

QUADRATURE_NODES = 32
MAX_MOMENT_ORDER = 3  # A_1..A_3 cover truncation orders up to 5


@dataclass(frozen=True)
class DriveSchedule:
    """One of the supported drive time profiles.

    ``constant`` evaluates to ``amplitude`` for all t; ``damped_cosine``
    evaluates to ``cos(omega*t) * exp(-t/tau) + offset``.
    """

    kind: str
    amplitude: float = 0.0
    omega: float = 0.0
    tau: float = 1.0
    offset: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in ("constant", "damped_cosine"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.kind == "damped_cosine" and not self.tau > 0:
            raise ValueError("damped_cosine requires tau > 0")

    @classmethod
    def constant(cls, value: float) -> "DriveSchedule":
        return cls(kind="constant", amplitude=float(value))

    @classmethod
    def damped_cosine(cls, omega: float, tau: float, offset: float = 0.0) -> "DriveSchedule":
        return cls(kind="damped_cosine", omega=float(omega), tau=float(tau), offset=float(offset))

    def __call__(self, t):
        if self.kind == "constant":
            return self.amplitude * np.ones_like(np.asarray(t, dtype=float))
        return np.cos(self.omega * np.asarray(t, dtype=float)) * np.exp(
            -np.asarray(t, dtype=float) / self.tau
        ) + self.offset


Drive = Union[DriveSchedule, Callable[[np.ndarray], np.ndarray]]


@dataclass(frozen=True)
class HamiltonianSpec:
    """Ring of L spins with Ising coupling and transverse/longitudinal fields.

    ``H(t) = g(t) * h_x * sum_j X_j + f(t) * (J_z * sum_j Z_j Z_{j+1}
    + h_z * sum_j Z_j)`` with periodic boundaries.
    """

    L: int
    J_z: float
    h_x: float
    h_z: float
    g_schedule: DriveSchedule
    f_schedule: DriveSchedule
    boundary: str = "periodic"

    def __post_init__(self) -> None:
        if self.L < 2:
            raise ValueError("need at least 2 sites")
        if self.boundary != "periodic":
            raise ValueError("only periodic boundaries are supported")

    def bonds(self) -> list[tuple[int, int]]:
        # At L=2 the wrap-around bond coincides with (0, 1); keeping both
        # would double-count the coupling on the degenerate ring.
        if self.L == 2:
            return [(0, 1)]
        return [(j, (j + 1) % self.L) for j in range(self.L)]


@functools.lru_cache(maxsize=32)
def build_static_operators(spec: HamiltonianSpec) -> tuple[PauliOperator, PauliOperator]:
    """Build the two static pieces (G, F); both hermitian."""
    L = spec.L
    g_terms = {}
    for j in range(L):
        g_terms[(1 << j, 0)] = spec.h_x
    G = PauliOperator(L, g_terms)
    f_terms: dict[tuple[int, int], complex] = {}
    for j, k in spec.bonds():
        key = (0, (1 << j) | (1 << k))
        f_terms[key] = f_terms.get(key, 0.0) + spec.J_z
    for j in range(L):
        key = (0, 1 << j)
        f_terms[key] = f_terms.get(key, 0.0) + spec.h_z
    F = PauliOperator(L, f_terms)
    return G, F


class LegendreBasis:
    """Shifted Legendre polynomials on [0, 1], lowest orders first.

    Normalization: (2n+1) * integral_0^1 P_m P_n dx = delta_mn, i.e. the
    plain shifted polynomials P_0 = 1, P_1 = 2x - 1, P_2 = 6x^2 - 6x + 1.
    """

    def __init__(self, order: int = MAX_MOMENT_ORDER) -> None:
        if order < 1:
            raise ValueError("order must be >= 1")
        self.order = order
        coeffs = [np.array([1.0]), np.array([-1.0, 2.0])]
        # Bonnet recurrence mapped to [0, 1]:
        # (n+1) P_{n+1}(x) = (2n+1)(2x-1) P_n(x) - n P_{n-1}(x)
        for n in range(1, order):
            two_x_minus_1 = np.array([-1.0, 2.0])
            lifted = np.polynomial.polynomial.polymul(two_x_minus_1, coeffs[n])
            prev = np.zeros_like(lifted)
            prev[: len(coeffs[n - 1])] = coeffs[n - 1]
            coeffs.append(((2 * n + 1) * lifted - n * prev) / (n + 1))
        self.coefficients = coeffs[:order]

    def evaluate(self, index: int, x: np.ndarray) -> np.ndarray:
        if not 0 <= index < self.order:
            raise ValueError(f"polynomial index {index} outside basis of order {self.order}")
        return np.polynomial.polynomial.polyval(x, self.coefficients[index])


@functools.lru_cache(maxsize=8)
def _unit_interval_rule(num_nodes: int) -> tuple[np.ndarray, np.ndarray]:
    nodes, weights = np.polynomial.legendre.leggauss(num_nodes)
    return (nodes + 1.0) / 2.0, weights / 2.0


@functools.lru_cache(maxsize=8)
def _default_basis(order: int) -> LegendreBasis:
    return LegendreBasis(order)


def legendre_moment(
    sched: Drive,
    t: float,
    dt: float,
    n: int,
    *,
    basis: LegendreBasis | None = None,
    num_nodes: int = QUADRATURE_NODES,
) -> float:
    """integral_0^1 sched(t + x*dt) P_{n-1}(x) dx by Gauss-Legendre quadrature.

    ``sched`` may be a DriveSchedule or any callable accepting an array of
    times. Exact for polynomial integrands up to degree 2*num_nodes - 1.
    """
    if n < 1:
        raise ValueError("moment index n must be >= 1")
    if dt <= 0:
        raise ValueError("dt must be positive")
    basis = basis if basis is not None else _default_basis(MAX_MOMENT_ORDER)
    if n > basis.order:
        raise ValueError(
            f"moment index {n} exceeds supported basis order {basis.order}"
        )
    x, w = _unit_interval_rule(num_nodes)
    values = np.asarray(sched(t + x * dt), dtype=float)
    return float(np.sum(w * values * basis.evaluate(n - 1, x)))


def build_A(spec: HamiltonianSpec, t: float, dt: float, n: int) -> PauliOperator:
    """Window operator -i (2n-1) dt * integral H(t + x dt) P_{n-1}(x) dx.

    Anti-hermitian by construction and O(dt^n) for smooth drives, since the
    n-th Legendre moment of a smooth schedule over a window of width dt is
    itself O(dt^{n-1}).
    """
    if not 1 <= n <= MAX_MOMENT_ORDER:
        raise ValueError(f"A_n supported for 1 <= n <= {MAX_MOMENT_ORDER}, got {n}")
    G, F = build_static_operators(spec)
    m_g = legendre_moment(spec.g_schedule, t, dt, n)
    m_f = legendre_moment(spec.f_schedule, t, dt, n)
    scale = -1j * (2 * n - 1) * dt
    return scale * (m_g * G + m_f * F)
