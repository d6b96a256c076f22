"""Adaptive step-size control through piecewise conserved quantities.

Each candidate window [t, t + dt] gets its own static Hamiltonian H_[k];
the controller measures its per-site expectation value and variance density
before and after one Trotter step and accepts the largest dt whose changes
stay inside the configured tolerances. Feasibility is searched by bisection
from dt_max down; if even dt_min violates the tolerances the step is
accepted anyway and flagged frozen, with the accumulators still updated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .engine import (
    StateVector,
    apply_trotter_step,
    exact_evolve,
    magnetization,
    measure_moments,
    prepare_initial,
)
from .errors import BranchCutError
from .hamiltonian import HamiltonianSpec
from .magnus import PiecewiseCache, build_piecewise_hamiltonian, dense_h_infinity
from .trace import StepRecord, TraceLog

TROTTER_ORDER = 3  # midpoint rule


@dataclass(frozen=True)
class ToleranceSet:
    """Per-site thresholds; any of them may be inf to disable that check."""

    d_E: float = math.inf
    d_var: float = math.inf
    dg_E: float = math.inf
    dg_var: float = math.inf

    def __post_init__(self) -> None:
        for name in ("d_E", "d_var", "dg_E", "dg_var"):
            if not getattr(self, name) > 0:
                raise ValueError(f"tolerance {name} must be positive")


@dataclass(frozen=True)
class StepPolicy:
    """Step-size search window and bisection budget."""

    dt_min: float = 0.1
    dt_max: float = 0.7
    bisect_eps: float = 0.01
    max_trials: int = 20
    k: int = 5
    trotter_order: int = TROTTER_ORDER
    on_freeze: str = "continue"

    def __post_init__(self) -> None:
        if not 0 < self.dt_min <= self.dt_max:
            raise ValueError("need 0 < dt_min <= dt_max")
        if not self.bisect_eps > 0:
            raise ValueError("bisect_eps must be positive")
        if self.max_trials < 1:
            raise ValueError("max_trials must be >= 1")
        if self.trotter_order != TROTTER_ORDER:
            raise ValueError("only the midpoint rule (order 3) is implemented")
        if self.on_freeze not in ("continue", "halt"):
            raise ValueError("on_freeze must be 'continue' or 'halt'")

    def trial_bound(self) -> int:
        """Worst-case candidate evaluations per accepted step."""
        span = (self.dt_max - self.dt_min) / self.bisect_eps
        return int(math.ceil(math.log2(max(span, 1.0)))) + 1


@dataclass
class GlobalAccumulator:
    """Running sums of per-step changes, updated only on accepted steps."""

    sum_dE: float = 0.0
    sum_dVar: float = 0.0

    def add(self, dE: float, dVar: float) -> None:
        self.sum_dE += dE
        self.sum_dVar += dVar


class CandidateEval(NamedTuple):
    E_i: float
    var_i: float
    E_f: float
    var_f: float
    state: StateVector


def evaluate_candidate(
    state: StateVector,
    spec: HamiltonianSpec,
    t: float,
    dt: float,
    k: int,
    *,
    cache: PiecewiseCache | None = None,
) -> CandidateEval:
    """Measure H_[k](t, dt) moments around one trial step.

    Both measurements use the same window Hamiltonian; the input state is
    never modified, so rejecting the candidate is just dropping it.
    """
    built = cache.build(t, dt, k) if cache else build_piecewise_hamiltonian(spec, t, dt, k)
    op = built.operator
    L = spec.L
    first, second = measure_moments(op, state)
    E_i = first / L
    var_i = second / L - L * E_i**2
    candidate = apply_trotter_step(state, spec, t, dt)
    first, second = measure_moments(op, candidate)
    E_f = first / L
    var_f = second / L - L * E_f**2
    return CandidateEval(E_i, var_i, E_f, var_f, candidate)


def constraints_ok(
    E_i: float,
    var_i: float,
    E_f: float,
    var_f: float,
    acc: GlobalAccumulator,
    tol: ToleranceSet,
) -> bool:
    """Check the per-step changes against local and accumulated bounds."""
    dE = E_f - E_i
    dVar = var_f - var_i
    return (
        abs(dE) < tol.d_E
        and abs(dVar) < tol.d_var
        and abs(acc.sum_dE + dE) < tol.dg_E
        and abs(acc.sum_dVar + dVar) < tol.dg_var
    )


def select_step(
    state: StateVector,
    spec: HamiltonianSpec,
    t: float,
    acc: GlobalAccumulator,
    tol: ToleranceSet,
    policy: StepPolicy,
    *,
    cache: PiecewiseCache | None = None,
) -> tuple[StepRecord, StateVector]:
    """Pick the largest feasible dt in [dt_min, dt_max] and advance one step.

    Trial 1 is dt_max. On failure, bisect: keep the largest known-pass and
    smallest known-fail dt and probe midpoints; once the unresolved bracket
    sits within twice the search resolution of the floor without any pass,
    probe dt_min itself and stop, which keeps the trial count within
    ceil(log2(range / eps)) + 1. A floor that still fails is accepted
    frozen, and the accumulators are updated regardless.
    """
    trials = 0

    def trial(dt: float) -> tuple[CandidateEval, bool]:
        nonlocal trials
        trials += 1
        ev = evaluate_candidate(state, spec, t, dt, policy.k, cache=cache)
        return ev, constraints_ok(ev.E_i, ev.var_i, ev.E_f, ev.var_f, acc, tol)

    frozen = False
    ev, ok = trial(policy.dt_max)
    if ok:
        accepted_dt, accepted = policy.dt_max, ev
    else:
        hi = policy.dt_max
        lo: float | None = None
        best: tuple[float, CandidateEval] | None = None
        floor_eval: tuple[CandidateEval, bool] | None = None
        while trials < policy.max_trials:
            lower = lo if lo is not None else policy.dt_min
            if hi - lower <= policy.bisect_eps:
                break
            if lo is None and hi - policy.dt_min <= 2 * policy.bisect_eps:
                floor_eval = trial(policy.dt_min)
                if floor_eval[1]:
                    best = (policy.dt_min, floor_eval[0])
                break
            probe = 0.5 * (lower + hi)
            ev, ok = trial(probe)
            if ok:
                lo = probe
                best = (probe, ev)
            else:
                hi = probe
        if best is not None:
            accepted_dt, accepted = best
        else:
            if floor_eval is None:
                floor_eval = trial(policy.dt_min)
            accepted_dt, accepted = policy.dt_min, floor_eval[0]
            frozen = not floor_eval[1]

    dE = accepted.E_f - accepted.E_i
    dVar = accepted.var_f - accepted.var_i
    acc.add(dE, dVar)
    next_state = accepted.state
    record = StepRecord(
        m=0,  # filled by the run loop
        t=t,
        dt=accepted_dt,
        trials=trials,
        frozen=frozen,
        E_i=accepted.E_i,
        E_f=accepted.E_f,
        var_i=accepted.var_i,
        var_f=accepted.var_f,
        cum_dE=acc.sum_dE,
        cum_dVar=acc.sum_dVar,
        Mx=magnetization(next_state, "x"),
        Mz=magnetization(next_state, "z"),
    )
    return record, next_state


def _run_loop(
    spec: HamiltonianSpec,
    theta: float,
    *,
    n_steps: Optional[int],
    t_final: Optional[float],
    oracle: bool,
    stepper,
    metadata: dict,
) -> TraceLog:
    """Common driving loop: advance, co-evolve the oracle, record."""
    if (n_steps is None) == (t_final is None):
        raise ValueError("specify exactly one of n_steps or t_final")
    state = prepare_initial(spec.L, theta)
    phi = state.copy() if oracle else None
    log = TraceLog(metadata=metadata)
    t = 0.0
    m = 0
    max_norm_error = state.norm_error()
    halted = False
    while True:
        if n_steps is not None and m >= n_steps:
            break
        if t_final is not None and t >= t_final - 1e-12:
            break
        record, state = stepper(state, t)
        m += 1
        t_next = t + record.dt
        if oracle:
            phi = exact_evolve(phi, spec, t, t_next)
            record = replace(
                record,
                m=m,
                exact_Mx=magnetization(phi, "x"),
                exact_Mz=magnetization(phi, "z"),
            )
        else:
            record = replace(record, m=m)
        log.append(record)
        max_norm_error = max(max_norm_error, state.norm_error())
        t = t_next
        if record.frozen and metadata.get("on_freeze") == "halt":
            halted = True
            break
    log.metadata.update(
        {
            "num_steps": len(log),
            "final_time": log.final_time,
            "max_norm_error": max_norm_error,
            "halted_on_freeze": halted,
            "mean_trials": (
                float(np.mean(log.column("trials"))) if log.records else 0.0
            ),
        }
    )
    log.final_state = state
    return log


def run_adaptive(
    spec: HamiltonianSpec,
    theta: float,
    tol: ToleranceSet,
    policy: StepPolicy,
    *,
    n_steps: Optional[int] = None,
    t_final: Optional[float] = None,
    oracle: bool = False,
) -> TraceLog:
    """Full adaptive run from the rotated product state at t = 0."""
    acc = GlobalAccumulator()
    cache = PiecewiseCache(spec)
    metadata = {
        "mode": "run-adaptive",
        "on_freeze": policy.on_freeze,
        "oracle": oracle,
        "oracle_method": {"name": "refined-midpoint", "tol": 1e-10},
    }

    def stepper(state: StateVector, t: float):
        return select_step(state, spec, t, acc, tol, policy, cache=cache)

    return _run_loop(
        spec,
        theta,
        n_steps=n_steps,
        t_final=t_final,
        oracle=oracle,
        stepper=stepper,
        metadata=metadata,
    )


def run_fixed(
    spec: HamiltonianSpec,
    theta: float,
    dt: float,
    n_steps: int,
    *,
    k: int = 5,
    oracle: bool = False,
) -> TraceLog:
    """Fixed-step baseline; same trace schema, no constraint checks."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    acc = GlobalAccumulator()
    cache = PiecewiseCache(spec)
    metadata = {
        "mode": "run-fixed",
        "dt": dt,
        "oracle": oracle,
        "oracle_method": {"name": "refined-midpoint", "tol": 1e-10},
    }

    def stepper(state: StateVector, t: float):
        ev = evaluate_candidate(state, spec, t, dt, k, cache=cache)
        acc.add(ev.E_f - ev.E_i, ev.var_f - ev.var_i)
        record = StepRecord(
            m=0,
            t=t,
            dt=dt,
            trials=1,
            frozen=False,
            E_i=ev.E_i,
            E_f=ev.E_f,
            var_i=ev.var_i,
            var_f=ev.var_f,
            cum_dE=acc.sum_dE,
            cum_dVar=acc.sum_dVar,
            Mx=magnetization(ev.state, "x"),
            Mz=magnetization(ev.state, "z"),
        )
        return record, ev.state

    return _run_loop(
        spec,
        theta,
        n_steps=n_steps,
        t_final=None,
        oracle=oracle,
        stepper=stepper,
        metadata=metadata,
    )


def run_exact(
    spec: HamiltonianSpec,
    theta: float,
    dt: float,
    n_steps: int,
    *,
    k: int = 5,
) -> TraceLog:
    """Oracle-only trace on a fixed grid; piecewise moments of the exact state."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    cache = PiecewiseCache(spec)
    acc = GlobalAccumulator()
    metadata = {
        "mode": "run-exact",
        "dt": dt,
        "oracle": True,
        "oracle_method": {"name": "refined-midpoint", "tol": 1e-10},
    }
    state = prepare_initial(spec.L, theta)
    log = TraceLog(metadata=metadata)
    t = 0.0
    L = spec.L
    for m in range(1, n_steps + 1):
        op = cache.build(t, dt, k).operator
        first, second = measure_moments(op, state)
        E_i = first / L
        var_i = second / L - L * E_i**2
        state = exact_evolve(state, spec, t, t + dt)
        first, second = measure_moments(op, state)
        E_f = first / L
        var_f = second / L - L * E_f**2
        acc.add(E_f - E_i, var_f - var_i)
        Mx = magnetization(state, "x")
        Mz = magnetization(state, "z")
        log.append(
            StepRecord(
                m=m,
                t=t,
                dt=dt,
                trials=1,
                frozen=False,
                E_i=E_i,
                E_f=E_f,
                var_i=var_i,
                var_f=var_f,
                cum_dE=acc.sum_dE,
                cum_dVar=acc.sum_dVar,
                Mx=Mx,
                Mz=Mz,
                exact_Mx=Mx,
                exact_Mz=Mz,
            )
        )
        t += dt
    log.metadata.update(
        {
            "num_steps": len(log),
            "final_time": log.final_time,
            "max_norm_error": state.norm_error(),
            "halted_on_freeze": False,
            "mean_trials": 1.0,
        }
    )
    log.final_state = state
    return log


def fit_loglog_slope(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Least-squares slope of log(y) against log(x), positive values only."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    keep = (xs > 0) & (ys > 0)
    if keep.sum() < 2:
        return math.nan
    return float(np.polyfit(np.log(xs[keep]), np.log(ys[keep]), 1)[0])


@dataclass(frozen=True)
class ScalingRow:
    dt: float
    k: int
    abs_dE: float
    abs_dVar: float
    abs_delta: float


@dataclass
class ScalingStudy:
    """Per-window error scalings against dt, with fitted log-log slopes."""

    rows: list[ScalingRow]
    slopes: dict[str, float]

    def to_csv(self) -> str:
        lines = ["dt,k,abs_dE,abs_dVar,abs_delta"]
        for r in self.rows:
            lines.append(
                f"{r.dt:.17g},{r.k},{r.abs_dE:.17g},{r.abs_dVar:.17g},{r.abs_delta:.17g}"
            )
        return "\n".join(lines) + "\n"


def scaling_study(
    spec: HamiltonianSpec,
    t: float,
    dt_grid: Sequence[float],
    k_list: Sequence[int],
    *,
    theta: float = 2.0,
) -> ScalingStudy:
    """Measure per-step changes and the truncation gap Delta over a dt grid.

    For each window, |E_f - E_i| and |var_f - var_i| probe the Trotter-order
    scaling, while Delta = (E_f - E_i under H_[inf]) - (E_f - E_i under
    H_[k]) isolates the truncation contribution. Windows whose dense log
    hits the branch cut are dropped from the grid.
    """
    state = prepare_initial(spec.L, theta)
    if t > 0:
        state = exact_evolve(state, spec, 0.0, t)
        state.amplitudes /= np.linalg.norm(state.amplitudes)
    L = spec.L
    rows: list[ScalingRow] = []
    for dt in dt_grid:
        try:
            H_inf = dense_h_infinity(spec, t, dt)
        except BranchCutError:
            continue
        stepped = apply_trotter_step(state, spec, t, dt)
        E_i_inf = float(
            np.vdot(state.amplitudes, H_inf @ state.amplitudes).real
        ) / L
        E_f_inf = float(
            np.vdot(stepped.amplitudes, H_inf @ stepped.amplitudes).real
        ) / L
        for k in k_list:
            ev = evaluate_candidate(state, spec, t, dt, k)
            dE = ev.E_f - ev.E_i
            dVar = ev.var_f - ev.var_i
            delta = (E_f_inf - E_i_inf) - dE
            rows.append(ScalingRow(dt, k, abs(dE), abs(dVar), abs(delta)))
    slopes: dict[str, float] = {}
    for k in k_list:
        dts = [r.dt for r in rows if r.k == k]
        slopes[f"dE_slope_k{k}"] = fit_loglog_slope(dts, [r.abs_dE for r in rows if r.k == k])
        slopes[f"dVar_slope_k{k}"] = fit_loglog_slope(dts, [r.abs_dVar for r in rows if r.k == k])
        slopes[f"delta_slope_k{k}"] = fit_loglog_slope(dts, [r.abs_delta for r in rows if r.k == k])
    return ScalingStudy(rows, slopes)
