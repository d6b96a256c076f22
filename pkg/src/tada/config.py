"""Run configuration: TOML/JSON parsing, validation, and normalization.

A config file has nested sections (model, drive.g, drive.f, initial,
control, policy, run, scaling). Unknown keys are rejected, every physical
quantity must be finite (tolerances may be ``inf``), and validation errors
name the offending key. The normalized dictionary written into each run's
metadata sidecar parses back into an identical configuration.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .controller import StepPolicy, ToleranceSet
from .errors import ConfigError
from .hamiltonian import DriveSchedule, HamiltonianSpec

MODES = ("run-adaptive", "run-fixed", "run-exact", "scaling-study", "magnus-check")
SCHEMES = ("off", "local", "global", "both")

_SCHEDULE_KEYS = {"kind", "amplitude", "omega", "tau", "offset"}
_SCHEMA = {
    "model": {"L", "J_z", "h_x", "h_z", "boundary"},
    "drive": {"g": _SCHEDULE_KEYS, "f": _SCHEDULE_KEYS},
    "initial": {"theta"},
    "control": {"scheme", "d_E", "d_var", "dg_E", "dg_var", "k", "on_freeze"},
    "policy": {"dt_min", "dt_max", "bisect_eps", "max_trials"},
    "run": {"mode", "N_steps", "t_final", "dt", "oracle", "out", "checkpoint"},
    "scaling": {"t", "theta", "dt_min", "dt_max", "num_dts", "k_values", "dump_dt"},
}


@dataclass(frozen=True)
class ScalingConfig:
    t: float = 0.3
    theta: float = 2.0
    dt_min: float = 0.02
    dt_max: float = 0.2
    num_dts: int = 8
    k_values: tuple[int, ...] = (1, 3, 5)
    dump_dt: Optional[float] = None

    def grid(self) -> list[float]:
        import numpy as np

        return list(np.geomspace(self.dt_min, self.dt_max, self.num_dts))


@dataclass(frozen=True)
class RunConfig:
    spec: HamiltonianSpec
    theta: float
    tolerances: ToleranceSet
    policy: StepPolicy
    scheme: str
    mode: Optional[str]
    n_steps: Optional[int]
    t_final: Optional[float]
    dt: Optional[float]
    oracle: bool
    out_dir: str
    checkpoint: Optional[str]
    scaling: ScalingConfig = field(default_factory=ScalingConfig)

    def to_dict(self) -> dict:
        """Normalized nested mapping; reparsing it reproduces this config."""

        def drive_dict(s: DriveSchedule) -> dict:
            if s.kind == "constant":
                return {"kind": "constant", "amplitude": s.amplitude}
            return {
                "kind": "damped_cosine",
                "omega": s.omega,
                "tau": s.tau,
                "offset": s.offset,
            }

        def tol(x: float):
            return "inf" if math.isinf(x) else x

        out: dict[str, Any] = {
            "model": {
                "L": self.spec.L,
                "J_z": self.spec.J_z,
                "h_x": self.spec.h_x,
                "h_z": self.spec.h_z,
                "boundary": self.spec.boundary,
            },
            "drive": {
                "g": drive_dict(self.spec.g_schedule),
                "f": drive_dict(self.spec.f_schedule),
            },
            "initial": {"theta": self.theta},
            "control": {
                "scheme": self.scheme,
                "k": self.policy.k,
                "on_freeze": self.policy.on_freeze,
            },
            "policy": {
                "dt_min": self.policy.dt_min,
                "dt_max": self.policy.dt_max,
                "bisect_eps": self.policy.bisect_eps,
                "max_trials": self.policy.max_trials,
            },
            "run": {"oracle": self.oracle, "out": self.out_dir},
            "scaling": {
                "t": self.scaling.t,
                "theta": self.scaling.theta,
                "dt_min": self.scaling.dt_min,
                "dt_max": self.scaling.dt_max,
                "num_dts": self.scaling.num_dts,
                "k_values": list(self.scaling.k_values),
            },
        }
        if self.scheme in ("local", "both"):
            out["control"]["d_E"] = tol(self.tolerances.d_E)
            out["control"]["d_var"] = tol(self.tolerances.d_var)
        if self.scheme in ("global", "both"):
            out["control"]["dg_E"] = tol(self.tolerances.dg_E)
            out["control"]["dg_var"] = tol(self.tolerances.dg_var)
        if self.mode is not None:
            out["run"]["mode"] = self.mode
        if self.n_steps is not None:
            out["run"]["N_steps"] = self.n_steps
        if self.t_final is not None:
            out["run"]["t_final"] = self.t_final
        if self.dt is not None:
            out["run"]["dt"] = self.dt
        if self.checkpoint is not None:
            out["run"]["checkpoint"] = self.checkpoint
        if self.scaling.dump_dt is not None:
            out["scaling"]["dump_dt"] = self.scaling.dump_dt
        return out


def _reject_unknown(data: dict, schema, path: str = "") -> None:
    if not isinstance(schema, dict):
        allowed = schema
        for key in data:
            if key not in allowed:
                raise ConfigError(f"unknown key {path}{key}")
        return
    for key, value in data.items():
        if key not in schema:
            raise ConfigError(f"unknown key {path}{key}")
        sub = schema[key]
        if isinstance(sub, (dict, set)):
            if not isinstance(value, dict):
                raise ConfigError(f"{path}{key} must be a section")
            _reject_unknown(value, sub, f"{path}{key}.")


def _number(data: dict, section: str, key: str, default=None, *, required=False, allow_inf=False):
    if key not in data:
        if required:
            raise ConfigError(f"missing required key {section}.{key}")
        return default
    value = data[key]
    if isinstance(value, str) and allow_inf and value.strip().lower() in ("inf", "+inf", "infinity"):
        return math.inf
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{section}.{key} must be a number, got {value!r}")
    value = float(value)
    if math.isnan(value):
        raise ConfigError(f"{section}.{key} must not be NaN")
    if math.isinf(value) and not allow_inf:
        raise ConfigError(f"{section}.{key} must be finite")
    return value


def _integer(data: dict, section: str, key: str, default=None, *, required=False):
    if key not in data:
        if required:
            raise ConfigError(f"missing required key {section}.{key}")
        return default
    value = data[key]
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{section}.{key} must be an integer, got {value!r}")
    return value


def _schedule(data: dict, name: str) -> DriveSchedule:
    kind = data.get("kind", "constant")
    if kind == "constant":
        return DriveSchedule.constant(
            _number(data, f"drive.{name}", "amplitude", 1.0)
        )
    if kind == "damped_cosine":
        omega = _number(data, f"drive.{name}", "omega", required=True)
        tau = _number(data, f"drive.{name}", "tau", required=True)
        offset = _number(data, f"drive.{name}", "offset", 0.0)
        if tau <= 0:
            raise ConfigError(f"drive.{name}.tau must be positive")
        return DriveSchedule.damped_cosine(omega, tau, offset)
    raise ConfigError(f"drive.{name}.kind must be 'constant' or 'damped_cosine'")


def _tolerances(control: dict, scheme: str) -> ToleranceSet:
    local = scheme in ("local", "both")
    glob = scheme in ("global", "both")
    for key, active in (
        ("d_E", local),
        ("d_var", local),
        ("dg_E", glob),
        ("dg_var", glob),
    ):
        if key in control and not active:
            raise ConfigError(
                f"control.{key} is set but scheme={scheme!r} does not use it"
            )
    def pick(key: str, active: bool) -> float:
        if not active:
            return math.inf
        return _number(control, "control", key, required=True, allow_inf=True)

    try:
        return ToleranceSet(
            d_E=pick("d_E", local),
            d_var=pick("d_var", local),
            dg_E=pick("dg_E", glob),
            dg_var=pick("dg_var", glob),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def build_config(data: dict) -> RunConfig:
    """Validate a nested mapping and assemble the run configuration."""
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    _reject_unknown(data, _SCHEMA)

    model = data.get("model", {})
    L = _integer(model, "model", "L", required=True)
    if L is None or L < 2:
        raise ConfigError("model.L must be an integer >= 2")
    boundary = model.get("boundary", "periodic")
    if boundary != "periodic":
        raise ConfigError("model.boundary only supports 'periodic'")

    drive = data.get("drive", {})
    g_sched = _schedule(drive.get("g", {}), "g")
    f_sched = _schedule(drive.get("f", {}), "f")

    try:
        spec = HamiltonianSpec(
            L=L,
            J_z=_number(model, "model", "J_z", 1.0),
            h_x=_number(model, "model", "h_x", 1.0),
            h_z=_number(model, "model", "h_z", 0.0),
            g_schedule=g_sched,
            f_schedule=f_sched,
            boundary=boundary,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    theta = _number(data.get("initial", {}), "initial", "theta", 0.0)

    control = data.get("control", {})
    scheme = control.get("scheme", "off")
    if scheme not in SCHEMES:
        raise ConfigError(f"control.scheme must be one of {SCHEMES}, got {scheme!r}")
    tolerances = _tolerances(control, scheme)
    k = _integer(control, "control", "k", 5)
    if k not in (1, 3, 5):
        raise ConfigError("control.k must be 1, 3, or 5")
    on_freeze = control.get("on_freeze", "continue")

    policy_data = data.get("policy", {})
    try:
        policy = StepPolicy(
            dt_min=_number(policy_data, "policy", "dt_min", 0.1),
            dt_max=_number(policy_data, "policy", "dt_max", 0.7),
            bisect_eps=_number(policy_data, "policy", "bisect_eps", 0.01),
            max_trials=_integer(policy_data, "policy", "max_trials", 20),
            k=k,
            on_freeze=on_freeze,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    run = data.get("run", {})
    mode = run.get("mode")
    if mode is not None and mode not in MODES:
        raise ConfigError(f"run.mode must be one of {MODES}, got {mode!r}")
    n_steps = _integer(run, "run", "N_steps")
    if n_steps is not None and n_steps < 1:
        raise ConfigError("run.N_steps must be >= 1")
    t_final = _number(run, "run", "t_final")
    if t_final is not None and t_final <= 0:
        raise ConfigError("run.t_final must be positive")
    dt = _number(run, "run", "dt")
    if dt is not None and dt <= 0:
        raise ConfigError("run.dt must be positive")
    oracle = run.get("oracle", False)
    if not isinstance(oracle, bool):
        raise ConfigError("run.oracle must be true or false")

    scaling_data = data.get("scaling", {})
    k_values = scaling_data.get("k_values", [1, 3, 5])
    if not isinstance(k_values, (list, tuple)) or not all(
        isinstance(v, int) and v in (1, 3, 5) for v in k_values
    ):
        raise ConfigError("scaling.k_values must be a list drawn from {1, 3, 5}")
    scaling = ScalingConfig(
        t=_number(scaling_data, "scaling", "t", 0.3),
        theta=_number(scaling_data, "scaling", "theta", 2.0),
        dt_min=_number(scaling_data, "scaling", "dt_min", 0.02),
        dt_max=_number(scaling_data, "scaling", "dt_max", 0.2),
        num_dts=_integer(scaling_data, "scaling", "num_dts", 8),
        k_values=tuple(k_values),
        dump_dt=_number(scaling_data, "scaling", "dump_dt"),
    )
    if scaling.num_dts < 2:
        raise ConfigError("scaling.num_dts must be >= 2")
    if not 0 < scaling.dt_min < scaling.dt_max:
        raise ConfigError("need 0 < scaling.dt_min < scaling.dt_max")

    return RunConfig(
        spec=spec,
        theta=theta,
        tolerances=tolerances,
        policy=policy,
        scheme=scheme,
        mode=mode,
        n_steps=n_steps,
        t_final=t_final,
        dt=dt,
        oracle=oracle,
        out_dir=run.get("out", "out"),
        checkpoint=run.get("checkpoint"),
        scaling=scaling,
    )


def _parse_literal(text: str):
    lowered = text.strip().lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    if "," in text:
        return [_parse_literal(part) for part in text.split(",")]
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text


def apply_overrides(data: dict, overrides: Sequence[str]) -> dict:
    """Apply repeatable ``--set section.key=value`` assignments."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        dotted, raw_value = item.split("=", 1)
        keys = dotted.strip().split(".")
        if not all(keys):
            raise ConfigError(f"override {item!r} has an empty key component")
        node = data
        for key in keys[:-1]:
            node = node.setdefault(key, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {dotted!r} descends into a non-section")
        node[keys[-1]] = _parse_literal(raw_value)
    return data


def parse_config(path, overrides: Sequence[str] = ()) -> RunConfig:
    """Load a TOML config (or a metadata JSON sidecar) and validate it."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    if p.suffix == ".json":
        with open(p) as fh:
            data = json.load(fh)
        if "config" in data and isinstance(data["config"], dict):
            data = data["config"]
    else:
        try:
            with open(p, "rb") as fh:
                data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"invalid TOML in {p}: {exc}") from exc
    data = apply_overrides(data, overrides)
    return build_config(data)
