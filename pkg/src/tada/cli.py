"""Command-line entry point.

Subcommands: run-adaptive, run-fixed, run-exact, scaling-study,
magnus-check, sweep. Every run writes a CSV trace plus a JSON metadata
sidecar into the output directory; identical configurations produce
byte-identical CSV bodies. Exit codes: 0 success, 2 configuration error,
3 numerical failure (branch cut or non-convergence), 4 halted on freeze.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import __version__
from .config import MODES, RunConfig, parse_config
from .controller import run_adaptive, run_exact, run_fixed, scaling_study
from .errors import BranchCutError, ConfigError, ConvergenceError, TadaError
from .magnus import build_piecewise_hamiltonian, truncation_error_norm
from .engine import save_state

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_FREEZE_HALT = 4


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tada",
        description="Adaptive Trotterization for time-dependent spin chains.",
    )
    parser.add_argument("--version", action="version", version=f"tada {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", required=True, help="path to a TOML config file")
        p.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="SECTION.KEY=VALUE",
            help="override a config value (repeatable)",
        )
        p.add_argument("--out", help="output directory (overrides run.out)")
        p.add_argument("--checkpoint", help="write the final state dump here")
        p.add_argument("--oracle", choices=("on", "off"), help="toggle the exact co-run")

    for mode in MODES:
        p = sub.add_parser(mode, help=f"dispatch the {mode} mode")
        add_common(p)

    p = sub.add_parser("sweep", help="fan out independent runs over parameter values")
    add_common(p)
    p.add_argument(
        "--vary",
        action="append",
        default=[],
        metavar="SECTION.KEY=V1,V2,...",
        help="parameter values to sweep (repeatable; cross product)",
    )
    return parser


def _resolve_config(args, mode: str | None) -> RunConfig:
    overrides = list(args.overrides)
    if args.out:
        overrides.append(f"run.out={args.out}")
    if args.checkpoint:
        overrides.append(f"run.checkpoint={args.checkpoint}")
    if args.oracle:
        overrides.append(f"run.oracle={'true' if args.oracle == 'on' else 'false'}")
    if mode:
        overrides.append(f"run.mode={mode}")
    return parse_config(args.config, overrides)


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ConfigError(message)


def dispatch(config: RunConfig) -> int:
    """Run the configured mode and write its artifacts."""
    _require(config.mode is not None, "run.mode is required (or use a subcommand)")
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    if config.mode in ("run-adaptive", "run-fixed", "run-exact"):
        if config.mode == "run-adaptive":
            _require(
                (config.n_steps is None) != (config.t_final is None),
                "run-adaptive needs exactly one of run.N_steps or run.t_final",
            )
            log = run_adaptive(
                config.spec,
                config.theta,
                config.tolerances,
                config.policy,
                n_steps=config.n_steps,
                t_final=config.t_final,
                oracle=config.oracle,
            )
        elif config.mode == "run-fixed":
            _require(config.dt is not None, "run-fixed requires run.dt")
            _require(config.n_steps is not None, "run-fixed requires run.N_steps")
            log = run_fixed(
                config.spec,
                config.theta,
                config.dt,
                config.n_steps,
                k=config.policy.k,
                oracle=config.oracle,
            )
        else:
            _require(config.dt is not None, "run-exact requires run.dt")
            _require(config.n_steps is not None, "run-exact requires run.N_steps")
            log = run_exact(
                config.spec, config.theta, config.dt, config.n_steps, k=config.policy.k
            )
        log.metadata["config"] = config.to_dict()
        log.metadata["version"] = __version__
        log.write_csv(out / "trace.csv")
        log.write_metadata(out / "metadata.json")
        if config.checkpoint and log.final_state is not None:
            save_state(config.checkpoint, log.final_state)
        if log.metadata.get("halted_on_freeze"):
            return EXIT_FREEZE_HALT
        return EXIT_OK

    if config.mode == "scaling-study":
        study = scaling_study(
            config.spec,
            config.scaling.t,
            config.scaling.grid(),
            list(config.scaling.k_values),
            theta=config.scaling.theta,
        )
        with open(out / "scaling.csv", "w", newline="") as fh:
            fh.write(study.to_csv())
        meta = {
            "config": config.to_dict(),
            "version": __version__,
            "slopes": study.slopes,
        }
        with open(out / "metadata.json", "w", newline="") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return EXIT_OK

    if config.mode == "magnus-check":
        dump_dt = config.scaling.dump_dt or config.scaling.dt_max
        t = config.scaling.t
        lines = ["dt,k,norm"]
        for dt in config.scaling.grid():
            for k in config.scaling.k_values:
                norm = truncation_error_norm(config.spec, t, dt, k)
                lines.append(f"{dt:.17g},{k},{norm:.17g}")
        with open(out / "truncation_errors.csv", "w", newline="") as fh:
            fh.write("\n".join(lines) + "\n")
        for k in config.scaling.k_values:
            built = build_piecewise_hamiltonian(config.spec, t, dump_dt, k)
            with open(out / f"hk_terms_k{k}.txt", "w", newline="") as fh:
                fh.write(built.operator.to_text() + "\n")
        meta = {"config": config.to_dict(), "version": __version__}
        with open(out / "metadata.json", "w", newline="") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return EXIT_OK

    raise ConfigError(f"unsupported mode {config.mode!r}")


def _sweep(args) -> int:
    if not args.vary:
        raise ConfigError("sweep requires at least one --vary SECTION.KEY=V1,V2,...")
    axes: list[tuple[str, list[str]]] = []
    for item in args.vary:
        if "=" not in item:
            raise ConfigError(f"--vary {item!r} must look like section.key=v1,v2")
        key, values = item.split("=", 1)
        axes.append((key.strip(), [v.strip() for v in values.split(",") if v.strip()]))

    combos: list[list[tuple[str, str]]] = [[]]
    for key, values in axes:
        combos = [combo + [(key, v)] for combo in combos for v in values]

    base_out = Path(args.out or "sweep")
    jobs = []
    for combo in combos:
        tag = ",".join(f"{k.split('.')[-1]}={v}" for k, v in combo)
        run_out = base_out / tag
        overrides = list(args.overrides) + [f"{k}={v}" for k, v in combo]
        overrides.append(f"run.out={run_out}")
        if args.oracle:
            overrides.append(f"run.oracle={'true' if args.oracle == 'on' else 'false'}")
        jobs.append((tag, overrides))

    max_workers = int(os.environ.get("TADA_THREADS", "0")) or min(len(jobs), os.cpu_count() or 1)

    def worker(overrides: list[str]) -> int:
        return dispatch(parse_config(args.config, overrides))

    statuses: dict[str, int] = {}
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        futures = {tag: pool.submit(worker, overrides) for tag, overrides in jobs}
        for tag, future in futures.items():
            statuses[tag] = future.result()
    for tag, status in sorted(statuses.items()):
        print(f"{tag}: exit {status}")
    return max(statuses.values(), default=EXIT_OK)


def _error_record(exc: Exception, exit_code: int, out_dir: str | None) -> None:
    record = {
        "error": type(exc).__name__,
        "message": str(exc),
        "exit_code": exit_code,
    }
    print(json.dumps(record), file=sys.stderr)
    if out_dir:
        try:
            path = Path(out_dir)
            path.mkdir(parents=True, exist_ok=True)
            with open(path / "error.json", "w") as fh:
                json.dump(record, fh, indent=2)
                fh.write("\n")
        except OSError:
            pass


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    out_dir = getattr(args, "out", None)
    try:
        if args.command == "sweep":
            return _sweep(args)
        config = _resolve_config(args, args.command)
        return dispatch(config)
    except ConfigError as exc:
        _error_record(exc, EXIT_CONFIG, out_dir)
        return EXIT_CONFIG
    except (BranchCutError, ConvergenceError) as exc:
        _error_record(exc, EXIT_NUMERICAL, out_dir)
        return EXIT_NUMERICAL
    except TadaError as exc:
        _error_record(exc, 1, out_dir)
        return 1


if __name__ == "__main__":
    sys.exit(main())
