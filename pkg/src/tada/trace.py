"""Per-step audit records and their CSV/JSON serialization.

One CSV row per accepted step, columns in this exact order:

    m, t, dt, trials, frozen, E_i, E_f, var_i, var_f,
    cum_dE, cum_dVar, Mx, Mz, exact_Mx, exact_Mz

Floats are written with 17 significant digits so doubles round-trip
losslessly; the two exact columns are empty when no oracle co-ran. A JSON
sidecar holds the full run configuration and controller settings.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from typing import Optional

CSV_COLUMNS = (
    "m",
    "t",
    "dt",
    "trials",
    "frozen",
    "E_i",
    "E_f",
    "var_i",
    "var_f",
    "cum_dE",
    "cum_dVar",
    "Mx",
    "Mz",
    "exact_Mx",
    "exact_Mz",
)


@dataclass(frozen=True)
class StepRecord:
    """Everything measured while accepting one Trotter step."""

    m: int
    t: float
    dt: float
    trials: int
    frozen: bool
    E_i: float
    E_f: float
    var_i: float
    var_f: float
    cum_dE: float
    cum_dVar: float
    Mx: float
    Mz: float
    exact_Mx: Optional[float] = None
    exact_Mz: Optional[float] = None


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, int):
        return str(value)
    return f"{value:.17g}"


@dataclass
class TraceLog:
    """Ordered step records plus run-level metadata.

    ``final_state`` carries the last state vector for checkpointing; it is
    never serialized into the CSV.
    """

    records: list[StepRecord] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)
    final_state: Optional[object] = None

    def append(self, record: StepRecord) -> None:
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def final_time(self) -> float:
        if not self.records:
            return 0.0
        last = self.records[-1]
        return last.t + last.dt

    def column(self, name: str) -> list:
        return [getattr(r, name) for r in self.records]

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(CSV_COLUMNS) + "\n")
        for r in self.records:
            buf.write(",".join(_fmt(getattr(r, col)) for col in CSV_COLUMNS) + "\n")
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())

    def write_metadata(self, path) -> None:
        with open(path, "w", newline="") as fh:
            json.dump(self.metadata, fh, indent=2, sort_keys=True)
            fh.write("\n")


def read_trace_csv(path) -> TraceLog:
    """Parse a trace CSV back into records (inverse of ``write_csv``)."""
    with open(path, "r", newline="") as fh:
        header = fh.readline().strip().split(",")
        if tuple(header) != CSV_COLUMNS:
            raise ValueError(f"unexpected trace columns: {header}")
        log = TraceLog()
        for line in fh:
            if not line.strip():
                continue
            cells = line.rstrip("\n").split(",")
            log.append(
                StepRecord(
                    m=int(cells[0]),
                    t=float(cells[1]),
                    dt=float(cells[2]),
                    trials=int(cells[3]),
                    frozen=cells[4] == "1",
                    E_i=float(cells[5]),
                    E_f=float(cells[6]),
                    var_i=float(cells[7]),
                    var_f=float(cells[8]),
                    cum_dE=float(cells[9]),
                    cum_dVar=float(cells[10]),
                    Mx=float(cells[11]),
                    Mz=float(cells[12]),
                    exact_Mx=float(cells[13]) if cells[13] else None,
                    exact_Mz=float(cells[14]) if cells[14] else None,
                )
            )
    return log
