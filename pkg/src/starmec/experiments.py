"""Monte-Carlo sweep harness with paired realizations and CSV emission.

Every scheme at a given (value, realization) point runs on the identical
channel draw, and the child seed is a pure function of
(master_seed, value, realization), so a sweep is reproducible bit for bit.
The CSV deliberately omits wall-clock timing (kept in the in-process
reports) so that identical (spec, master_seed) runs produce byte-identical
files.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterable

import numpy as np

from .bcd import Baseline, optimize, run_baseline
from .channel import ChannelSet, sample_channels
from .model import Protocol, SolveReport, SystemConfig

CSV_SCHEMA_LINE = "# starmec-sweep-csv schema=1"
CSV_COLUMNS = [
    "scheme", "variable", "value", "realization", "seed", "status",
    "objective_bps", "iterations", "rank_residual", "binary_residual",
    "offload_bps", "local_bps", "message",
]

SCHEMES = ["es", "ms", "conventional_ris", "zero_forcing", "equal_energy", "equal_time"]
_VARIABLES = ("elements", "antennas")


@dataclass
class SweepSpec:
    variable: str
    values: list[int]
    realizations: int
    schemes: list[str]
    base_config: SystemConfig
    master_seed: int

    def __post_init__(self):
        if self.variable not in _VARIABLES:
            raise ValueError(f"variable must be one of {_VARIABLES}")
        self.values = [int(v) for v in self.values]
        if any(b <= a for a, b in zip(self.values, self.values[1:])) or not self.values:
            raise ValueError("values must be non-empty and strictly increasing")
        if self.realizations < 1:
            raise ValueError("realizations must be >= 1")
        unknown = [s for s in self.schemes if s not in SCHEMES]
        if unknown:
            raise ValueError(f"unknown schemes {unknown}; expected subset of {SCHEMES}")
        if isinstance(self.base_config, dict):
            self.base_config = SystemConfig.from_json_dict(self.base_config)
        self.master_seed = int(self.master_seed)

    def to_json(self, path=None) -> str:
        doc = {
            "variable": self.variable,
            "values": self.values,
            "realizations": self.realizations,
            "schemes": self.schemes,
            "base_config": self.base_config.to_json_dict(),
            "master_seed": self.master_seed,
        }
        text = json.dumps(doc, indent=2)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text

    @classmethod
    def from_json(cls, source) -> "SweepSpec":
        if hasattr(source, "read"):
            doc = json.load(source)
        else:
            text = str(source)
            if text.lstrip().startswith("{"):
                doc = json.loads(text)
            else:
                with open(text) as fh:
                    doc = json.load(fh)
        return cls(**doc)


def child_seed(master_seed: int, value: int, realization: int) -> int:
    """Pure derivation of one realization's channel seed."""
    ss = np.random.SeedSequence(entropy=int(master_seed),
                                spawn_key=(int(value), int(realization)))
    lo, hi = ss.generate_state(2, dtype=np.uint32)
    return (int(hi) << 32) | int(lo)


def config_for_value(base: SystemConfig, variable: str, value: int) -> SystemConfig:
    if variable == "elements":
        return replace(base, n_elements=int(value))
    return replace(base, n_antennas=int(value))


def run_scheme(scheme: str, channels: ChannelSet, cfg: SystemConfig,
               ms_report: SolveReport | None = None) -> SolveReport:
    """One scheme on one realization; ES/MS switch the protocol, baselines run
    with the continuous-amplitude protocol (frozen patterns satisfy both).

    ``ms_report`` lets a paired driver hand the mode-switching solution to the
    continuous run so its warm start is not recomputed; results are identical
    either way."""
    if scheme == "es":
        warm = None
        if ms_report is not None and ms_report.ris_state is not None:
            warm = (ms_report.ris_state, ms_report.energy.a)
        return optimize(channels, replace(cfg, protocol=Protocol.ES), warm_start=warm)
    if scheme == "ms":
        return optimize(channels, replace(cfg, protocol=Protocol.MS))
    return run_baseline(Baseline(scheme), channels, replace(cfg, protocol=Protocol.ES))


@dataclass
class SweepRow:
    scheme: str
    variable: str
    value: int
    realization: int
    seed: int
    status: str
    objective_bps: float = math.nan
    iterations: int = 0
    rank_residual: float = math.nan
    binary_residual: float = math.nan
    offload_bps: tuple = ()
    local_bps: tuple = ()
    message: str = ""


def _point_rows(args) -> list[SweepRow]:
    base, variable, value, realization, master_seed, schemes = args
    cfg = config_for_value(base, variable, value)
    seed = child_seed(master_seed, value, realization)
    channels = sample_channels(cfg, seed)
    rows = []
    ms_report = None
    ordered = sorted(schemes, key=lambda s: s != "ms")  # ms first for reuse
    reports: dict[str, SolveReport | Exception] = {}
    for scheme in ordered:
        try:
            reports[scheme] = run_scheme(scheme, channels, cfg, ms_report=ms_report)
            if scheme == "ms":
                ms_report = reports[scheme]
        except Exception as exc:  # noqa: BLE001 - sweep must survive bad points
            reports[scheme] = exc
    for scheme in schemes:
        outcome = reports[scheme]
        if isinstance(outcome, Exception):
            rows.append(SweepRow(
                scheme=scheme, variable=variable, value=value,
                realization=realization, seed=seed, status="error",
                message=f"{type(outcome).__name__}: {outcome}",
            ))
            continue
        rep = outcome
        rows.append(SweepRow(
            scheme=scheme, variable=variable, value=value,
            realization=realization, seed=seed, status="ok",
            objective_bps=rep.objective, iterations=rep.iterations,
            rank_residual=rep.rank_residual,
            binary_residual=rep.binary_residual,
            offload_bps=tuple(float(x) for x in rep.per_user_offload_rate),
            local_bps=tuple(float(x) for x in rep.per_user_local_rate),
        ))
    return rows


def run_sweep(spec: SweepSpec, n_jobs: int | None = None) -> list[SweepRow]:
    """Run every (value, realization, scheme) combination; deterministic output
    order regardless of worker scheduling."""
    tasks = [(spec.base_config, spec.variable, value, realization,
              spec.master_seed, spec.schemes)
             for value in spec.values for realization in range(spec.realizations)]
    if n_jobs is None:
        n_jobs = min(len(tasks), 8)
    if n_jobs <= 1 or len(tasks) == 1:
        groups = [_point_rows(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            groups = list(pool.map(_point_rows, tasks, chunksize=1))
    rows = [row for group in groups for row in group]
    order = {s: i for i, s in enumerate(spec.schemes)}
    rows.sort(key=lambda r: (r.value, r.realization, order[r.scheme]))
    return rows


@dataclass
class SummaryRow:
    scheme: str
    value: int
    n: int
    mean: float
    sd: float
    ci95_half: float


def summarize(rows: Iterable[SweepRow]) -> list[SummaryRow]:
    """Per (scheme, value): mean, standard deviation, and normal-approximation
    95% confidence half-width of the objective over ok realizations."""
    rows = list(rows)
    if not rows:
        raise ValueError("empty result table")
    buckets: dict[tuple[str, int], list[float]] = {}
    scheme_order: dict[str, int] = {}
    for r in rows:
        scheme_order.setdefault(r.scheme, len(scheme_order))
        if r.status == "ok":
            buckets.setdefault((r.scheme, r.value), []).append(r.objective_bps)
    out = []
    for (scheme, value), vals in sorted(
            buckets.items(), key=lambda kv: (kv[0][1], scheme_order[kv[0][0]])):
        arr = np.asarray(vals)
        sd = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
        out.append(SummaryRow(scheme=scheme, value=value, n=arr.size,
                              mean=float(arr.mean()), sd=sd,
                              ci95_half=1.96 * sd / math.sqrt(arr.size)))
    return out


def summary_table(rows: Iterable[SweepRow]) -> dict[tuple[str, int], SummaryRow]:
    return {(s.scheme, s.value): s for s in summarize(rows)}


# -- CSV ------------------------------------------------------------------


def _fmt(x: float) -> str:
    return f"{x:.12g}"


def _row_record(row: SweepRow) -> list[str]:
    return [
        row.scheme, row.variable, str(row.value), str(row.realization),
        str(row.seed), row.status, _fmt(row.objective_bps), str(row.iterations),
        _fmt(row.rank_residual), _fmt(row.binary_residual),
        ";".join(_fmt(x) for x in row.offload_bps),
        ";".join(_fmt(x) for x in row.local_bps),
        row.message,
    ]


def write_rows_csv(rows: Iterable[SweepRow], path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(CSV_SCHEMA_LINE + "\n")
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            writer.writerow(_row_record(row))


def read_rows_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        first = fh.readline().strip()
        if first != CSV_SCHEMA_LINE:
            raise ValueError(f"unexpected sweep CSV schema line: {first!r}")
        return list(csv.DictReader(fh))


def write_summary_csv(summaries: Iterable[SummaryRow], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scheme", "value", "n", "mean", "sd", "ci95_half"])
        for s in summaries:
            writer.writerow([s.scheme, str(s.value), str(s.n),
                             _fmt(s.mean), _fmt(s.sd), _fmt(s.ci95_half)])
