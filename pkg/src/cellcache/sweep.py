"""Experiment grids over Zipf exponent, storage size, scheme and seed.

Rows always come out in grid order (Zipf, then capacity, then scheme, then
seed) no matter how many worker processes ran the episodes, and numbers are
written with 9 significant digits, so CSV output is byte-reproducible.
"""
from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .exceptions import CellCacheError, InvalidConfig, MissingAxis
from .simulator import SCHEMES, SimConfig, run_episode

__all__ = [
    "SweepSpec",
    "RawRow",
    "AggRow",
    "FigRow",
    "SweepError",
    "RAW_COLUMNS",
    "AGG_COLUMNS",
    "FIG_COLUMNS",
    "FIGURES",
    "run_sweep",
    "aggregate",
    "emit_figure_data",
    "format_number",
    "write_csv",
    "read_agg_csv",
]

RAW_COLUMNS = ("scheme", "zipf_exponent", "capacity", "seed", "avg_delay_s",
               "offloading_gain", "hit_rate", "requests_served")
AGG_COLUMNS = ("scheme", "zipf_exponent", "capacity", "n_seeds",
               "avg_delay_s_mean", "avg_delay_s_stderr",
               "offloading_gain_mean", "offloading_gain_stderr",
               "hit_rate_mean", "hit_rate_stderr")
FIG_COLUMNS = ("x_value", "scheme", "mean", "stderr")

# figure number -> (x axis, metric)
FIGURES = {
    2: ("zipf_exponent", "avg_delay_s"),
    3: ("zipf_exponent", "offloading_gain"),
    4: ("capacity", "avg_delay_s"),
    5: ("capacity", "offloading_gain"),
}


class SweepError(CellCacheError):
    """An episode of a sweep failed; the message names the grid cell."""


@dataclass(frozen=True)
class SweepSpec:
    """A grid of episodes around a base configuration.

    The base config supplies every parameter that is not a grid axis; its
    ``zipf_exponent``, ``storage_capacity_files``, ``scheme`` and
    ``master_seed`` are overridden per cell.
    """

    base: SimConfig
    zipf_values: tuple
    capacity_values: tuple
    schemes: tuple
    seeds: tuple

    def __post_init__(self):
        for name in ("zipf_values", "capacity_values", "schemes", "seeds"):
            value = tuple(getattr(self, name))
            if not value:
                raise InvalidConfig(f"{name} must not be empty")
            object.__setattr__(self, name, value)
        if len(set(self.seeds)) != len(self.seeds):
            raise InvalidConfig(f"seeds must be distinct, got {self.seeds}")
        for s in self.schemes:
            if s not in SCHEMES:
                raise InvalidConfig(f"unknown scheme {s!r}; expected one of {SCHEMES}")
        # validate every axis value once, up front
        for z in self.zipf_values:
            self.base.with_(zipf_exponent=z)
        for c in self.capacity_values:
            if isinstance(c, bool) or not isinstance(c, (int, np.integer)):
                raise InvalidConfig(f"capacity values must be integers, got {c!r}")
            self.base.with_(storage_capacity_files=int(c))

    @classmethod
    def around(cls, base: SimConfig, *, zipf_values=None, capacity_values=None, schemes=None, seeds=None):
        """Fill unspecified axes from ``base``; schemes default to all three."""
        return cls(
            base=base,
            zipf_values=zipf_values or (base.zipf_exponent,),
            capacity_values=capacity_values or (base.storage_capacity_files,),
            schemes=schemes or SCHEMES,
            seeds=seeds or (base.master_seed,),
        )

    def cells(self):
        """``(zipf, capacity, scheme, seed)`` tuples in grid order."""
        for z in self.zipf_values:
            for c in self.capacity_values:
                for s in self.schemes:
                    for seed in self.seeds:
                        yield z, c, s, seed

    def __len__(self):
        return len(self.zipf_values) * len(self.capacity_values) * len(self.schemes) * len(self.seeds)

    def config_for(self, zipf, capacity, scheme, seed) -> SimConfig:
        return self.base.with_(zipf_exponent=zipf, storage_capacity_files=int(capacity),
                               scheme=scheme, master_seed=int(seed))


class RawRow(NamedTuple):
    scheme: str
    zipf_exponent: float
    capacity: int
    seed: int
    avg_delay_s: float
    offloading_gain: float
    hit_rate: float
    requests_served: int


class AggRow(NamedTuple):
    scheme: str
    zipf_exponent: float
    capacity: int
    n_seeds: int
    avg_delay_s_mean: float
    avg_delay_s_stderr: float
    offloading_gain_mean: float
    offloading_gain_stderr: float
    hit_rate_mean: float
    hit_rate_stderr: float


class FigRow(NamedTuple):
    x_value: float
    scheme: str
    mean: float
    stderr: float


def _run_cell(args) -> RawRow:
    spec, cell = args
    z, c, s, seed = cell
    try:
        m = run_episode(spec.config_for(*cell))
    except Exception as exc:
        raise SweepError(f"episode scheme={s} zipf={z} capacity={c} seed={seed} failed: {exc}") from exc
    return RawRow(s, float(z), int(c), int(seed), m.average_service_delay_s,
                  m.offloading_gain, m.cache_hit_rate, m.requests_served)


def run_sweep(spec: SweepSpec, jobs: int = 1) -> list[RawRow]:
    """Run every grid cell; ``jobs > 1`` spreads episodes over processes.

    Each episode depends only on its own config, so the result is the same
    for any ``jobs``.
    """
    if jobs < 1:
        raise InvalidConfig(f"jobs must be >= 1, got {jobs}")
    work = [(spec, cell) for cell in spec.cells()]
    if jobs == 1 or len(work) == 1:
        return [_run_cell(w) for w in work]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_cell, work, chunksize=max(1, len(work) // (4 * jobs))))


def _mean_se(values) -> tuple[float, float]:
    x = np.asarray(values, dtype=float)
    mean = float(np.mean(x))
    if x.size < 2 or not np.all(np.isfinite(x)):
        return mean, math.nan
    return mean, float(np.std(x, ddof=1) / math.sqrt(x.size))


def aggregate(rows) -> list[AggRow]:
    """Per-cell mean and standard error across seeds, in first-seen cell order."""
    cells: dict = {}
    for r in rows:
        cells.setdefault((r.scheme, r.zipf_exponent, r.capacity), []).append(r)
    zipfs = list(dict.fromkeys(k[1] for k in cells))
    caps = list(dict.fromkeys(k[2] for k in cells))
    schemes = list(dict.fromkeys(k[0] for k in cells))
    out = []
    for z in zipfs:
        for c in caps:
            for s in schemes:
                group = cells.get((s, z, c))
                if not group:
                    continue
                stats = []
                for metric in ("avg_delay_s", "offloading_gain", "hit_rate"):
                    stats.extend(_mean_se([getattr(r, metric) for r in group]))
                out.append(AggRow(s, z, c, len(group), *stats))
    return out


def emit_figure_data(agg_rows, figure: int, at=None) -> list[FigRow]:
    """Long-format plot data for one figure.

    Parameters
    ----------
    agg_rows : sequence of AggRow
    figure : {2, 3, 4, 5}
        2 and 3 plot delay and offloading against the Zipf exponent, 4 and
        5 against storage capacity.
    at : optional
        Value of the other axis to slice at, required only when the table
        varies along both axes.

    Raises
    ------
    MissingAxis
        The table has a single value on the requested axis while varying
        along the other one, or ``at`` is not in the table.
    """
    if figure not in FIGURES:
        raise InvalidConfig(f"figure must be one of {sorted(FIGURES)}, got {figure!r}")
    axis, metric = FIGURES[figure]
    other = "capacity" if axis == "zipf_exponent" else "zipf_exponent"
    xs = list(dict.fromkeys(getattr(r, axis) for r in agg_rows))
    others = list(dict.fromkeys(getattr(r, other) for r in agg_rows))
    if not agg_rows:
        raise MissingAxis(f"figure {figure}: empty table")
    if len(xs) == 1 and len(others) > 1:
        raise MissingAxis(f"figure {figure} needs a {axis} sweep; the table only varies {other}")
    if at is None:
        if len(others) > 1:
            raise InvalidConfig(f"figure {figure}: table varies {other} too; pass at= one of {others}")
        at = others[0]
    elif at not in others:
        raise MissingAxis(f"figure {figure}: {other}={at} not in table ({others})")
    return [
        FigRow(getattr(r, axis), r.scheme, getattr(r, metric + "_mean"), getattr(r, metric + "_stderr"))
        for r in agg_rows
        if getattr(r, other) == at
    ]


def format_number(x) -> str:
    """Integers verbatim, reals with 9 significant digits, locale free."""
    if isinstance(x, str):
        return x
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".9g")


def write_csv(path_or_buffer, columns, rows) -> None:
    """Header row then one line per row, ``\\n`` line endings."""
    own = isinstance(path_or_buffer, (str, Path))
    fh = open(path_or_buffer, "w", newline="", encoding="utf-8") if own else path_or_buffer
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([format_number(v) for v in r])
    finally:
        if own:
            fh.close()


def csv_text(columns, rows) -> str:
    buf = io.StringIO()
    write_csv(buf, columns, rows)
    return buf.getvalue()


def read_agg_csv(path) -> list[AggRow]:
    """Load an aggregate CSV written by :func:`write_csv`."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != AGG_COLUMNS:
            raise InvalidConfig(f"{path}: expected columns {AGG_COLUMNS}, got {reader.fieldnames}")
        return [
            AggRow(
                d["scheme"], float(d["zipf_exponent"]), int(d["capacity"]), int(d["n_seeds"]),
                *(float(d[k]) for k in AGG_COLUMNS[4:]),
            )
            for d in reader
        ]
