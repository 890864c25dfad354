"""Command line entry point: ``cellcache {run,sweep,figure,validate}``.

Exit status is 0 on success, 2 for configuration problems and 3 for
failures while running.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import warnings
from pathlib import Path

from .clustering import dump_debug_csv
from .config import config_warnings, load_config
from .exceptions import CellCacheError, InvalidConfig
from .simulator import TRACE_COLUMNS, build_world, simulate
from .sweep import (
    AGG_COLUMNS,
    FIG_COLUMNS,
    RAW_COLUMNS,
    FIGURES,
    RawRow,
    SweepSpec,
    aggregate,
    emit_figure_data,
    read_agg_csv,
    run_sweep,
    write_csv,
)

__all__ = ["main", "EXIT_OK", "EXIT_CONFIG", "EXIT_RUNTIME", "SEED_ENV"]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
SEED_ENV = "CELLCACHE_SEED"

log = logging.getLogger("cellcache")


def _env_seed():
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw.strip() == "":
        return None
    try:
        return int(raw)
    except ValueError:
        raise InvalidConfig(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def _load(args, warn=True):
    fallback = args.seed if args.seed is not None else _env_seed()
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        config = load_config(args.config, fallback_seed=fallback, warn=warn)
    for w in caught:
        log.warning("%s", w.message)
    if args.seed is not None:
        # an explicit --seed beats the file
        if isinstance(config, SweepSpec):
            config = SweepSpec.around(config.base.with_(master_seed=args.seed),
                                      zipf_values=config.zipf_values, capacity_values=config.capacity_values,
                                      schemes=config.schemes, seeds=(args.seed,))
        else:
            config = config.with_(master_seed=args.seed)
    return config


def _as_sweep(config) -> SweepSpec:
    return config if isinstance(config, SweepSpec) else SweepSpec.around(config, schemes=(config.scheme,))


def _out_dir(args) -> Path:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_run(args) -> int:
    config = _load(args)
    if isinstance(config, SweepSpec):
        raise InvalidConfig("'run' takes a single-episode config; use 'sweep' for grids")
    world = build_world(config)
    m = simulate(world, trace=args.trace is not None)
    row = RawRow(config.scheme, config.zipf_exponent, config.storage_capacity_files, config.master_seed,
                 m.average_service_delay_s, m.offloading_gain, m.cache_hit_rate, m.requests_served)
    if args.out is not None:
        write_csv(_out_dir(args) / "results_raw.csv", RAW_COLUMNS, [row])
    else:
        write_csv(sys.stdout, RAW_COLUMNS, [row])
    if args.trace is not None:
        write_csv(args.trace, TRACE_COLUMNS, m.trace)
    if args.dump_clustering is not None:
        est = world.clustering
        if est is None:
            log.warning("no clustering to dump: scheme %s does not cluster", config.scheme)
        else:
            dump_debug_csv(args.dump_clustering, est.affinity_matrix_, est.eigenvalues_, est.labels_)
    return EXIT_OK


def cmd_sweep(args) -> int:
    spec = _as_sweep(_load(args))
    log.info("running %d episodes with %d job(s)", len(spec), args.jobs)
    rows = run_sweep(spec, jobs=args.jobs)
    agg = aggregate(rows)
    out = _out_dir(args)
    write_csv(out / "results_raw.csv", RAW_COLUMNS, rows)
    write_csv(out / "results_agg.csv", AGG_COLUMNS, agg)
    if args.figure is not None:
        write_csv(out / f"fig{args.figure}.csv", FIG_COLUMNS, emit_figure_data(agg, args.figure, args.at))
    return EXIT_OK


def cmd_figure(args) -> int:
    if args.figure is None:
        raise InvalidConfig("'figure' needs --figure")
    out = Path(args.out or ".")
    agg_path = out / "results_agg.csv"
    if not agg_path.exists():
        raise InvalidConfig(f"{agg_path} not found; run 'sweep' first")
    rows = emit_figure_data(read_agg_csv(agg_path), args.figure, args.at)
    write_csv(out / f"fig{args.figure}.csv", FIG_COLUMNS, rows)
    return EXIT_OK


def cmd_validate(args) -> int:
    config = _load(args, warn=False)
    with warnings.catch_warnings(record=True):
        warnings.simplefilter("always")
        problems = config_warnings(config)
    for p in problems:
        print(f"warning: {p}")
    kind = "sweep" if isinstance(config, SweepSpec) else "episode"
    print(f"ok: valid {kind} config" + (f" ({len(problems)} warning(s))" if problems else ""))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="key = value config file (defaults if omitted)")
    common.add_argument("--seed", type=int, metavar="N",
                        help=f"master seed; falls back to the config, then ${SEED_ENV}")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    figure = argparse.ArgumentParser(add_help=False)
    figure.add_argument("--figure", type=int, choices=sorted(FIGURES))
    figure.add_argument("--at", type=float, metavar="VALUE",
                        help="value of the other axis when the sweep varies both")

    parser = argparse.ArgumentParser(prog="cellcache", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", parents=[common], help="run one episode")
    p.add_argument("--trace", metavar="PATH", help="write the per-instant learner trace CSV")
    p.add_argument("--dump-clustering", metavar="PATH", help="write similarity, spectrum and labels CSV")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", parents=[common, figure], help="run a grid of episodes")
    p.add_argument("--jobs", type=int, default=1, metavar="N", help="worker processes")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("figure", parents=[common, figure], help="extract plot data from a sweep")
    p.set_defaults(func=cmd_figure)

    p = sub.add_parser("validate", parents=[common], help="check a config and report warnings")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except InvalidConfig as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CellCacheError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
