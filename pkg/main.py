#!/usr/bin/env python3
"""
Nearest-Neighbour Score Estimation - CLI Entry Point

Usage:
    python main.py gen --kind gmm --n 1000 --dim 2 -o data.nnse
    python main.py index --data data.nnse --k 64
    python main.py estimate --data data.nnse --queries z.csv --t 0.5 -o est.csv
    python main.py bench --data data.nnse --estimators knn,uniform,stf -o report.csv
    python main.py bounds --data data.nnse --trials 1000 -o bounds.csv
    python main.py sample --data data.nnse --steps 40 --solver heun -o samples.csv
"""

import argparse
import hashlib
import logging
import os
import sys
import time
from pathlib import Path
from typing import List, Optional

import numpy as np

from analysis.bounds import verify_theorem1, verify_theorem2
from analysis.evaluation import EvalProtocol, log_t_grid, run_eval
from config import (
    BOUND_TRIALS, DEFAULT_K, DEFAULT_N, DEFAULT_SEED, EVAL_ESTIMATORS, EVAL_POINTS, EVAL_REPS,
    EVAL_T_COUNT, EVAL_T_HI, EVAL_T_LO, LOG_FORMAT, LOG_LEVEL, RUNS_DB_ENV, SAMPLER_GRID,
    SAMPLER_RHO, SAMPLER_SAMPLES, SAMPLER_SCORE, SAMPLER_SOLVER, SAMPLER_STEPS, RunConfig,
    default_threads,
)
from db import DatasetStore, SyntheticSpec, generate, load, record_run, save, save_csv
from diffusion.schedules import DiffusionSchedule
from diffusion.sampler import SamplerConfig, sample
from errors import ConfigError, DimensionError, NNScoreError
from estimators import EstimatorKind, EstimatorSpec, build_estimator, expand_specs
from index.exact import build as build_index, validate_against_naive
from streams import derive_rng

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

# stream prefixes used by the CLI itself
_ESTIMATE_STREAM = 5
_INDEX_QUERY_STREAM = 6


def _pick(flag, cfg: RunConfig, section: str, key: str, default):
    """Flag value if given, else the config file value, else the default"""
    if flag is not None:
        return flag
    return cfg.get(section, key, default)


def parse_estimators(text) -> List[str]:
    if isinstance(text, (list, tuple)):
        return [str(name).strip() for name in text if str(name).strip()]
    return [name.strip() for name in str(text).split(",") if name.strip()]


def parse_int_list(text, what: str) -> List[int]:
    """Parse "64,256" (or a config list) into ints"""
    items = text if isinstance(text, (list, tuple)) else str(text).split(",")
    try:
        values = [int(str(item).strip()) for item in items if str(item).strip()]
    except ValueError:
        raise ConfigError(f"bad {what} list {text!r} (use comma-separated integers)")
    if not values:
        raise ConfigError(f"empty {what} list")
    return values


def parse_t_grid(text: str) -> np.ndarray:
    """
    Parse a t grid flag: "LO:HI:COUNT" (log-spaced) or a comma-separated list.

    Returns:
        Array of positive times
    """
    text = text.strip()
    try:
        if ":" in text:
            lo, hi, count = text.split(":")
            return log_t_grid(float(lo), float(hi), int(count))
        grid = np.array([float(v) for v in text.split(",") if v.strip()])
    except ValueError:
        raise ConfigError(f"bad --t-grid {text!r} (use LO:HI:COUNT or t1,t2,...)")
    if grid.size == 0 or np.any(grid <= 0.0):
        raise ConfigError(f"--t-grid needs positive times, got {text!r}")
    return grid


def resolve_threads(args, cfg: RunConfig) -> int:
    threads = _pick(args.threads, cfg, 'run', 'threads', None)
    if threads is None:
        return default_threads()
    if threads < 1:
        raise ConfigError(f"threads must be >= 1, got {threads}")
    return threads


def resolve_seed(args, cfg: RunConfig) -> int:
    seed = _pick(args.seed, cfg, 'run', 'seed', DEFAULT_SEED)
    if not 0 <= seed < 2 ** 64:
        raise ConfigError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return seed


def build_schedule(args, cfg: RunConfig) -> DiffusionSchedule:
    values = cfg.section('schedule')
    if args.schedule is not None:
        values['kind'] = args.schedule
    return DiffusionSchedule.from_dict(values)


def load_dataset(args, cfg: RunConfig) -> DatasetStore:
    """--data file, else [dataset] path, else the [dataset] synthetic spec"""
    path = _pick(args.data, cfg, 'dataset', 'path', None)
    if path is not None:
        data = load(path)
        logger.info(f"Loaded {path}: N={data.n}, d={data.dim}")
        return data
    values = cfg.section('dataset')
    values.pop('path', None)
    spec = SyntheticSpec.from_dict(values)
    logger.info(f"No dataset file given; generating {spec.kind.value} N={spec.n}, d={spec.dim}, seed={spec.seed}")
    return generate(spec)


def write_text(path: Path, text: str) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    return path


def sha256_file(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class RunRecord:
    """What a subcommand reports to the run ledger"""

    def __init__(self, command: str):
        self.command = command
        self.seed: Optional[int] = None
        self.threads: Optional[int] = None
        self.data: Optional[DatasetStore] = None
        self.output: Optional[Path] = None
        self.summary: dict = {}


def cmd_gen(args, cfg: RunConfig, run: RunRecord) -> int:
    """Generate a synthetic dataset file."""
    values = cfg.section('dataset')
    values.pop('path', None)
    overrides = {
        'kind': args.kind, 'n': args.n, 'dim': args.dim, 'components': args.components,
        'component_std': args.std, 'seed': args.seed,
    }
    values.update({k: v for k, v in overrides.items() if v is not None})
    spec = SyntheticSpec.from_dict(values)
    data = generate(spec)

    out = Path(args.out)
    if out.suffix.lower() in (".csv", ".txt"):
        save_csv(data, out)
    else:
        save(data, out)

    checksum = data.checksum()
    print(f"N={data.n}")
    print(f"d={data.dim}")
    print(f"checksum={checksum}")

    run.seed, run.data, run.output = spec.seed, data, out
    run.summary = {'kind': spec.kind.value, 'n': data.n, 'dim': data.dim}
    return EXIT_OK


def cmd_index(args, cfg: RunConfig, run: RunRecord) -> int:
    """Build the exact index and validate it against the naive scan."""
    data = load_dataset(args, cfg)
    seed = resolve_seed(args, cfg)
    k = min(_pick(args.k, cfg, 'estimators', 'k', DEFAULT_K), data.n)

    rng = derive_rng(seed, _INDEX_QUERY_STREAM)
    picks = rng.integers(data.n, size=args.queries)
    spread = max(data.diameter(), 1.0) * 0.01
    queries = data.points[picks] + spread * rng.standard_normal((args.queries, data.dim))

    index = build_index(data)
    stats = validate_against_naive(index, queries, k)

    print("\n" + "=" * 60)
    print("  INDEX VALIDATION")
    print("=" * 60)
    print(f"    Dataset:         N={data.n}, d={data.dim}")
    print(f"    Queries:         {stats['queries']} (k={k})")
    print(f"    Mismatches:      {stats['mismatches']}")
    print(f"    Throughput:      {stats['queries_per_sec']:.1f} queries/sec")
    print("=" * 60 + "\n")

    if args.out:
        lines = ["query,rank,index,dist"]
        for q, result in enumerate(index.search_batch(queries, k)):
            for rank, (i, dist) in enumerate(zip(result.indices, result.dists)):
                lines.append(f"{q},{rank},{int(i)},{float(dist)!r}")
        run.output = write_text(args.out, "\n".join(lines) + "\n")

    run.seed, run.data = seed, data
    run.summary = {'queries': stats['queries'], 'mismatches': stats['mismatches'], 'k': k}
    return EXIT_OK if stats['mismatches'] == 0 else EXIT_FAILURE


def cmd_estimate(args, cfg: RunConfig, run: RunRecord) -> int:
    """Score user-supplied z vectors with each requested estimator."""
    data = load_dataset(args, cfg)
    schedule = build_schedule(args, cfg)
    seed = resolve_seed(args, cfg)
    n = _pick(args.n, cfg, 'estimators', 'n', DEFAULT_N)
    k = _pick(args.k, cfg, 'estimators', 'k', DEFAULT_K)
    names = parse_estimators(_pick(args.estimators, cfg, 'estimators', 'names', ['knn']))
    specs = [EstimatorSpec.from_token(name, n=n, k=k) for name in names]
    if any(spec.kind is EstimatorKind.STF for spec in specs):
        raise ConfigError("stf needs the generating point of each z and cannot score arbitrary queries")

    queries = load(args.queries).points
    if queries.shape[1] != data.dim:
        raise DimensionError(f"queries have dimension {queries.shape[1]}, dataset has {data.dim}")
    index = build_index(data) if any(spec.uses_neighbours for spec in specs) else None
    estimators = [build_estimator(spec, data, schedule, index) for spec in specs]

    d = data.dim
    header = ['point', 't', 'estimator', 'ess'] + [f"mean_{j}" for j in range(d)] + [f"score_{j}" for j in range(d)]
    lines = [",".join(header)]
    for p, z in enumerate(queries):
        for e, estimator in enumerate(estimators):
            est = estimator.estimate(z, args.t, derive_rng(seed, _ESTIMATE_STREAM, p, e))
            fields = [str(p), repr(float(args.t)), estimator.name, repr(est.ess)]
            fields += [repr(float(v)) for v in est.mean_hat] + [repr(float(v)) for v in est.score_hat]
            lines.append(",".join(fields))
    run.output = write_text(args.out, "\n".join(lines) + "\n")

    print(f"Scored {len(queries)} points with {', '.join(names)} at t={args.t:g} -> {args.out}")
    run.seed, run.data = seed, data
    run.summary = {'points': len(queries), 'estimators': names, 't': args.t}
    return EXIT_OK


def cmd_bench(args, cfg: RunConfig, run: RunRecord) -> int:
    """Bias / variance / MSE sweep over a t grid."""
    data = load_dataset(args, cfg)
    schedule = build_schedule(args, cfg)
    seed = resolve_seed(args, cfg)
    threads = resolve_threads(args, cfg)
    ns = parse_int_list(_pick(args.n, cfg, 'estimators', 'n_grid', [cfg.get('estimators', 'n', DEFAULT_N)]), 'n')
    ks = parse_int_list(_pick(args.k, cfg, 'estimators', 'k_grid', [cfg.get('estimators', 'k', DEFAULT_K)]), 'k')
    names = parse_estimators(_pick(args.estimators, cfg, 'estimators', 'names', EVAL_ESTIMATORS))
    specs = expand_specs(names, ns, ks)

    if args.t_grid is not None:
        t_grid = parse_t_grid(args.t_grid)
    else:
        t_grid = log_t_grid(
            cfg.get('protocol', 't_lo', EVAL_T_LO),
            cfg.get('protocol', 't_hi', EVAL_T_HI),
            cfg.get('protocol', 't_count', EVAL_T_COUNT),
        )
    protocol = EvalProtocol(
        t_grid=list(t_grid),
        m_points=_pick(args.points, cfg, 'protocol', 'points', EVAL_POINTS),
        reps=_pick(args.reps, cfg, 'protocol', 'reps', EVAL_REPS),
        estimators=specs,
        master_seed=seed,
    )
    report = run_eval(data, schedule, protocol, workers=threads)
    run.output = report.to_csv(args.out)

    print("\n" + "=" * 60)
    print("  ESTIMATOR BENCHMARK (MSE per dimension)")
    print("=" * 60)
    print(f"  {'t':>9}  {'estimator':<13}{'n':>5}{'k':>5}{'mean mse':>13}{'score mse':>13}")
    print("-" * 60)
    for i in range(0, len(report.rows), 2):
        mean_row, score_row = report.rows[i], report.rows[i + 1]
        print(
            f"  {mean_row.t:>9.4g}  {mean_row.estimator:<13}{mean_row.n:>5}{mean_row.k:>5}"
            f"{mean_row.mse:>13.4e}{score_row.mse:>13.4e}"
        )
    print("=" * 60 + "\n")

    run.seed, run.threads, run.data = seed, threads, data
    run.summary = {
        'rows': len(report.rows), 'estimators': names, 'settings': len(specs), 't_count': len(t_grid),
    }
    return EXIT_OK


def cmd_bounds(args, cfg: RunConfig, run: RunRecord) -> int:
    """Verify the variance bounds; exit 1 on any violation."""
    data = load_dataset(args, cfg)
    schedule = build_schedule(args, cfg)
    seed = resolve_seed(args, cfg)
    threads = resolve_threads(args, cfg)
    trials = _pick(args.trials, cfg, 'bounds', 'trials', BOUND_TRIALS)
    k = _pick(args.k, cfg, 'bounds', 'k', DEFAULT_K)
    n = _pick(args.n, cfg, 'bounds', 'n', DEFAULT_N)
    theorem = _pick(args.theorem, cfg, 'bounds', 'theorem', 1)
    if theorem not in (1, 2):
        raise ConfigError(f"theorem must be 1 or 2, got {theorem}")
    if k > data.n:
        raise ConfigError(f"k={k} exceeds N={data.n}")

    verify = verify_theorem1 if theorem == 1 else verify_theorem2
    report = verify(data, schedule, trials, k, n, seed, workers=threads)
    if args.out:
        run.output = report.to_csv(args.out)

    print(report.summary())
    run.seed, run.threads, run.data = seed, threads, data
    run.summary = {
        'theorem': theorem, 'trials': trials, 'violations': report.violations,
        'k': k, 'n': n, 'min_rho': report.min_rho,
    }
    return EXIT_OK if report.violations == 0 else EXIT_FAILURE


def cmd_sample(args, cfg: RunConfig, run: RunRecord) -> int:
    """Integrate the PF-ODE with the chosen score source."""
    data = load_dataset(args, cfg)
    schedule = build_schedule(args, cfg)
    seed = resolve_seed(args, cfg)
    threads = resolve_threads(args, cfg)

    values = cfg.section('sampler')
    values.setdefault('t_min', schedule.t_min)
    values.setdefault('t_max', schedule.t_max)
    overrides = {
        'steps': args.steps, 'solver': args.solver, 'score_source': args.score, 'n': args.n,
        'k': args.k, 't_switch': args.t_switch, 'handoff': args.handoff, 'n_samples': args.samples,
        'grid': args.grid,
    }
    values.update({key: v for key, v in overrides.items() if v is not None})
    if args.shared_stage_batch:
        values['shared_stage_batch'] = True
    values['seed'] = seed
    config = SamplerConfig.from_dict(values)

    result = sample(data, schedule, config, workers=threads, trace=args.trace)
    run.output = result.to_csv(args.out, include_trace=args.trace)

    print(f"Wrote {config.n_samples} samples at t={result.t_final:g} -> {args.out}")
    run.seed, run.threads, run.data = seed, threads, data
    run.summary = {
        'samples': config.n_samples, 'steps': len(result.ts) - 1, 'solver': config.solver.value,
        'score_source': config.score_source.value, 't_final': result.t_final, 'switched': result.switched,
    }
    return EXIT_OK


COMMANDS = {
    'gen': cmd_gen,
    'index': cmd_index,
    'estimate': cmd_estimate,
    'bench': cmd_bench,
    'bounds': cmd_bounds,
    'sample': cmd_sample,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', type=str, help='INI run config file')
    common.add_argument('--seed', type=int, help='Master seed (default: 0)')
    common.add_argument('--threads', type=int, help='Worker threads (default: $NNSCORE_THREADS or CPU count)')
    common.add_argument('--runs-db', type=str, help='SQLite run ledger to append to')
    common.add_argument(
        '--log-level',
        choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'],
        help='Logging level (default: INFO)'
    )

    data_opts = argparse.ArgumentParser(add_help=False)
    data_opts.add_argument('--data', type=str, help='Dataset file (binary .nnse or .csv)')
    data_opts.add_argument('--schedule', choices=['edm', 'vp'], help='Diffusion schedule (default: edm)')

    parser = argparse.ArgumentParser(
        description="Nearest-neighbour score estimation toolkit",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
    python main.py gen --kind gmm --n 1000 --dim 2 --components 8 --seed 1 -o d.nnse
    python main.py bench --data d.nnse --estimators knn,uniform --n 256 --k 64 -o report.csv
    python main.py bounds --data d.nnse --theorem 2 --trials 1000
    python main.py sample --data d.nnse --solver heun --steps 40 --t-switch 2.0 -o s.csv
        """
    )
    sub = parser.add_subparsers(dest='command', required=True)

    gen = sub.add_parser('gen', parents=[common], help='Generate a synthetic dataset')
    gen.add_argument('--kind', choices=['gmm', 'uniform', 'moons'], help='Dataset family')
    gen.add_argument('--n', type=int, help='Number of points')
    gen.add_argument('--dim', type=int, help='Dimension')
    gen.add_argument('--components', type=int, help='Mixture components (gmm)')
    gen.add_argument('--std', type=float, help='Component standard deviation (gmm)')
    gen.add_argument('--out', '-o', required=True, help='Output file (.csv for CSV, else binary)')

    index = sub.add_parser('index', parents=[common, data_opts], help='Validate the exact index')
    index.add_argument('--k', type=int, help='Neighbours per query')
    index.add_argument('--queries', type=int, default=100, help='Random queries (default: 100)')
    index.add_argument('--out', '-o', help='Optional neighbour list CSV')

    estimate = sub.add_parser('estimate', parents=[common, data_opts], help='Score given z vectors')
    estimate.add_argument('--queries', required=True, help='File with one z per row (.csv or binary)')
    estimate.add_argument('--t', type=float, required=True, help='Diffusion time')
    estimate.add_argument('--estimators', type=str, help='Comma-separated estimator kinds')
    estimate.add_argument('--n', type=int, help='Batch size')
    estimate.add_argument('--k', type=int, help='Neighbours in the proposal')
    estimate.add_argument('--out', '-o', required=True, help='Output CSV')

    bench = sub.add_parser('bench', parents=[common, data_opts], help='Bias/variance/MSE sweep')
    bench.add_argument('--t-grid', type=str, help='LO:HI:COUNT (log-spaced) or t1,t2,...')
    bench.add_argument('--points', type=int, help='z points per t')
    bench.add_argument('--reps', type=int, help='Repetitions per z')
    bench.add_argument(
        '--estimators', type=str,
        help='Comma-separated estimator kinds, each optionally pinned as kind:n=INT:k=INT'
    )
    bench.add_argument('--n', type=str, help='Batch size, or a comma list to sweep (e.g. 64,256)')
    bench.add_argument('--k', type=str, help='Neighbours in the proposal, or a comma list to sweep')
    bench.add_argument('--out', '-o', required=True, help='Report CSV')

    bounds = sub.add_parser('bounds', parents=[common, data_opts], help='Verify the variance bounds')
    bounds.add_argument('--trials', type=int, help=f'Random trials (default: {BOUND_TRIALS})')
    bounds.add_argument('--theorem', type=int, choices=[1, 2], help='Which bound (default: 1)')
    bounds.add_argument('--k', type=int, help='Neighbours in the proposal')
    bounds.add_argument('--n', type=int, help='Batch size')
    bounds.add_argument('--out', '-o', help='Optional per-trial CSV')

    samp = sub.add_parser('sample', parents=[common, data_opts], help='PF-ODE sampling')
    samp.add_argument('--steps', type=int, help=f'Integration steps (default: {SAMPLER_STEPS})')
    samp.add_argument('--solver', choices=['euler', 'heun'], help=f'ODE solver (default: {SAMPLER_SOLVER})')
    samp.add_argument('--score', choices=['exact', 'knn', 'uniform'], help=f'Score source (default: {SAMPLER_SCORE})')
    samp.add_argument('--n', type=int, help='SNIS batch size')
    samp.add_argument('--k', type=int, help='Neighbours in the proposal')
    samp.add_argument('--t-switch', type=float, help='Switch time for hybrid sampling')
    samp.add_argument('--handoff', choices=['stop', 'exact'], help='Below t-switch: stop, or continue with the exact score')
    samp.add_argument('--samples', type=int, help=f'Number of samples (default: {SAMPLER_SAMPLES})')
    samp.add_argument('--grid', choices=['rho', 'linear', 'log'], help=f'Time grid (default: {SAMPLER_GRID}, rho={SAMPLER_RHO:g})')
    samp.add_argument('--shared-stage-batch', action='store_true', help='Reuse one SNIS stream for both Heun stages')
    samp.add_argument('--trace', action='store_true', help='Write every intermediate state')
    samp.add_argument('--out', '-o', required=True, help='Samples CSV')

    return parser


def _record(runs_db: Optional[str], run: RunRecord, started: float, status: str, error: Optional[str]):
    if not runs_db:
        return
    try:
        record_run(
            runs_db,
            run.command,
            summary=run.summary,
            seed=None if run.seed is None else str(run.seed),
            threads=run.threads,
            dataset_checksum=run.data.checksum() if run.data is not None else None,
            output_path=str(run.output) if run.output else None,
            output_sha256=sha256_file(run.output) if run.output and Path(run.output).exists() else None,
            duration_seconds=time.time() - started,
            status=status,
            error=error,
        )
    except Exception as e:
        logger.error(f"Could not write run ledger {runs_db}: {e}")


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    run = RunRecord(args.command)
    started = time.time()

    try:
        cfg = RunConfig.load(args.config) if args.config else RunConfig()
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE

    level = args.log_level or cfg.get('run', 'log_level', LOG_LEVEL)
    logging.basicConfig(level=getattr(logging, str(level).upper(), logging.INFO), format=LOG_FORMAT)
    runs_db = args.runs_db or cfg.get('run', 'runs_db') or os.getenv(RUNS_DB_ENV)

    try:
        status = COMMANDS[args.command](args, cfg, run)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        _record(runs_db, run, started, 'error', str(e))
        return EXIT_USAGE
    except (NNScoreError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        _record(runs_db, run, started, 'error', str(e))
        return EXIT_FAILURE

    _record(runs_db, run, started, 'ok' if status == EXIT_OK else 'failed', None)
    return status


if __name__ == "__main__":
    sys.exit(main())
