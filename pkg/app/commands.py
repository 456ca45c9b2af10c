# -------------------------------------------------------------
# CLI команди (регистрират се в app.cli → `flask --app run gen ...`
# или `python run.py decompose ...`):
#   gen        → генерира плътна (.bin) или разредена (.mtx) матрица
#   decompose  → truncated SVD, пише U.bin, V.bin, sigma.txt и метрики
#   bench      → sweep по (n_b, q_s) или по брой rank-ове (strong / weak), пише CSV
#
# Стойностите по подразбиране идват от current_app.config (config.py).
# -------------------------------------------------------------

import json
from pathlib import Path

import click
from flask import current_app
from flask.cli import with_appcontext

from .errors import ConfigError
from .services.bench import (RunConfig, SCALING_MODES, decompose, sweep, scaling_sweep,
                             write_metrics_json, write_metrics_csv)
from .services.matrix_io import read_matrix, write_matrix, write_factors, generate_dense, generate_sparse
from .services.power_svd import PATHS
from .services.partition import ORIENTATIONS
from .utils.cli import handle_errors, parse_int_list

KINDS = ("dense", "sparse")


def _generate(kind, rows, cols, density, seed):
    if rows is None or cols is None:
        raise ConfigError("--rows and --cols are required to generate a matrix")
    if kind == "sparse":
        return generate_sparse(rows, cols, density, seed)
    return generate_dense(rows, cols, seed)


def _load_input(input_path, gen, rows, cols, density, seed):
    if input_path:
        return read_matrix(input_path)
    if gen:
        return _generate(gen, rows, cols, density, seed)
    raise ConfigError("either --input or --gen is required")


def input_options(fn):
    for option in reversed([
        click.option("--input", "input_path", type=click.Path(dir_okay=False), default=None,
                     help="Матрица: .mtx (разредена) или .bin (плътна)."),
        click.option("--gen", type=click.Choice(KINDS), default=None,
                     help="Генерира входа в паметта вместо --input."),
        click.option("--rows", type=int, default=None),
        click.option("--cols", type=int, default=None),
        click.option("--density", type=float, default=1e-3, show_default=True),
        click.option("--seed", type=int, default=None, help="Seed за генериране и за v0."),
    ]):
        fn = option(fn)
    return fn


def run_options(fn):
    for option in reversed([
        click.option("-k", "--rank", "k", type=int, default=None, help="Брой компоненти (-1 = всички)."),
        click.option("--eps", type=float, default=None),
        click.option("--max-iter", type=int, default=None),
        click.option("--fixed-iters", type=int, default=None,
                     help="Точно толкова итерации на компонент, без критерий за сходимост."),
        click.option("--path", type=click.Choice(PATHS), default=None),
        click.option("--workers", type=int, default=None),
        click.option("--orientation", type=click.Choice(ORIENTATIONS), default=None),
        click.option("--device-budget-bytes", "device_budget", type=int, default=None),
        click.option("--transfer-cost-ns-per-byte", "transfer_cost_ns_per_byte", type=float, default=None),
        click.option("--host-dir", type=click.Path(file_okay=False), default=None),
        click.option("--out-dir", type=click.Path(file_okay=False), default=None),
    ]):
        fn = option(fn)
    return fn


def _run_config(**flags):
    return RunConfig.from_app_config(current_app.config, **flags)


def _out_dir(out_dir):
    path = Path(out_dir or current_app.config["OUT_DIR"])
    path.mkdir(parents=True, exist_ok=True)
    return path


@click.command("gen")
@click.option("--kind", type=click.Choice(KINDS), default="dense", show_default=True)
@click.option("--rows", type=int, required=True)
@click.option("--cols", type=int, required=True)
@click.option("--density", type=float, default=1e-3, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True)
@with_appcontext
@handle_errors
def gen_command(kind, rows, cols, density, seed, out_path):
    """Генерира матрица: dense → .bin, sparse → Matrix Market."""
    a = _generate(kind, rows, cols, density, seed)
    path = write_matrix(out_path, a)
    current_app.logger.info("Generated %s %d×%d (seed=%d) → %s", kind, rows, cols, seed, path)
    click.echo(str(path))


@click.command("decompose")
@input_options
@run_options
@click.option("--batches", type=int, default=None, help="n_b")
@click.option("--queue-size", type=int, default=None, help="q_s")
@click.option("--metrics", "metrics_format", type=click.Choice(("json", "csv")), default="json",
              show_default=True)
@with_appcontext
@handle_errors
def decompose_command(input_path, gen, rows, cols, density, seed, out_dir, metrics_format, **flags):
    """Truncated SVD на входа; пише фактори и метрики в --out-dir."""
    a = _load_input(input_path, gen, rows, cols, density, seed or 0)
    config = _run_config(seed=seed, **flags)
    result = decompose(a, config)

    out = _out_dir(out_dir)
    write_factors(out, result.factors)
    if metrics_format == "csv":
        metrics_path = write_metrics_csv(out / "metrics.csv", [result.metrics])
    else:
        metrics_path = write_metrics_json(out / "metrics.json", result.metrics)

    summary = {
        "k": result.factors.k,
        "sigma": [float(s) for s in result.factors.sigma],
        "truncated": result.report.truncated,
        "degree": result.plan.assessment.degree,
        "out_dir": str(out),
        "metrics": str(metrics_path),
    }
    current_app.logger.info("Decompose finished: k=%d → %s", result.factors.k, out)
    click.echo(json.dumps(summary))


@click.command("bench")
@input_options
@run_options
@click.option("--sweep-batches", default="2,4,8,16", show_default=True, help="Списък n_b.")
@click.option("--sweep-queues", default="1,2,4,8", show_default=True, help="Списък q_s.")
@click.option("--sweep-workers", default=None,
              help="Списък N (напр. 1,2,4): scaling по rank-ове вместо n_b × q_s.")
@click.option("--scaling", type=click.Choice(SCALING_MODES), default="strong", show_default=True)
@click.option("--batches", type=int, default=None, help="n_b за scaling sweep-а")
@click.option("--queue-size", type=int, default=None, help="q_s за scaling sweep-а")
@with_appcontext
@handle_errors
def bench_command(input_path, gen, rows, cols, density, seed, out_dir, sweep_batches, sweep_queues,
                  sweep_workers, scaling, **flags):
    """Sweep по n_b × q_s (само q_s ≤ n_b) или по брой rank-ове (--sweep-workers) → bench.csv."""
    a = _load_input(input_path, gen, rows, cols, density, seed or 0)
    config = _run_config(seed=seed, **flags)
    if sweep_workers:
        rows_out = scaling_sweep(a, config, parse_int_list(sweep_workers, "--sweep-workers"), scaling)
    else:
        batches = parse_int_list(sweep_batches, "--sweep-batches")
        queues = parse_int_list(sweep_queues, "--sweep-queues")
        rows_out = sweep(a, config, batches, queues)
    path = write_metrics_csv(_out_dir(out_dir) / "bench.csv", rows_out)
    current_app.logger.info("Bench finished: %d rows → %s", len(rows_out), path)
    click.echo(str(path))


def init_commands(app):
    app.cli.add_command(gen_command)
    app.cli.add_command(decompose_command)
    app.cli.add_command(bench_command)
