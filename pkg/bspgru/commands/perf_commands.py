"""
Performance verbs: bench, tune, report and events
"""
import click
from flask import Blueprint, current_app

from . import emit, handle_errors, resolve_workers, run_options

perf_bp = Blueprint('perf', __name__, cli_group=None)


def _services():
    return current_app.config['RUN_SERVICE'], current_app.config['PERFORMANCE_SERVICE']


@perf_bp.cli.command('bench')
@run_options
@click.option('--model', 'model_dir', type=click.Path(file_okay=False), default=None,
              help='BSPC model directory (defaults to <out>/model)')
@click.option('--checkpoint', type=click.Path(dir_okay=False), default=None,
              help='Dense checkpoint for the baseline (defaults to <out>/checkpoint.grup)')
@click.option('--reps', type=int, default=None)
@click.option('--workers', type=int, default=None)
@handle_errors
def bench_command(config_path, seed, out_dir, model_dir, checkpoint, reps, workers):
    """Time dense and sparse GRU inference"""
    runs, perf = _services()
    config = runs.resolve_config(config_path, seed, out_dir)
    emit(perf.bench(config, model_dir, checkpoint, reps, resolve_workers(workers, config)))


@perf_bp.cli.command('tune')
@run_options
@click.option('--checkpoint', type=click.Path(dir_okay=False), default=None,
              help='Dense checkpoint (defaults to <out>/checkpoint.grup)')
@click.option('--lam', type=float, default=None, help='Weight of normalized time in the score')
@click.option('--reps', type=int, default=None)
@handle_errors
def tune_command(config_path, seed, out_dir, checkpoint, lam, reps):
    """Search block partitions and execution parameters"""
    runs, perf = _services()
    emit(perf.tune(runs.resolve_config(config_path, seed, out_dir), checkpoint, lam, reps))


@perf_bp.cli.command('report')
@click.argument('run_dirs', nargs=-1, type=click.Path(file_okay=False))
@click.option('--out', 'out_dir', type=click.Path(file_okay=False), default=None,
              help='Where summary.csv and summary.txt go (defaults to the single run directory)')
@handle_errors
def report_command(run_dirs, out_dir):
    """Compression rate vs accuracy vs speedup over one or more runs"""
    _, perf = _services()
    emit(perf.report(run_dirs, out_dir))


@perf_bp.cli.command('events')
@click.option('--hours', type=float, default=24.0, help='How far back to look')
@click.option('--limit', type=int, default=50)
@click.option('--type', 'event_type', default=None, help='Only this event_type, e.g. train_done')
@handle_errors
def events_command(hours, limit, event_type):
    """Recent records from the JSON event log"""
    _, perf = _services()
    emit(perf.events(hours, limit, event_type))
