"""
Pipeline verbs: generate, train, prune, pack and infer
"""
import click
from flask import Blueprint, current_app

from . import emit, handle_errors, resolve_workers, run_options

pipeline_bp = Blueprint('pipeline', __name__, cli_group=None)


def _services():
    return current_app.config['RUN_SERVICE'], current_app.config['PIPELINE_SERVICE']


@pipeline_bp.cli.command('generate')
@run_options
@handle_errors
def generate_command(config_path, seed, out_dir):
    """Write the run config and the synthetic train/test dataset"""
    runs, pipeline = _services()
    emit(pipeline.generate(runs.resolve_config(config_path, seed, out_dir)))


@pipeline_bp.cli.command('train')
@run_options
@click.option('--epochs', type=int, default=None, help='Override train.epochs')
@handle_errors
def train_command(config_path, seed, out_dir, epochs):
    """Train the dense GRU classifier"""
    runs, pipeline = _services()
    emit(pipeline.train(runs.resolve_config(config_path, seed, out_dir), epochs))


@pipeline_bp.cli.command('prune')
@run_options
@click.option('--checkpoint', type=click.Path(dir_okay=False), default=None,
              help='Dense checkpoint (defaults to <out>/checkpoint.grup)')
@click.option('--col-rate', type=float, default=None)
@click.option('--row-rate', type=float, default=None)
@click.option('--num-r', type=int, default=None)
@click.option('--num-c', type=int, default=None)
@handle_errors
def prune_command(config_path, seed, out_dir, checkpoint, col_rate, row_rate, num_r, num_c):
    """Block-based structured pruning of the six GRU weight matrices"""
    runs, pipeline = _services()
    config = runs.resolve_config(config_path, seed, out_dir)
    emit(pipeline.prune(config, checkpoint, col_rate=col_rate, row_rate=row_rate, num_r=num_r, num_c=num_c))


@pipeline_bp.cli.command('pack')
@run_options
@click.option('--checkpoint', type=click.Path(dir_okay=False), default=None,
              help='Pruned checkpoint (defaults to <out>/pruned.grup)')
@click.option('--masks', 'masks_path', type=click.Path(dir_okay=False), default=None,
              help='Mask file (defaults to <out>/masks.bspm)')
@click.option('--tile', type=int, default=32, help='Rows per tile')
@click.option('--unroll', type=int, default=1, help='Tiles per work item')
@click.option('--workers', type=int, default=None)
@handle_errors
def pack_command(config_path, seed, out_dir, checkpoint, masks_path, tile, unroll, workers):
    """Encode the pruned weights as BSPC files under <out>/model"""
    runs, pipeline = _services()
    config = runs.resolve_config(config_path, seed, out_dir)
    emit(pipeline.pack(config, checkpoint, masks_path, tile, unroll, resolve_workers(workers, config)))


@pipeline_bp.cli.command('infer')
@run_options
@click.option('--model', 'model_dir', type=click.Path(file_okay=False), default=None,
              help='BSPC model directory (defaults to <out>/model)')
@click.option('--input', 'input_path', type=click.Path(dir_okay=False), default=None,
              help='npz with xs (and labels), or a saved dataset (defaults to <out>/dataset.npz)')
@click.option('--verify', is_flag=True, help='Check every output against the dense masked weights')
@click.option('--workers', type=int, default=None)
@handle_errors
def infer_command(config_path, seed, out_dir, model_dir, input_path, verify, workers):
    """Classify sequences with the sparse GRU"""
    runs, pipeline = _services()
    config = runs.resolve_config(config_path, seed, out_dir)
    emit(pipeline.infer(config, model_dir, input_path, verify, resolve_workers(workers, config)))
