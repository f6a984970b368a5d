"""
Command-line verbs, grouped into blueprints the toolkit app registers
"""
import os
import sys
import json
import functools

import click

from ..utils.config_utils import default_workers
from ..utils.errors import ConfigError, MissingFileError, ToolkitError
from ..utils.logging_utils import log_event


def fail(error):
    """Report a ToolkitError as one JSON line on stderr and exit with its code"""
    record = error.to_record()
    log_event("command_failed", error.message, "error", record)
    click.echo(json.dumps(record, sort_keys=True, default=str), err=True)
    sys.exit(error.exit_code)


def handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ToolkitError as e:
            fail(e)
        except FileNotFoundError as e:
            fail(MissingFileError(f"File not found: {e.filename}", path=str(e.filename)))
    return wrapper


def run_options(fn):
    """--config, --seed and --out, shared by every verb that works in a run directory"""
    fn = click.option('--out', 'out_dir', type=click.Path(file_okay=False), default=None,
                      help='Run directory (defaults to the config out_dir)')(fn)
    fn = click.option('--seed', type=int, default=None, help='Top-level seed override')(fn)
    fn = click.option('--config', 'config_path', type=click.Path(dir_okay=False), default=None,
                      help='JSON run configuration')(fn)
    return fn


def emit(result):
    """One JSON summary line on stdout"""
    click.echo(json.dumps(result, sort_keys=True, default=str))


def resolve_workers(flag, config):
    """--workers, then BSPGRU_WORKERS, then the config's bench.workers"""
    if flag is not None:
        if flag < 1:
            raise ConfigError("--workers must be at least 1", workers=flag)
        return flag
    if os.getenv("BSPGRU_WORKERS"):
        return default_workers()
    return config.bench.workers
