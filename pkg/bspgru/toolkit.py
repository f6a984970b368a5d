"""
Toolkit application: service registry and command blueprints
"""
from flask import Flask

from .commands.perf_commands import perf_bp
from .commands.pipeline_commands import pipeline_bp
from .services.performance_service import PerformanceService
from .services.pipeline_service import PipelineService
from .services.run_service import RunService
from .utils.logging_utils import debug_print, events_file, is_debug, setup_logging


def create_toolkit_app(overrides=None):
    """Create the toolkit application"""
    setup_logging()
    app = Flask(__name__)

    app.config['DEBUG'] = is_debug()

    # Services share one run-directory service
    run_service = RunService()
    app.config['RUN_SERVICE'] = run_service
    app.config['PIPELINE_SERVICE'] = PipelineService(run_service)
    app.config['PERFORMANCE_SERVICE'] = PerformanceService(run_service)
    app.config.update(overrides or {})

    app.register_blueprint(pipeline_bp)
    app.register_blueprint(perf_bp)
    debug_print(f"Toolkit app created; events go to {events_file()}")
    return app
