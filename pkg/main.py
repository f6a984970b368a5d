"""
bspgru command line
Main entry point for the toolkit
"""
import click
from dotenv import load_dotenv
from flask.cli import FlaskGroup

# Load environment variables
load_dotenv()

from bspgru.toolkit import create_toolkit_app


@click.group(cls=FlaskGroup, create_app=create_toolkit_app, add_default_commands=False,
             add_version_option=False, load_dotenv=False)
def cli():
    """Prune GRU classifiers to block-structured sparsity and run them sparsely"""


if __name__ == "__main__":
    cli()
