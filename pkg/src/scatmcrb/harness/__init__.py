"""Command-line harness: configuration, experiment drivers and CSV output."""

from .config import RunConfig, parse_config
from .cli import main

__all__ = ["RunConfig", "parse_config", "main"]
