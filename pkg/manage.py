#!/usr/bin/env python3
"""
Vortex bubble lab - command-line entry point

Configures logging and runs the click command group, turning lab errors into
process exit codes (0 success, 2 invalid input, 3 solver failure,
4 theory violation).

Usage:
    python manage.py run scenarios/single_bubble.toml       Run every stage
    python manage.py sweep scenarios/single_bubble.toml     KW adiabatic sweep only
    python manage.py tree scenarios/two_scale.toml          Bubble tree only
    python manage.py holonomy --beta 0.25                   Classify a conic model
    python manage.py schema --out schemas_out               Write the JSON schemas

Example:
    python manage.py --threads 4 run scenarios/two_scale.toml --out output/two_scale --excel
"""

import logging
import sys
from typing import List, Optional

import click

import app_config
from cli import cli
from errors import VortexLabError

logger = logging.getLogger(__name__)


def setup_logging(level: str = app_config.LOG_LEVEL, log_file: str = app_config.LOG_FILE) -> None:
    """File plus console logging for every module."""
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=[
            logging.FileHandler(log_file),
            logging.StreamHandler()
        ]
    )


def main(argv: Optional[List[str]] = None) -> int:
    """Main function to handle command-line arguments."""
    setup_logging()
    try:
        code = cli.main(args=argv, prog_name="vortexlab", standalone_mode=False)
    except click.exceptions.Abort:
        logger.error("Aborted")
        return 1
    except click.ClickException as e:
        e.show()
        return 2
    except VortexLabError as e:
        logger.error(f"{type(e).__name__}: {str(e)}")
        return e.exit_code
    return code if isinstance(code, int) else 0


if __name__ == "__main__":
    sys.exit(main())
