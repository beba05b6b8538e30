"""
CP-Net - contour-perturbed self-supervised pre-training for point clouds.

Entry point: configures logging from the run config and dispatches one
command (gen, decompose, perturb, pretrain, probe, features, gradcheck,
ablate).
"""

import os
import sys

from loguru import logger

from src.cli.commands import run
from src.config.config_loader import ConfigLoader


def _setup_logging(config: ConfigLoader) -> None:
    """Route loguru to stderr and to the rotating run log named by log_file."""
    log_level = config.get('log_level', 'INFO')
    log_file = config.get('log_file', './logs/cpnet.log')

    # the run log may sit in a directory no command has created yet
    if os.path.dirname(log_file):
        os.makedirs(os.path.dirname(log_file), exist_ok=True)

    logger.remove()
    logger.add(
        sys.stderr,
        level=log_level,
        format="<green>{time:YYYY-MM-DD HH:mm:ss}</green> | <level>{level: <8}</level> | <cyan>{name}</cyan>:<cyan>{function}</cyan> - <level>{message}</level>"
    )
    logger.add(
        log_file,
        rotation=config.get('log_rotation', '10 MB'),
        retention=config.get('log_retention', 5),
        level=log_level
    )


def main() -> int:
    """Run the command named on the command line."""
    return run(sys.argv[1:], configure_logging=_setup_logging)


if __name__ == "__main__":
    sys.exit(main())
