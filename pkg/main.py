#!/usr/bin/env python3
"""
Traffic Autocalib - Main Entry Point
"""

import sys
from loguru import logger
from src.cli import build_parser, execute
from src.utils.paths import get_log_path


def main() -> None:
    """Parse the command line, configure logging and run the command."""
    args = build_parser().parse_args()

    # Configure Loguru
    logger.remove()  # Remove default stderr handler
    logger.add(sys.stderr, level=args.log_level.upper())
    logger.add(get_log_path(), rotation="10 MB", level="DEBUG")

    try:
        logger.info(f"Running {args.command}...")
        code = execute(args)
    except Exception as e:
        logger.exception(f"Unhandled error in {args.command}: {e}")
        sys.exit(1)
    logger.info(f"{args.command} finished with exit code {code}")
    sys.exit(code)


if __name__ == "__main__":
    main()
