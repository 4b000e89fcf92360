import logging
import os
import sys


def setup_logging(log_file="fertbandit.log", console_level=logging.INFO):
    """
    Sets up logging to file (overwritten on restart) and console.

    The console handler writes to stderr so command output on stdout stays
    machine-readable. Pass a falsy ``log_file`` to disable file logging.
    """
    logger = logging.getLogger()
    logger.setLevel(logging.DEBUG)

    # Clear existing handlers to avoid duplicates if called multiple times
    if logger.hasHandlers():
        logger.handlers.clear()

    formatter = logging.Formatter('%(asctime)s - %(name)s - %(levelname)s - %(message)s')

    if log_file:
        try:
            file_handler = logging.FileHandler(log_file, mode='w', encoding='utf-8')
            file_handler.setLevel(logging.DEBUG)
            file_handler.setFormatter(formatter)
            logger.addHandler(file_handler)
        except OSError as e:
            print(f"Failed to setup file logging: {e}", file=sys.stderr)
            log_file = None

    if isinstance(console_level, str):
        console_level = logging.getLevelName(console_level.upper())
        if not isinstance(console_level, int):
            console_level = logging.INFO

    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setLevel(console_level)
    console_handler.setFormatter(formatter)
    logger.addHandler(console_handler)

    if log_file:
        logging.info("Logging setup complete. Log file: %s", os.path.abspath(log_file))
    else:
        logging.debug("Logging setup complete (console only)")
