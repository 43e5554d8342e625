"""
Logging configuration shared by the CLI, the trainer and the verification scripts.
"""
import os
import sys
import logging
from typing import Optional

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


def setup_logging(run_dir: Optional[str] = None, level: int = logging.INFO) -> logging.Logger:
    """
    Set up the 'Cascade' logger hierarchy.

    Diagnostics always go to standard error; when a run directory is given a
    copy is written to cascade.log inside it.

    Args:
        run_dir: Optional output directory for the log file
        level: Logging level for the root Cascade logger

    Returns:
        The root 'Cascade' logger
    """
    root = logging.getLogger('Cascade')
    root.setLevel(level)
    for handler in list(root.handlers):
        root.removeHandler(handler)
        handler.close()

    formatter = logging.Formatter(LOG_FORMAT)

    stream_handler = logging.StreamHandler(sys.stderr)
    stream_handler.setFormatter(formatter)
    root.addHandler(stream_handler)

    if run_dir:
        os.makedirs(run_dir, exist_ok=True)
        file_handler = logging.FileHandler(os.path.join(run_dir, 'cascade.log'))
        file_handler.setFormatter(formatter)
        root.addHandler(file_handler)

    root.propagate = False
    return root
