import logging
import os
import sys

import numpy as np

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def setup_logging(level: str = None):
    """Configure root logging from WAFERSSL_LOG_LEVEL (default INFO)."""
    level = (level or os.getenv("WAFERSSL_LOG_LEVEL", "INFO")).upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO), format=LOG_FORMAT)


def derive_seed(*keys: int) -> int:
    """
    Derive an independent 32-bit seed from a tuple of integer keys.

    Args:
        keys: root seed followed by any number of stream identifiers
              (epoch, step, record slot, ...)

    Returns:
        int: seed suitable for numpy.random.default_rng / torch.Generator
    """
    # the key count goes first so trailing zero keys still change the seed
    entropy = [len(keys)] + [int(k) & 0xFFFFFFFF for k in keys]
    return int(np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint32)[0])


def progress_disabled() -> bool:
    """Progress bars are off when stderr is not a terminal or WAFERSSL_NO_PROGRESS is set."""
    return bool(os.getenv("WAFERSSL_NO_PROGRESS")) or not sys.stderr.isatty()
