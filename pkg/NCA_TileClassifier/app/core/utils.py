# app/core/utils.py
import logging
from datetime import datetime, timezone

import numpy as np

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s %(message)s"

# Independent random streams derived from one user seed
STREAM_INIT = 0
STREAM_TRAIN = 1
STREAM_LISTING1 = 2
STREAM_FIRMWARE = 3

def get_utc_timestamp() -> str:
    """Return timezone-aware UTC timestamp."""
    return datetime.now(timezone.utc).isoformat()

def configure_logging(level: str = "INFO") -> None:
    """Install the root handler once; later calls only adjust the level."""
    root = logging.getLogger()
    if not root.handlers:
        logging.basicConfig(level=level.upper(), format=LOG_FORMAT)
    root.setLevel(level.upper())

def make_rng(seed: int, stream: int = STREAM_INIT) -> np.random.Generator:
    """Seeded generator for one named stream; every random draw goes through one of these."""
    return np.random.default_rng([int(stream), int(seed) & 0xFFFFFFFFFFFFFFFF])
