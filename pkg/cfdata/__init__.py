#!/usr/bin/env python3
"""cfdata: makes car-following datasets from trajectory scenes"""

from . import (  # noqa: F401
    api,
    assess,
    cli,
    enhance,
    ingest,
    pipeline,
    regime,
    select,
    synth,
    trajkit,
    utils,
)
from .api import *  # noqa: F401,F403
from .trajkit import *  # noqa: F401,F403
from .utils import *  # noqa: F401,F403

__version__ = "0.1"
__license__ = "public domain"
