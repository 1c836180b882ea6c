"""HTTP service wrapping the segmentation/morphometry/classification engine."""

from .app import create_app, register_model  # noqa: F401
from .config import ServiceConfig, load_config  # noqa: F401
from .store import ObjectStore  # noqa: F401
