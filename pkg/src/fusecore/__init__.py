"""Desk-scale video event reasoning: a frozen video encoder, a query-based
fusion core and a small decoder language model, trained in stages on a
synthetic micro-world corpus."""
from .config import Config, load_config, load_preset
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "Config", "load_config", "load_preset", "__version__"]
