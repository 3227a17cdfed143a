"""Onboard learned-compression pipeline, downlink mission accounting and scheduling."""
from .rans import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
