"""Steady periodic channel flow with a body force: laminar family, linearisation and bifurcating branch."""

from .model import REFERENCE, BodyForceModel, ConfigurationError, ModelParams

__version__ = "0.1.0"
__all__ = ["REFERENCE", "BodyForceModel", "ConfigurationError", "ModelParams", "__version__"]
