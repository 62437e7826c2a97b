"""MQTT edge IDS/IPS gateway with a fog-side retraining and model-update service."""

from .schema import ClassLabel, FEATURE_COLUMNS

__version__ = "0.1.0"
__all__ = ["ClassLabel", "FEATURE_COLUMNS", "__version__"]
