"""Exception hierarchy with stable diagnostic codes.

Every error carries a machine-readable ``code`` (e.g. ``E_DATASET_ROOT``)
that the CLI prints on stderr, plus the exit code class it maps to:
2 for input/configuration problems, 3 for model/backbone problems,
4 for evaluation failures.
"""

from __future__ import annotations


class MiniaturesError(Exception):
    """Base class for all errors raised by this package."""

    code = "E_INTERNAL"
    exit_code = 1


class ConfigurationError(MiniaturesError):
    """Bad invocation: missing paths, malformed config values."""

    code = "E_CONFIG"
    exit_code = 2


class DatasetRootError(ConfigurationError):
    """Dataset root directory missing or empty."""

    code = "E_DATASET_ROOT"


class DatasetLayoutError(ConfigurationError):
    """A subdirectory of the dataset root does not name a known school."""

    code = "E_LAYOUT"


class LabelError(ConfigurationError):
    """A label index is out of range for the requested encoding."""

    code = "E_LABEL"


class StratificationError(MiniaturesError):
    """Fold request cannot be satisfied (k too small/large for the data)."""

    code = "E_STRATIFY"
    exit_code = 4


class GeometryError(ConfigurationError):
    """Patch rectangle outside image bounds or image too small to patch."""

    code = "E_GEOMETRY"


class ModelLoadError(MiniaturesError):
    """A serialized backbone could not be loaded."""

    code = "E_MODEL_LOAD"
    exit_code = 3


class ManifestError(MiniaturesError):
    """Backbone manifest inconsistent with the model it describes."""

    code = "E_MANIFEST"
    exit_code = 3


class ExtractionError(MiniaturesError):
    """Backbone inference failed; carries backend diagnostics in the message."""

    code = "E_EXTRACT"
    exit_code = 3


class ShapeError(MiniaturesError):
    """Array dimensions inconsistent with the head's parameter shapes."""

    code = "E_SHAPE"
    exit_code = 4


class DataError(MiniaturesError):
    """A required feature-store entry is missing."""

    code = "E_DATA"
    exit_code = 4


class FusionError(MiniaturesError):
    """Patch-vector fusion given a malformed input."""

    code = "E_FUSION"
    exit_code = 4


class MetricError(MiniaturesError):
    """A metric was asked to operate on degenerate input."""

    code = "E_METRIC"
    exit_code = 4


class CheckpointError(MiniaturesError):
    """Head checkpoint file malformed or incompatible."""

    code = "E_CHECKPOINT"
    exit_code = 3
