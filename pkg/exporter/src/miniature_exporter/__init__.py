"""Backbone exporter: converts pre-trained convolutional networks into the

serialized, truncated-at-the-feature-map form the classification pipeline
loads as frozen feature extractors, with built-in numerical verification.
"""

from .archs import SUPPORTED_ARCHITECTURES, build_backbone, pooled_features
from .errors import ExportError
from .export import ExportResult, ExportSpec, export, fixture_image

__version__ = "0.1.0"
