class ExportError(Exception):
    """Export failed: unknown architecture, missing weights, serialization

    problems, or a source-vs-exported verification mismatch."""
