"""Combining the five per-patch prediction vectors into one decision.

Soft voting sums the five probability vectors elementwise; hard voting
first collapses each vector to a one-hot vote for its argmax.  Either
way the final class is the argmax of the summed scores, ties going to
the lowest class index.
"""

from __future__ import annotations

import numpy as np

from .errors import FusionError

PATCHES_PER_IMAGE = 5

FUSION_MODES = ("soft", "hard")


def fuse(patch_vectors, mode: str = "soft") -> np.ndarray:
    """Elementwise sum of exactly five prediction vectors.

    Per class, the five contributions are summed in a canonical (sorted)
    order, so the result is independent of the order the vectors are
    passed in, bit for bit.
    """
    if mode not in FUSION_MODES:
        raise FusionError(f"unknown fusion mode {mode!r}")
    vectors = [np.asarray(v, dtype=np.float64) for v in patch_vectors]
    if len(vectors) != PATCHES_PER_IMAGE:
        raise FusionError(f"expected {PATCHES_PER_IMAGE} patch vectors, got {len(vectors)}")
    length = vectors[0].shape
    if any(v.ndim != 1 for v in vectors) or any(v.shape != length for v in vectors):
        raise FusionError(f"patch vectors must be 1-D and equal-length, got {[v.shape for v in vectors]}")
    stacked = np.stack(vectors)
    if not np.isfinite(stacked).all():
        raise FusionError("patch vectors contain non-finite values")
    if mode == "hard":
        votes = np.zeros_like(stacked)
        votes[np.arange(PATCHES_PER_IMAGE), stacked.argmax(axis=1)] = 1.0
        stacked = votes
    return np.sort(stacked, axis=0).sum(axis=0)


def decide(score: np.ndarray) -> int:
    """Index of the highest fused score; ties break to the lowest index."""
    arr = np.asarray(score, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise FusionError(f"fused score must be a nonempty vector, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise FusionError("fused score contains non-finite values")
    return int(arr.argmax())
