"""Shared fixtures: tiny on-disk datasets and synthetic feature stores."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from miniatures.dataset import ArtSchool, DatasetManifest, ImageRecord
from miniatures.features import FeatureStore
from miniatures.patching import PatchPosition

# Dominant color per school for generated images; far apart in RGB so the
# stub backbone's pooled colors stay linearly separable.
CLASS_COLORS = np.array(
    [
        [200, 60, 60],
        [60, 200, 60],
        [60, 60, 200],
        [210, 210, 60],
        [150, 60, 210],
    ],
    dtype=np.float64,
)


def make_class_image(rng: np.random.Generator, class_index: int, width: int, height: int) -> np.ndarray:
    """Class-colored image with per-quadrant color shifts and pixel noise.

    The quadrant shifts survive average pooling, so individual patches are
    occasionally ambiguous while the image as a whole stays recognizable.
    """
    base = CLASS_COLORS[class_index] + rng.normal(0.0, 10.0, size=3)
    img = np.tile(base, (height, width, 1))
    xs, ys = (width + 1) // 2, (height + 1) // 2
    quadrants = [
        (slice(0, ys), slice(0, xs)),
        (slice(0, ys), slice(xs, width)),
        (slice(ys, height), slice(0, xs)),
        (slice(ys, height), slice(xs, width)),
    ]
    for rows, cols in quadrants:
        img[rows, cols] += rng.normal(0.0, 38.0, size=3)
    img += rng.normal(0.0, 20.0, size=(height, width, 3))
    return np.clip(img, 0, 255).astype(np.uint8)


def write_synthetic_dataset(root: Path, images_per_class: int, seed: int) -> None:
    rng = np.random.default_rng(seed)
    for school in ArtSchool:
        class_dir = root / school.display_name
        class_dir.mkdir(parents=True)
        for i in range(images_per_class):
            width = int(rng.integers(90, 140))
            height = int(rng.integers(70, 120))
            img = make_class_image(rng, int(school), width, height)
            Image.fromarray(img).save(class_dir / f"img_{i:03d}.png")


@pytest.fixture(scope="session")
def desk_dataset_dir(tmp_path_factory) -> Path:
    """5 classes x 20 generated images, the desk-scale evaluation corpus."""
    root = tmp_path_factory.mktemp("desk_dataset") / "data"
    write_synthetic_dataset(root, images_per_class=20, seed=20260809)
    return root


@pytest.fixture(scope="session")
def tiny_dataset_dir(tmp_path_factory) -> Path:
    """5 classes x 2 images, for fast scan/CLI tests."""
    root = tmp_path_factory.mktemp("tiny_dataset") / "data"
    write_synthetic_dataset(root, images_per_class=2, seed=7)
    return root


def make_fake_manifest(counts: dict[ArtSchool, int], width: int = 64, height: int = 48) -> DatasetManifest:
    """In-memory manifest with no backing files (for fold/eval logic tests)."""
    records = []
    for school, n in counts.items():
        for i in range(n):
            rid = f"{school.name.lower()}/img_{i:04d}.png"
            records.append(
                ImageRecord(id=rid, path=f"/nonexistent/{rid}", label=school, width=width, height=height)
            )
    return DatasetManifest.build(root="/nonexistent", records=records)


def make_cluster_store(
    manifest: DatasetManifest, feature_dim: int, seed: int, center_scale: float = 5.0
) -> tuple[FeatureStore, np.ndarray]:
    """Feature store whose patch vectors are Gaussian clusters per class.

    Class centers sit at ``center_scale`` sigma along orthogonal feature
    axes (unit noise), so classes are cleanly separable.  Returns the
    store and the center matrix.
    """
    rng = np.random.default_rng(seed)
    centers = np.zeros((5, feature_dim))
    for i in range(5):
        centers[i, i] = center_scale
    store = FeatureStore(backbone_name=f"cluster-{seed}", feature_dim=feature_dim)
    for record in manifest.records:
        for position in PatchPosition:
            sample = centers[int(record.label)] + rng.standard_normal(feature_dim)
            store.put(record.id, position, sample.astype(np.float32))
    return store, centers
