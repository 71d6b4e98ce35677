"""Disk-backed cache of pooled patch features.

One cache directory holds one subdirectory per backbone, each with a flat
``features.bin`` of little-endian float32 vectors and an ``index.json``
mapping (image_id, patch position) to (offset, length, checksum).  Entries
failing their checksum are dropped on load and re-extracted, and a store
written for one backbone is never visible under another backbone's name.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .backbone import FeatureExtractor
from .dataset import DatasetManifest
from .errors import DataError
from .patching import PatchPosition, PreprocSpec, load_image, make_patch_set

INDEX_FORMAT = "feature-cache/1"


@dataclass
class FeatureStore:
    """In-memory feature vectors keyed by (image_id, patch position)."""

    backbone_name: str
    feature_dim: int
    entries: dict[tuple[str, PatchPosition], np.ndarray] = field(default_factory=dict)
    skipped: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    def put(self, image_id: str, position: PatchPosition, vector: np.ndarray) -> None:
        if vector.shape != (self.feature_dim,):
            raise DataError(
                f"feature for ({image_id}, {position.name}) has shape {vector.shape}, "
                f"expected ({self.feature_dim},)"
            )
        self.entries[(image_id, position)] = np.asarray(vector, dtype=np.float32)

    def get(self, image_id: str, position: PatchPosition) -> np.ndarray:
        key = (image_id, position)
        if key not in self.entries:
            raise DataError(f"missing cached feature for ({image_id}, {position.name})")
        return self.entries[key]

    def has(self, image_id: str, position: PatchPosition) -> bool:
        return (image_id, position) in self.entries

    def _sorted_keys(self) -> list[tuple[str, PatchPosition]]:
        return sorted(self.entries, key=lambda k: (k[0], int(k[1])))

    def save(self, cache_dir: str | Path) -> Path:
        """Write ``features.bin`` + ``index.json`` under the backbone's

        subdirectory.  Deterministic: entries are laid out in sorted key
        order, so identical stores produce identical bytes."""
        store_dir = store_directory(cache_dir, self.backbone_name)
        store_dir.mkdir(parents=True, exist_ok=True)
        blob = bytearray()
        index_entries = []
        for image_id, position in self._sorted_keys():
            raw = self.entries[(image_id, position)].astype("<f4").tobytes()
            index_entries.append(
                {
                    "image_id": image_id,
                    "position": position.name,
                    "offset": len(blob),
                    "length": len(raw),
                    "checksum": zlib.crc32(raw),
                }
            )
            blob.extend(raw)
        (store_dir / "features.bin").write_bytes(bytes(blob))
        index = {
            "format": INDEX_FORMAT,
            "backbone": self.backbone_name,
            "feature_dim": self.feature_dim,
            "skipped": sorted(self.skipped),
            "entries": index_entries,
        }
        (store_dir / "index.json").write_text(
            json.dumps(index, indent=2, sort_keys=True), encoding="utf-8"
        )
        return store_dir

    @classmethod
    def load(cls, cache_dir: str | Path, backbone_name: str, feature_dim: int) -> "FeatureStore":
        """Read a store back, silently dropping corrupt or mismatched entries

        so they are re-extracted.  A missing or foreign-backbone cache loads
        as an empty store."""
        store = cls(backbone_name=backbone_name, feature_dim=feature_dim)
        store_dir = store_directory(cache_dir, backbone_name)
        index_path = store_dir / "index.json"
        bin_path = store_dir / "features.bin"
        if not index_path.is_file() or not bin_path.is_file():
            return store
        try:
            index = json.loads(index_path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError):
            return store
        if index.get("backbone") != backbone_name or index.get("feature_dim") != feature_dim:
            return store
        blob = bin_path.read_bytes()
        expected_len = feature_dim * 4
        for entry in index.get("entries", []):
            try:
                offset, length = int(entry["offset"]), int(entry["length"])
                position = PatchPosition[entry["position"]]
                image_id = entry["image_id"]
                checksum = int(entry["checksum"])
            except (KeyError, TypeError, ValueError):
                continue
            raw = blob[offset : offset + length]
            if length != expected_len or len(raw) != length or zlib.crc32(raw) != checksum:
                continue
            store.entries[(image_id, position)] = np.frombuffer(raw, dtype="<f4").copy()
        store.skipped = list(index.get("skipped", []))
        return store


def store_directory(cache_dir: str | Path, backbone_name: str) -> Path:
    safe = backbone_name.replace("/", "_").replace("\\", "_")
    return Path(cache_dir) / safe


def extract_dataset_features(
    manifest: DatasetManifest,
    extractor: FeatureExtractor,
    preproc: PreprocSpec,
    cache_dir: str | Path,
    progress=None,
) -> FeatureStore:
    """Ensure every (image, position) pair of the manifest has a cached

    feature vector, running inference only for the pairs that are missing.

    ``progress`` is an optional callable taking (done_images, total_images).
    Returns the complete store after persisting it to ``cache_dir``.
    """
    store = FeatureStore.load(cache_dir, extractor.name, extractor.feature_dim)
    store.skipped = []
    pending = [
        record
        for record in manifest.records
        if not all(store.has(record.id, pos) for pos in PatchPosition)
    ]
    total = len(pending)
    for done, record in enumerate(pending, start=1):
        try:
            image = load_image(record.path)
        except Exception:
            store.skipped.append(record.id)
            continue
        patch_set = make_patch_set(record, image, preproc)
        for position, tensor in patch_set.patches.items():
            if not store.has(record.id, position):
                store.put(record.id, position, extractor.extract(tensor))
        if progress is not None:
            progress(done, total)
    store.save(cache_dir)
    return store
