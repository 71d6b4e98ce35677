"""Dataset ingestion and fold splitting.

A dataset is a directory with one subdirectory per artistic school,
each holding PNG/JPEG images.  Scanning produces an immutable manifest
(one record per decodable image, deterministic ordering) that the rest
of the pipeline operates on; splits are stratified at the image level
so all five patches of an image always share a fold.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import (
    ConfigurationError,
    DatasetLayoutError,
    DatasetRootError,
    LabelError,
    StratificationError,
)

IMAGE_EXTENSIONS = {".png", ".jpg", ".jpeg"}

MANIFEST_FORMAT = "dataset-manifest/1"


class ArtSchool(IntEnum):
    """The five school labels, with stable indices 0..4."""

    HERAT = 0
    QAJAR = 1
    SHIRAZ_E_AVVAL = 2
    TABRIZ_E_AVVAL = 3
    TABRIZ_E_DOVVOM = 4

    @property
    def display_name(self) -> str:
        return _DISPLAY_NAMES[self]

    @classmethod
    def from_name(cls, name: str) -> "ArtSchool":
        """Resolve a school from a folder or display name (case-insensitive,

        ignoring spaces, hyphens and underscores)."""
        key = _normalize_name(name)
        if key not in _NAME_TABLE:
            raise DatasetLayoutError(
                f"unknown school name {name!r}; expected one of "
                + ", ".join(s.display_name for s in cls)
            )
        return _NAME_TABLE[key]


_DISPLAY_NAMES = {
    ArtSchool.HERAT: "Herat",
    ArtSchool.QAJAR: "Qajar",
    ArtSchool.SHIRAZ_E_AVVAL: "Shiraz-e Avval",
    ArtSchool.TABRIZ_E_AVVAL: "Tabriz-e Avval",
    ArtSchool.TABRIZ_E_DOVVOM: "Tabriz-e Dovvom",
}


def _normalize_name(name: str) -> str:
    return "".join(ch for ch in name.lower() if ch not in " -_")


_NAME_TABLE = {_normalize_name(dn): school for school, dn in _DISPLAY_NAMES.items()}


@dataclass(frozen=True)
class ImageRecord:
    """One labeled source image. ``id`` is the path relative to the dataset

    root with separators normalized to ``/``."""

    id: str
    path: str
    label: ArtSchool
    width: int
    height: int


@dataclass(frozen=True)
class SkippedFile:
    """A file that looked like an image but could not be used."""

    path: str
    reason: str


@dataclass
class DatasetManifest:
    """The labeled corpus: records sorted by id, plus per-school counts."""

    root: str
    records: list[ImageRecord]
    counts: dict[ArtSchool, int]
    skipped: list[SkippedFile] = field(default_factory=list)

    @classmethod
    def build(
        cls,
        root: str,
        records: list[ImageRecord],
        skipped: list[SkippedFile] | None = None,
    ) -> "DatasetManifest":
        records = sorted(records, key=lambda r: r.id)
        ids = [r.id for r in records]
        if len(set(ids)) != len(ids):
            raise ConfigurationError("duplicate image ids in manifest")
        counts = {school: 0 for school in ArtSchool}
        for rec in records:
            counts[rec.label] += 1
        return cls(root=root, records=records, counts=counts, skipped=sorted(skipped or [], key=lambda s: s.path))

    def ids(self) -> list[str]:
        return [r.id for r in self.records]

    def by_id(self) -> dict[str, ImageRecord]:
        return {r.id: r for r in self.records}

    def to_json(self) -> dict:
        return {
            "format": MANIFEST_FORMAT,
            "root": self.root,
            "skipped": [{"path": s.path, "reason": s.reason} for s in self.skipped],
            "records": [
                {
                    "id": r.id,
                    "path": r.path,
                    "label": r.label.display_name,
                    "width": r.width,
                    "height": r.height,
                }
                for r in self.records
            ],
            "counts": {school.display_name: self.counts[school] for school in ArtSchool},
        }

    @classmethod
    def from_json(cls, doc: dict) -> "DatasetManifest":
        try:
            records = [
                ImageRecord(
                    id=r["id"],
                    path=r["path"],
                    label=ArtSchool.from_name(r["label"]),
                    width=int(r["width"]),
                    height=int(r["height"]),
                )
                for r in doc["records"]
            ]
            skipped = [SkippedFile(path=s["path"], reason=s["reason"]) for s in doc.get("skipped", [])]
            manifest = cls.build(root=doc["root"], records=records, skipped=skipped)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigurationError(f"malformed manifest document: {exc}") from exc
        stored = doc.get("counts", {})
        for school in ArtSchool:
            if school.display_name in stored and stored[school.display_name] != manifest.counts[school]:
                raise ConfigurationError(
                    f"manifest counts disagree with records for {school.display_name}"
                )
        return manifest

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "DatasetManifest":
        p = Path(path)
        if not p.is_file():
            raise ConfigurationError(f"manifest not found: {p}")
        return cls.from_json(json.loads(p.read_text(encoding="utf-8")))


def _probe_image(path: Path) -> tuple[int, int]:
    """Read (width, height) from the file header without decoding pixels."""
    with Image.open(path) as im:
        return im.size


def scan_dataset(root: str | Path) -> DatasetManifest:
    """Scan a class-per-folder image directory into a manifest.

    Subdirectories of ``root`` must each name one of the five schools
    (case-insensitive).  Undecodable or sub-2x2 images are recorded in
    ``skipped`` rather than silently dropped.
    """
    root_path = Path(root)
    if not root_path.is_dir():
        raise DatasetRootError(f"dataset root does not exist: {root_path}")
    class_dirs = sorted(p for p in root_path.iterdir() if p.is_dir())
    if not class_dirs:
        raise DatasetRootError(f"dataset root has no school subdirectories: {root_path}")

    unknown = [p.name for p in class_dirs if _normalize_name(p.name) not in _NAME_TABLE]
    if unknown:
        raise DatasetLayoutError(
            "subdirectories do not match any school: " + ", ".join(sorted(unknown))
        )

    records: list[ImageRecord] = []
    skipped: list[SkippedFile] = []
    for class_dir in class_dirs:
        label = ArtSchool.from_name(class_dir.name)
        for file in sorted(class_dir.rglob("*")):
            if not file.is_file() or file.suffix.lower() not in IMAGE_EXTENSIONS:
                continue
            rel = file.relative_to(root_path).as_posix()
            try:
                width, height = _probe_image(file)
            except (UnidentifiedImageError, OSError) as exc:
                skipped.append(SkippedFile(path=rel, reason=f"undecodable: {exc}"))
                continue
            if width < 2 or height < 2:
                skipped.append(SkippedFile(path=rel, reason=f"too small to patch: {width}x{height}"))
                continue
            records.append(
                ImageRecord(id=rel, path=str(root_path / rel), label=label, width=width, height=height)
            )
    return DatasetManifest.build(root=str(root_path), records=records, skipped=skipped)


@dataclass(frozen=True)
class FoldAssignment:
    """Train/test id sets for one cross-validation fold."""

    fold_index: int
    train_ids: frozenset[str]
    test_ids: frozenset[str]


def stratified_kfold(manifest: DatasetManifest, k: int, seed: int) -> list[FoldAssignment]:
    """Split the manifest into ``k`` image-disjoint, class-stratified folds.

    Per class, shuffled ids are dealt to folds so per-class test counts
    differ by at most 1 across folds; the classes' remainder slots rotate
    through the folds so overall fold sizes also stay within 1 of each
    other.  Pure function of (manifest, k, seed).
    """
    if k < 2:
        raise StratificationError(f"k must be at least 2, got {k}")
    for school in ArtSchool:
        if manifest.counts[school] < k:
            raise StratificationError(
                f"class {school.display_name} has {manifest.counts[school]} images, fewer than k={k}"
            )

    rng = np.random.default_rng(seed)
    test_sets: list[set[str]] = [set() for _ in range(k)]
    offset = 0
    for school in ArtSchool:
        ids = [r.id for r in manifest.records if r.label is school]
        perm = rng.permutation(len(ids))
        shuffled = [ids[i] for i in perm]
        base, extra = divmod(len(shuffled), k)
        sizes = [base] * k
        for j in range(extra):
            sizes[(offset + j) % k] += 1
        offset = (offset + extra) % k
        pos = 0
        for fold, size in enumerate(sizes):
            test_sets[fold].update(shuffled[pos : pos + size])
            pos += size

    all_ids = set(manifest.ids())
    return [
        FoldAssignment(
            fold_index=i,
            train_ids=frozenset(all_ids - test_sets[i]),
            test_ids=frozenset(test_sets[i]),
        )
        for i in range(k)
    ]


def one_hot(label: ArtSchool, num_classes: int) -> np.ndarray:
    """Encode a school label as a one-hot float32 vector.

    The encoding must have room for the full label space, so any
    ``num_classes`` below the number of schools is rejected.
    """
    if num_classes < len(ArtSchool) or label >= num_classes:
        raise LabelError(f"label index {int(label)} out of range for {num_classes} classes")
    vec = np.zeros(num_classes, dtype=np.float32)
    vec[int(label)] = 1.0
    return vec
