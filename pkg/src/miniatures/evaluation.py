"""Cross-validation protocol and the metrics it reports.

Each fold trains a fresh head on the training images' patches, then
scores patch-level accuracy over all test patches and fused accuracy
over test images, with training-side counterparts.  Aggregation keeps
per-fold values, their means, coefficients of variation (population
standard deviation, as percentages), and fold-averaged row-normalized
confusion matrices.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .dataset import ArtSchool, DatasetManifest, stratified_kfold
from .errors import MetricError, MiniaturesError
from .features import FeatureStore
from .fusion import decide, fuse
from .head import HeadParams, TrainConfig, predict_proba, train
from .patching import NUM_CLASSES, PatchPosition

REPORT_FORMAT = "eval-report/1"

ACCURACY_METRICS = ("patch_train_acc", "patch_test_acc", "fused_train_acc", "fused_test_acc")


def accuracy(predictions, truth) -> float:
    """Fraction of positions where prediction equals truth."""
    preds = list(predictions)
    actual = list(truth)
    if len(preds) != len(actual):
        raise MetricError(f"length mismatch: {len(preds)} predictions vs {len(actual)} truths")
    if not preds:
        raise MetricError("cannot compute accuracy of an empty prediction list")
    hits = sum(1 for p, t in zip(preds, actual) if p == t)
    return hits / len(preds)


def coefficient_of_variation(values) -> float:
    """100 * population standard deviation / mean; requires n >= 2, mean > 0."""
    arr = np.asarray(list(values), dtype=np.float64)
    if arr.size < 2:
        raise MetricError(f"coefficient of variation needs at least 2 values, got {arr.size}")
    mean = arr.mean()
    if mean <= 0:
        raise MetricError(f"coefficient of variation needs a positive mean, got {mean}")
    return float(100.0 * arr.std(ddof=0) / mean)


def confusion_matrix(predictions, truth, num_classes: int) -> np.ndarray:
    """Count matrix with rows indexed by true class, columns by prediction."""
    preds = np.asarray(list(predictions), dtype=np.int64)
    actual = np.asarray(list(truth), dtype=np.int64)
    if preds.shape != actual.shape:
        raise MetricError(f"length mismatch: {preds.shape} predictions vs {actual.shape} truths")
    if preds.size and (
        preds.min() < 0 or preds.max() >= num_classes or actual.min() < 0 or actual.max() >= num_classes
    ):
        raise MetricError(f"class index out of range for {num_classes} classes")
    matrix = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(matrix, (actual, preds), 1)
    return matrix


def normalize_and_average(matrices) -> np.ndarray:
    """Row-normalize each count matrix, then average elementwise over folds.

    A row that is all-zero in some fold is excluded from that row's mean
    (with a warning); a row empty in every fold is an error.
    """
    mats = [np.asarray(m, dtype=np.float64) for m in matrices]
    if not mats:
        raise MetricError("no confusion matrices to average")
    shape = mats[0].shape
    if any(m.shape != shape for m in mats) or shape[0] != shape[1]:
        raise MetricError(f"confusion matrices must share a square shape, got {[m.shape for m in mats]}")
    k = shape[0]
    out = np.zeros((k, k), dtype=np.float64)
    for row in range(k):
        contributions = []
        for fold, m in enumerate(mats):
            total = m[row].sum()
            if total > 0:
                contributions.append(m[row] / total)
            else:
                warnings.warn(f"fold {fold} has no items of class {row}; row excluded from mean")
        if not contributions:
            raise MetricError(f"class {row} has no items in any fold")
        out[row] = np.mean(contributions, axis=0)
    return out


@dataclass
class FoldResult:
    """Accuracies and test-side confusion counts for one fold."""

    fold_index: int
    patch_train_acc: float
    patch_test_acc: float
    fused_train_acc: float
    fused_test_acc: float
    patch_confusion: np.ndarray
    fused_confusion: np.ndarray


@dataclass
class EvalReport:
    """Everything the protocol measured, plus the fingerprint that makes

    the numbers reproducible (backbone, seeds, fusion mode)."""

    folds: list[FoldResult]
    means: dict[str, float]
    cvs_percent: dict[str, float]
    patch_confusion_mean: np.ndarray
    fused_confusion_mean: np.ndarray
    fingerprint: dict

    def to_json(self) -> dict:
        return {
            "format": REPORT_FORMAT,
            "fingerprint": self.fingerprint,
            "folds": [
                {
                    "fold_index": f.fold_index,
                    "patch_train_acc": f.patch_train_acc,
                    "patch_test_acc": f.patch_test_acc,
                    "fused_train_acc": f.fused_train_acc,
                    "fused_test_acc": f.fused_test_acc,
                    "patch_confusion": f.patch_confusion.tolist(),
                    "fused_confusion": f.fused_confusion.tolist(),
                }
                for f in self.folds
            ],
            "means": self.means,
            "cvs_percent": self.cvs_percent,
            "patch_confusion_mean": self.patch_confusion_mean.tolist(),
            "fused_confusion_mean": self.fused_confusion_mean.tolist(),
            "class_names": [s.display_name for s in ArtSchool],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "EvalReport":
        folds = [
            FoldResult(
                fold_index=f["fold_index"],
                patch_train_acc=f["patch_train_acc"],
                patch_test_acc=f["patch_test_acc"],
                fused_train_acc=f["fused_train_acc"],
                fused_test_acc=f["fused_test_acc"],
                patch_confusion=np.asarray(f["patch_confusion"], dtype=np.int64),
                fused_confusion=np.asarray(f["fused_confusion"], dtype=np.int64),
            )
            for f in doc["folds"]
        ]
        return cls(
            folds=folds,
            means=doc["means"],
            cvs_percent=doc["cvs_percent"],
            patch_confusion_mean=np.asarray(doc["patch_confusion_mean"], dtype=np.float64),
            fused_confusion_mean=np.asarray(doc["fused_confusion_mean"], dtype=np.float64),
            fingerprint=doc["fingerprint"],
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "EvalReport":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def write_confusion_csv(matrix: np.ndarray, path: str | Path) -> None:
    """CSV rendering of a confusion matrix, one row per true class."""
    names = [s.display_name for s in ArtSchool]
    lines = ["true\\predicted," + ",".join(names)]
    for i, row in enumerate(np.asarray(matrix)):
        cells = ",".join(str(v) if isinstance(v, (int, np.integer)) else f"{v:.6f}" for v in row)
        lines.append(f"{names[i]},{cells}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _aggregate(folds: list[FoldResult]) -> tuple[dict[str, float], dict[str, float]]:
    means, cvs = {}, {}
    for metric in ACCURACY_METRICS:
        values = [getattr(f, metric) for f in folds]
        means[metric] = float(np.mean(values))
        cvs[metric] = coefficient_of_variation(values)
    return means, cvs


def _evaluate_split(
    params: HeadParams, store: FeatureStore, labels: dict[str, int], image_ids, fusion_mode: str
) -> tuple[list[int], list[int], list[int], list[int]]:
    """Patch-level and fused predictions (with truths) over a set of images."""
    patch_preds, patch_truth = [], []
    fused_preds, fused_truth = [], []
    for image_id in sorted(image_ids):
        label = int(labels[image_id])
        per_patch = []
        for position in PatchPosition:
            probs = predict_proba(params, store.get(image_id, position))
            per_patch.append(probs)
            patch_preds.append(int(probs.argmax()))
            patch_truth.append(label)
        fused_preds.append(decide(fuse(per_patch, mode=fusion_mode)))
        fused_truth.append(label)
    return patch_preds, patch_truth, fused_preds, fused_truth


def run_cross_validation(
    manifest: DatasetManifest,
    store: FeatureStore,
    train_config: TrainConfig,
    fusion_mode: str = "soft",
    k: int = 5,
    seed: int = 0,
) -> EvalReport:
    """Run the full k-fold protocol over cached features.

    Fold splits come from ``seed``; fold i trains with
    ``train_config.seed + i`` so folds are independently seeded.  Any
    failure is re-raised with the fold index in the message.
    """
    folds = stratified_kfold(manifest, k=k, seed=seed)
    labels = {r.id: int(r.label) for r in manifest.records}

    results: list[FoldResult] = []
    for fold in folds:
        try:
            fold_config = replace(train_config, seed=train_config.seed + fold.fold_index)
            params, _ = train(store, labels, fold.train_ids, fold_config)
            tr_patch_preds, tr_patch_truth, tr_fused_preds, tr_fused_truth = _evaluate_split(
                params, store, labels, fold.train_ids, fusion_mode
            )
            te_patch_preds, te_patch_truth, te_fused_preds, te_fused_truth = _evaluate_split(
                params, store, labels, fold.test_ids, fusion_mode
            )
        except MiniaturesError as exc:
            raise type(exc)(f"fold {fold.fold_index}: {exc}") from exc
        results.append(
            FoldResult(
                fold_index=fold.fold_index,
                patch_train_acc=accuracy(tr_patch_preds, tr_patch_truth),
                patch_test_acc=accuracy(te_patch_preds, te_patch_truth),
                fused_train_acc=accuracy(tr_fused_preds, tr_fused_truth),
                fused_test_acc=accuracy(te_fused_preds, te_fused_truth),
                patch_confusion=confusion_matrix(te_patch_preds, te_patch_truth, NUM_CLASSES),
                fused_confusion=confusion_matrix(te_fused_preds, te_fused_truth, NUM_CLASSES),
            )
        )

    means, cvs = _aggregate(results)
    return EvalReport(
        folds=results,
        means=means,
        cvs_percent=cvs,
        patch_confusion_mean=normalize_and_average([f.patch_confusion for f in results]),
        fused_confusion_mean=normalize_and_average([f.fused_confusion for f in results]),
        fingerprint={
            "backbone": store.backbone_name,
            "feature_dim": store.feature_dim,
            "fusion_mode": fusion_mode,
            "k": k,
            "fold_seed": seed,
            "train_seed": train_config.seed,
            "batch_size": train_config.batch_size,
            "epochs": train_config.epochs,
            "dropout_rate": train_config.dropout_rate,
            "learning_rate": train_config.learning_rate,
            "optimizer": train_config.optimizer,
        },
    )
