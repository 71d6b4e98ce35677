"""One-shot conversion of a pre-trained backbone into the pipeline's

serialized form: a model file (torch.export ``.pt2`` by default,
TorchScript or ONNX on request) plus the matching backbone-manifest JSON.

Every export run verifies itself: a deterministic fixture image is pushed
through the source model and through the freshly re-loaded exported file,
and pooled features must agree elementwise before the export is declared
good.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .archs import BuiltBackbone, build_backbone, pooled_features
from .errors import ExportError

INPUT_SIZE = (256, 256, 3)

MANIFEST_FORMAT = "backbone-manifest/1"

FORMATS = ("pt2", "torchscript", "onnx")

VERIFY_TOLERANCE = 1e-3


@dataclass(frozen=True)
class ExportSpec:
    architecture: str
    out_dir: str
    file_format: str = "pt2"
    pretrained: bool = True
    tolerance: float = VERIFY_TOLERANCE


@dataclass(frozen=True)
class ExportResult:
    model_path: Path
    manifest_path: Path
    feature_dim: int
    max_abs_diff: float


def fixture_image() -> np.ndarray:
    """Deterministic RGB test image: smooth gradients plus seeded texture."""
    height, width = 96, 128
    ys, xs = np.meshgrid(np.linspace(0.0, 1.0, height), np.linspace(0.0, 1.0, width), indexing="ij")
    channels = np.stack([ys * 255, xs * 255, (ys + xs) / 2 * 255], axis=2)
    noise = np.random.default_rng(1234).normal(0.0, 25.0, size=(height, width, 3))
    return np.clip(channels + noise, 0, 255).astype(np.uint8)


def fixture_batch(preproc: dict) -> torch.Tensor:
    """The fixture image resized and normalized the way the pipeline feeds

    patches: bilinear to 256x256, [0, 1] scaling, per-channel mean/std."""
    from PIL import Image

    resized = Image.fromarray(fixture_image()).resize(INPUT_SIZE[:2], Image.Resampling.BILINEAR)
    arr = np.asarray(resized, dtype=np.float32) / np.float32(255.0)
    arr = (arr - np.asarray(preproc["mean"], dtype=np.float32)) / np.asarray(
        preproc["std"], dtype=np.float32
    )
    return torch.from_numpy(arr.transpose(2, 0, 1)[None, ...])


def _serialize(built: BuiltBackbone, file_format: str, out_dir: Path) -> Path:
    example = torch.zeros(1, 3, *INPUT_SIZE[:2])
    if file_format == "pt2":
        path = out_dir / f"{built.name}.pt2"
        exported = torch.export.export(built.module, (example,))
        torch.export.save(exported, str(path))
        return path
    if file_format == "torchscript":
        path = out_dir / f"{built.name}.pt"
        with torch.no_grad():
            traced = torch.jit.trace(built.module, example)
        torch.jit.save(traced, str(path))
        return path
    if file_format == "onnx":
        try:
            import onnx  # noqa: F401  (torch.onnx.export needs it importable)
        except ImportError as exc:
            raise ExportError(
                "onnx export needs the onnx toolchain installed (pip install onnx onnxscript)"
            ) from exc
        path = out_dir / f"{built.name}.onnx"
        torch.onnx.export(built.module, example, str(path), dynamo=False)
        return path
    raise ExportError(f"unknown export format {file_format!r}; expected one of {FORMATS}")


def _load_exported(path: Path) -> torch.nn.Module:
    if path.suffix == ".pt2":
        return torch.export.load(str(path)).module()
    if path.suffix == ".pt":
        return torch.jit.load(str(path), map_location="cpu").eval()
    raise ExportError(f"cannot re-load {path} for verification in this environment")


def _verify(built: BuiltBackbone, model_path: Path, tolerance: float) -> float:
    """Source model vs freshly loaded export on the fixture image."""
    batch = fixture_batch(built.preproc)
    source = pooled_features(built.module, batch).numpy()[0]
    if source.shape[0] != built.feature_dim:
        raise ExportError(
            f"{built.name}: declared feature_dim {built.feature_dim} but the model "
            f"emits {source.shape[0]} channels"
        )
    reloaded = _load_exported(model_path)
    with torch.no_grad():
        fmap = reloaded(batch)
    exported = fmap.mean(dim=(2, 3)).numpy()[0]
    diff = float(np.abs(source - exported).max())
    if diff > tolerance:
        raise ExportError(
            f"{built.name}: exported file disagrees with the source model "
            f"(max abs diff {diff:.3e} > {tolerance:.1e})"
        )
    return diff


def export(spec: ExportSpec) -> ExportResult:
    """Build, serialize, verify, and describe one backbone."""
    if spec.file_format not in FORMATS:
        raise ExportError(f"unknown export format {spec.file_format!r}; expected one of {FORMATS}")
    built = build_backbone(spec.architecture, pretrained=spec.pretrained)
    out_dir = Path(spec.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    try:
        model_path = _serialize(built, spec.file_format, out_dir)
    except ExportError:
        raise
    except Exception as exc:
        raise ExportError(f"serialization of {built.name} failed: {exc}") from exc

    if spec.file_format == "onnx":
        # No ONNX runtime in this environment to re-load the file; exports
        # must be verified, so refuse rather than ship unchecked output.
        try:
            import onnxruntime  # noqa: F401
        except ImportError as exc:
            model_path.unlink(missing_ok=True)
            raise ExportError(
                f"{built.name}: cannot verify an onnx export without onnxruntime installed"
            ) from exc

    max_diff = _verify(built, model_path, spec.tolerance)

    manifest = {
        "format": MANIFEST_FORMAT,
        "name": built.name,
        "model_path": model_path.name,
        "input_size": list(INPUT_SIZE),
        "feature_dim": built.feature_dim,
        "preproc": built.preproc,
    }
    manifest_path = out_dir / f"{built.name}.manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
    return ExportResult(
        model_path=model_path,
        manifest_path=manifest_path,
        feature_dim=built.feature_dim,
        max_abs_diff=max_diff,
    )
