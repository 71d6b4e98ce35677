"""Frozen feature extractors behind a single interface.

Three implementations: a deterministic stub for offline testing, a torch
adapter for ``.pt2`` (torch.export) and TorchScript files, and an ONNX
adapter (used when an ONNX runtime is installed).  All of them emit one
pooled float32 vector per patch:
the backbone's final spatial feature map is reduced by global average
pooling inside ``extract``, so caches store compact vectors.

No code path here mutates model weights; the adapters load in inference
mode and expose no write access.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, ExtractionError, ManifestError, ModelLoadError
from .patching import PATCH_SIZE, PreprocSpec

INPUT_SIZE = (PATCH_SIZE, PATCH_SIZE, 3)

MANIFEST_FORMAT = "backbone-manifest/1"

STUB_POOL_GRID = 8  # stub pools patches to an 8x8x3 grid before projecting


@dataclass(frozen=True)
class BackboneManifest:
    """Description of a serialized backbone: where it lives, what it emits,

    and how its inputs must be normalized."""

    name: str
    model_path: str
    feature_dim: int
    preproc: PreprocSpec
    input_size: tuple[int, int, int] = INPUT_SIZE

    def __post_init__(self):
        if self.feature_dim < 1:
            raise ManifestError(f"feature_dim must be positive, got {self.feature_dim}")
        if tuple(self.input_size) != INPUT_SIZE:
            raise ManifestError(f"input_size must be {list(INPUT_SIZE)}, got {list(self.input_size)}")

    def to_json(self) -> dict:
        return {
            "format": MANIFEST_FORMAT,
            "name": self.name,
            "model_path": self.model_path,
            "input_size": list(self.input_size),
            "feature_dim": self.feature_dim,
            "preproc": self.preproc.to_json(),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "BackboneManifest":
        try:
            return cls(
                name=doc["name"],
                model_path=doc["model_path"],
                feature_dim=int(doc["feature_dim"]),
                preproc=PreprocSpec.from_json(doc["preproc"]),
                input_size=tuple(int(v) for v in doc.get("input_size", INPUT_SIZE)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ManifestError(f"malformed backbone manifest: {exc}") from exc

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "BackboneManifest":
        """Load a manifest file; a relative model_path is resolved against

        the manifest's own directory."""
        p = Path(path)
        if not p.is_file():
            raise ManifestError(f"backbone manifest not found: {p}")
        manifest = cls.from_json(json.loads(p.read_text(encoding="utf-8")))
        model = Path(manifest.model_path)
        if not model.is_absolute():
            model = p.parent / model
            return cls(
                name=manifest.name,
                model_path=str(model),
                feature_dim=manifest.feature_dim,
                preproc=manifest.preproc,
            )
        return manifest


class FeatureExtractor:
    """Common surface of all backbones: ``extract`` maps one normalized

    (256, 256, 3) patch tensor to a float32 feature vector and counts
    how many inferences it has run."""

    name: str
    feature_dim: int

    def __init__(self, name: str, feature_dim: int):
        self.name = name
        self.feature_dim = feature_dim
        self.inference_count = 0

    def extract(self, patch: np.ndarray) -> np.ndarray:
        if patch.shape != INPUT_SIZE:
            raise ExtractionError(f"expected patch of shape {INPUT_SIZE}, got {patch.shape}")
        self.inference_count += 1
        vector = self._run(np.ascontiguousarray(patch, dtype=np.float32))
        if vector.shape != (self.feature_dim,):
            raise ExtractionError(
                f"backbone {self.name} returned shape {vector.shape}, expected ({self.feature_dim},)"
            )
        return vector

    def _run(self, patch: np.ndarray) -> np.ndarray:
        raise NotImplementedError


def global_average_pool(feature_map: np.ndarray, feature_dim: int) -> np.ndarray:
    """Mean-pool a single spatial feature map to one vector per channel.

    Accepts (1, C, H, W) or (1, H, W, C); the channel axis is the one whose
    size matches ``feature_dim`` (channels-first wins if both do).  A rank-2
    (1, C) output is passed through, treated as already pooled.
    """
    if feature_map.ndim == 2 and feature_map.shape == (1, feature_dim):
        return np.asarray(feature_map[0], dtype=np.float32)
    if feature_map.ndim != 4 or feature_map.shape[0] != 1:
        raise ManifestError(f"expected a (1, ...) rank-4 feature map, got shape {feature_map.shape}")
    if feature_map.shape[1] == feature_dim:
        pooled = feature_map[0].mean(axis=(1, 2))
    elif feature_map.shape[3] == feature_dim:
        pooled = feature_map[0].mean(axis=(0, 1))
    else:
        raise ManifestError(
            f"declared feature_dim {feature_dim} matches no axis of output shape {feature_map.shape}"
        )
    return np.asarray(pooled, dtype=np.float32)


class StubBackbone(FeatureExtractor):
    """Dependency-free extractor: block-average the patch to an 8x8x3 grid

    and apply a seeded random linear projection.  Preserves coarse color
    and layout information, so synthetic tasks stay learnable."""

    def __init__(self, seed: int, feature_dim: int):
        if feature_dim < 1:
            raise ManifestError(f"feature_dim must be positive, got {feature_dim}")
        super().__init__(name=f"stub-{seed}-{feature_dim}", feature_dim=feature_dim)
        self.seed = seed
        pooled_len = STUB_POOL_GRID * STUB_POOL_GRID * 3
        rng = np.random.default_rng(seed)
        self._projection = rng.standard_normal((feature_dim, pooled_len)) / np.sqrt(pooled_len)

    def _run(self, patch: np.ndarray) -> np.ndarray:
        block = PATCH_SIZE // STUB_POOL_GRID
        grid = patch.reshape(STUB_POOL_GRID, block, STUB_POOL_GRID, block, 3).mean(axis=(1, 3))
        pooled = grid.reshape(-1).astype(np.float64)
        return (self._projection @ pooled).astype(np.float32)


class TorchBackbone(FeatureExtractor):
    """Adapter for serialized torch models: ``.pt2`` (torch.export) or

    TorchScript ``.pt``/``.ts``.  The module is loaded in eval mode with
    gradients disabled.  Inference runs under an internal lock: a single
    loaded module is shared, so concurrent callers are serialized rather
    than racing torch state.
    """

    def __init__(self, manifest: BackboneManifest):
        try:
            import torch
        except ImportError as exc:
            raise ModelLoadError(
                "torch is required to load serialized torch backbones (pip install torch)"
            ) from exc
        self._torch = torch
        path = Path(manifest.model_path)
        try:
            if path.suffix.lower() == ".pt2":
                # exported programs carry their (eval) mode; .eval() is unsupported
                module = torch.export.load(str(path)).module()
            else:
                module = torch.jit.load(str(path), map_location="cpu")
                module.eval()
        except Exception as exc:
            raise ModelLoadError(f"cannot load torch model {path}: {exc}") from exc
        for param in module.parameters():
            param.requires_grad_(False)
        self._module = module
        self._lock = threading.Lock()
        super().__init__(name=manifest.name, feature_dim=manifest.feature_dim)
        probe = np.zeros(INPUT_SIZE, dtype=np.float32)
        global_average_pool(self._infer(probe), manifest.feature_dim)

    def _infer(self, patch: np.ndarray) -> np.ndarray:
        x = self._torch.from_numpy(patch.transpose(2, 0, 1)[None, ...])
        with self._lock, self._torch.no_grad():
            try:
                out = self._module(x)
            except Exception as exc:
                raise ExtractionError(f"torch inference failed: {exc}") from exc
        return out.numpy()

    def _run(self, patch: np.ndarray) -> np.ndarray:
        return global_average_pool(self._infer(patch), self.feature_dim)


class OnnxBackbone(FeatureExtractor):
    """Adapter for ONNX files, executed through onnxruntime.

    A session object may be injected (anything with ``get_inputs`` and
    ``run``); otherwise onnxruntime is imported lazily.  Sessions are
    treated as thread-safe for read-only inference, per onnxruntime's
    documented behavior.
    """

    def __init__(self, manifest: BackboneManifest, session=None):
        if session is None:
            try:
                import onnxruntime
            except ImportError as exc:
                raise ModelLoadError(
                    "onnxruntime is required to load ONNX backbones and is not installed"
                ) from exc
            try:
                session = onnxruntime.InferenceSession(
                    manifest.model_path, providers=["CPUExecutionProvider"]
                )
            except Exception as exc:
                raise ModelLoadError(f"cannot load ONNX model {manifest.model_path}: {exc}") from exc
        self._session = session
        inputs = session.get_inputs()
        if len(inputs) != 1:
            raise ModelLoadError(f"expected a single-input model, got {len(inputs)} inputs")
        self._input_name = inputs[0].name
        self._channels_first = self._detect_channels_first(inputs[0].shape)
        super().__init__(name=manifest.name, feature_dim=manifest.feature_dim)
        probe = np.zeros(INPUT_SIZE, dtype=np.float32)
        global_average_pool(self._infer(probe), manifest.feature_dim)

    @staticmethod
    def _detect_channels_first(shape) -> bool:
        # Symbolic dims come through as strings/None; only trust concrete 3s.
        dims = list(shape) if shape is not None else []
        if len(dims) == 4 and dims[1] == 3:
            return True
        if len(dims) == 4 and dims[3] == 3:
            return False
        return True

    def _infer(self, patch: np.ndarray) -> np.ndarray:
        x = patch.transpose(2, 0, 1)[None, ...] if self._channels_first else patch[None, ...]
        try:
            outputs = self._session.run(None, {self._input_name: x})
        except Exception as exc:
            raise ExtractionError(f"ONNX inference failed: {exc}") from exc
        return np.asarray(outputs[0])

    def _run(self, patch: np.ndarray) -> np.ndarray:
        return global_average_pool(self._infer(patch), self.feature_dim)


def load_backbone(manifest: BackboneManifest) -> FeatureExtractor:
    """Instantiate the adapter matching the manifest's model file type."""
    path = Path(manifest.model_path)
    if not path.is_file():
        raise ModelLoadError(f"model file not found: {path}")
    suffix = path.suffix.lower()
    if suffix == ".onnx":
        return OnnxBackbone(manifest)
    if suffix in {".pt", ".pth", ".ts", ".pt2"}:
        return TorchBackbone(manifest)
    raise ModelLoadError(f"unrecognized model file type {suffix!r} for {path}")


def extract_features(extractor: FeatureExtractor, patch: np.ndarray) -> np.ndarray:
    """Pooled feature vector for one normalized patch tensor."""
    return extractor.extract(patch)


def resolve_backbone(spec: str) -> tuple[FeatureExtractor, PreprocSpec]:
    """Turn a backbone argument into an extractor plus its preprocessing.

    ``stub:<seed>:<dim>`` builds the offline stub (identity preprocessing);
    anything else is read as a backbone manifest JSON path.
    """
    if spec.startswith("stub:"):
        parts = spec.split(":")
        if len(parts) != 3:
            raise ConfigurationError(f"stub spec must be stub:<seed>:<dim>, got {spec!r}")
        try:
            seed, dim = int(parts[1]), int(parts[2])
        except ValueError as exc:
            raise ConfigurationError(f"stub spec must be stub:<seed>:<dim>, got {spec!r}") from exc
        return StubBackbone(seed=seed, feature_dim=dim), PreprocSpec.identity()
    manifest = BackboneManifest.load(spec)
    return load_backbone(manifest), manifest.preproc
