"""The trainable classification head and its from-scratch training loop.

Architecture: Dense(32, relu) -> inverted dropout(rate) -> Dense(K, softmax)
over pooled backbone features.  Forward, analytic gradients, and the
mini-batch optimizers (sgd / adam) are implemented directly on numpy in
float64; checkpoints store float32 weights.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import CheckpointError, ConfigurationError, DataError, ShapeError
from .features import FeatureStore
from .patching import NUM_CLASSES, PatchPosition

HIDDEN_UNITS = 32

CHECKPOINT_FORMAT = "head-checkpoint/1"


@dataclass
class HeadParams:
    """Weights of the two-layer head (float64 while training)."""

    W1: np.ndarray  # (32, feature_dim)
    b1: np.ndarray  # (32,)
    W2: np.ndarray  # (num_classes, 32)
    b2: np.ndarray  # (num_classes,)

    @property
    def feature_dim(self) -> int:
        return self.W1.shape[1]

    @property
    def num_classes(self) -> int:
        return self.W2.shape[0]

    def copy(self) -> "HeadParams":
        return HeadParams(self.W1.copy(), self.b1.copy(), self.W2.copy(), self.b2.copy())

    def arrays(self) -> list[tuple[str, np.ndarray]]:
        return [("W1", self.W1), ("b1", self.b1), ("W2", self.W2), ("b2", self.b2)]


@dataclass
class TrainConfig:
    """Training hyperparameters; the defaults are the pipeline's standard

    configuration (batch 32, 15 epochs, dropout 0.3, adam at 1e-3)."""

    batch_size: int = 32
    epochs: int = 15
    dropout_rate: float = 0.3
    learning_rate: float = 1e-3
    seed: int = 0
    optimizer: str = "adam"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigurationError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigurationError(f"epochs must be >= 1, got {self.epochs}")
        if self.learning_rate < 0:
            raise ConfigurationError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigurationError(f"optimizer must be sgd or adam, got {self.optimizer!r}")


def init_head(feature_dim: int, num_classes: int, seed: int) -> HeadParams:
    """Glorot-uniform weights, zero biases, deterministic under seed."""
    if feature_dim < 1 or num_classes < 1:
        raise ConfigurationError("feature_dim and num_classes must be positive")
    rng = np.random.default_rng(seed)
    limit1 = np.sqrt(6.0 / (feature_dim + HIDDEN_UNITS))
    limit2 = np.sqrt(6.0 / (HIDDEN_UNITS + num_classes))
    return HeadParams(
        W1=rng.uniform(-limit1, limit1, size=(HIDDEN_UNITS, feature_dim)),
        b1=np.zeros(HIDDEN_UNITS),
        W2=rng.uniform(-limit2, limit2, size=(num_classes, HIDDEN_UNITS)),
        b2=np.zeros(num_classes),
    )


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(_log_softmax(logits))


def forward(
    params: HeadParams,
    features: np.ndarray,
    dropout_mask: np.ndarray | None = None,
    dropout_rate: float = 0.0,
) -> tuple[np.ndarray, dict]:
    """Single-sample forward pass.

    With a mask, hidden activations use the inverted-dropout convention
    (h * mask / (1 - rate)); without one this is the pure inference path.
    Returns the probability vector and the hidden-activation cache.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.shape != (params.feature_dim,):
        raise ShapeError(f"expected features of shape ({params.feature_dim},), got {x.shape}")
    z1 = params.W1 @ x + params.b1
    h = np.maximum(z1, 0.0)
    if dropout_mask is not None:
        mask = np.asarray(dropout_mask, dtype=np.float64)
        if mask.shape != (HIDDEN_UNITS,):
            raise ShapeError(f"dropout mask must have shape ({HIDDEN_UNITS},), got {mask.shape}")
        hd = h * mask / (1.0 - dropout_rate)
    else:
        hd = h
    logits = params.W2 @ hd + params.b2
    probs = softmax(logits)
    return probs, {"z1": z1, "h": h, "hd": hd, "logits": logits}


def predict_proba(params: HeadParams, features: np.ndarray) -> np.ndarray:
    """Inference-mode probabilities (no dropout, no scaling)."""
    probs, _ = forward(params, features)
    return probs


def _as_batch(batch) -> tuple[np.ndarray, np.ndarray]:
    if len(batch) == 0:
        raise ShapeError("batch must be nonempty")
    X = np.stack([np.asarray(x, dtype=np.float64) for x, _ in batch])
    Y = np.stack([np.asarray(y, dtype=np.float64) for _, y in batch])
    return X, Y


def loss_and_grad(
    params: HeadParams,
    batch,
    dropout_masks: np.ndarray | None = None,
    dropout_rate: float = 0.0,
) -> tuple[float, HeadParams]:
    """Mean cross-entropy over a batch of (features, one-hot) pairs and its

    exact analytic gradients, including the dropout scaling when masks are
    supplied (one row per sample)."""
    X, Y = _as_batch(batch)
    n, dim = X.shape
    if dim != params.feature_dim:
        raise ShapeError(f"features have dim {dim}, head expects {params.feature_dim}")
    if Y.shape != (n, params.num_classes):
        raise ShapeError(f"labels have shape {Y.shape}, expected ({n}, {params.num_classes})")

    Z1 = X @ params.W1.T + params.b1
    H = np.maximum(Z1, 0.0)
    if dropout_masks is not None:
        M = np.asarray(dropout_masks, dtype=np.float64)
        if M.shape != (n, HIDDEN_UNITS):
            raise ShapeError(f"dropout masks must have shape ({n}, {HIDDEN_UNITS}), got {M.shape}")
        scale = M / (1.0 - dropout_rate)
        Hd = H * scale
    else:
        scale = None
        Hd = H
    logits = Hd @ params.W2.T + params.b2
    logp = _log_softmax(logits)
    loss = float(-(Y * logp).sum() / n)

    dlogits = (np.exp(logp) - Y) / n
    gW2 = dlogits.T @ Hd
    gb2 = dlogits.sum(axis=0)
    dHd = dlogits @ params.W2
    dH = dHd * scale if scale is not None else dHd
    dZ1 = dH * (Z1 > 0.0)
    gW1 = dZ1.T @ X
    gb1 = dZ1.sum(axis=0)
    return loss, HeadParams(W1=gW1, b1=gb1, W2=gW2, b2=gb2)


@dataclass
class _AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0


def _apply_update(params: HeadParams, grads: HeadParams, config: TrainConfig, adam: _AdamState | None):
    tensors = [t for _, t in params.arrays()]
    gradients = [g for _, g in grads.arrays()]
    if config.optimizer == "sgd":
        for t, g in zip(tensors, gradients):
            t -= config.learning_rate * g
        return
    adam.step += 1
    b1, b2 = config.adam_beta1, config.adam_beta2
    correction1 = 1.0 - b1**adam.step
    correction2 = 1.0 - b2**adam.step
    for i, (t, g) in enumerate(zip(tensors, gradients)):
        adam.m[i] = b1 * adam.m[i] + (1.0 - b1) * g
        adam.v[i] = b2 * adam.v[i] + (1.0 - b2) * g * g
        m_hat = adam.m[i] / correction1
        v_hat = adam.v[i] / correction2
        t -= config.learning_rate * m_hat / (np.sqrt(v_hat) + config.adam_eps)


def _gather_patches(
    store: FeatureStore, labels: dict[str, int], image_ids
) -> tuple[np.ndarray, np.ndarray, list[str]]:
    ids = sorted(image_ids)
    rows, targets = [], []
    for image_id in ids:
        if image_id not in labels:
            raise DataError(f"no label for image {image_id}")
        for position in PatchPosition:
            rows.append(store.get(image_id, position).astype(np.float64))
        targets.extend([int(labels[image_id])] * len(PatchPosition))
    return np.stack(rows), np.asarray(targets, dtype=np.int64), ids


def _batch_accuracy(params: HeadParams, X: np.ndarray, truth: np.ndarray) -> float:
    logits = np.maximum(X @ params.W1.T + params.b1, 0.0) @ params.W2.T + params.b2
    return float((logits.argmax(axis=1) == truth).mean())


def train(
    store: FeatureStore,
    labels: dict[str, int],
    fold_train_ids,
    config: TrainConfig,
    num_classes: int = NUM_CLASSES,
) -> tuple[HeadParams, list[float]]:
    """Train the head on all cached patches of the given training images.

    Patch order is reshuffled every epoch and a fresh dropout mask is drawn
    per sample per step, all from one generator seeded by ``config.seed``,
    so results are bit-reproducible.  Returns the final parameters and the
    per-epoch trace of training accuracy measured with dropout disabled.
    """
    X, truth, _ = _gather_patches(store, labels, fold_train_ids)
    eye = np.eye(num_classes, dtype=np.float64)
    Y = eye[truth]

    params = init_head(store.feature_dim, num_classes, seed=config.seed)
    rng = np.random.default_rng(config.seed)
    adam = None
    if config.optimizer == "adam":
        adam = _AdamState(
            m=[np.zeros_like(t) for _, t in params.arrays()],
            v=[np.zeros_like(t) for _, t in params.arrays()],
        )

    n = X.shape[0]
    trace: list[float] = []
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            chosen = order[start : start + config.batch_size]
            masks = None
            if config.dropout_rate > 0.0:
                masks = (rng.random((len(chosen), HIDDEN_UNITS)) >= config.dropout_rate).astype(
                    np.float64
                )
            batch = list(zip(X[chosen], Y[chosen]))
            _, grads = loss_and_grad(
                params, batch, dropout_masks=masks, dropout_rate=config.dropout_rate
            )
            _apply_update(params, grads, config, adam)
        trace.append(_batch_accuracy(params, X, truth))
    return params, trace


def save_checkpoint(path: str | Path, params: HeadParams, config: TrainConfig) -> None:
    """Single-file checkpoint: one JSON header line, then the weights as

    concatenated little-endian float32 arrays in header order."""
    header = {
        "format": CHECKPOINT_FORMAT,
        "feature_dim": params.feature_dim,
        "num_classes": params.num_classes,
        "hidden_units": HIDDEN_UNITS,
        "seed": config.seed,
        "config": asdict(config),
        "tensors": [[name, list(t.shape)] for name, t in params.arrays()],
    }
    payload = b"".join(t.astype("<f4").tobytes() for _, t in params.arrays())
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        fh.write(payload)


def load_checkpoint(path: str | Path) -> tuple[HeadParams, dict]:
    """Read a checkpoint back; weights come back as float64 for inference."""
    try:
        with open(path, "rb") as fh:
            header_line = fh.readline()
            payload = fh.read()
        header = json.loads(header_line.decode("utf-8"))
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if header.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"unsupported checkpoint format {header.get('format')!r}")
    arrays = {}
    offset = 0
    for name, shape in header["tensors"]:
        count = int(np.prod(shape))
        raw = payload[offset * 4 : (offset + count) * 4]
        if len(raw) != count * 4:
            raise CheckpointError(f"checkpoint payload truncated at tensor {name}")
        arrays[name] = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(shape)
        offset += count
    if offset * 4 != len(payload):
        raise CheckpointError("checkpoint payload has trailing bytes")
    try:
        params = HeadParams(W1=arrays["W1"], b1=arrays["b1"], W2=arrays["W2"], b2=arrays["b2"])
    except KeyError as exc:
        raise CheckpointError(f"checkpoint missing tensor {exc}") from exc
    return params, header
