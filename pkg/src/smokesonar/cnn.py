"""Four-layer CNN for hand-movement classification, trained from scratch.

Architecture (for the default 96x96 input): conv 5x5 (valid) -> ReLU ->
maxpool 2x2 -> conv 3x3 (valid) -> ReLU -> maxpool 2x2 -> flatten -> fully
connected 128 with ReLU -> affine -> softmax over 2 classes.  Weights start
from a zero-mean Gaussian and are fitted by mini-batch SGD with momentum on
cross-entropy loss.  Everything is plain float64 numpy + the jitted conv
and pooling kernels; no framework.

Model file format (little-endian): magic ``SMKCNN\\x00\\x01``, then u32
fields input_size, conv1_filters, conv1_kernel, conv2_filters,
conv2_kernel, fc_units, n_classes, then i64 rng_seed, then the parameter
blocks as float32 in declaration order: conv1_w, conv1_b, conv2_w,
conv2_b, fc_w, fc_b, out_w, out_b.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from smokesonar import _kernels
from smokesonar.errors import DataError, ModelError

MODEL_MAGIC = b"SMKCNN\x00\x01"

PARAM_ORDER = ("conv1_w", "conv1_b", "conv2_w", "conv2_b", "fc_w", "fc_b", "out_w", "out_b")


@dataclass
class CnnConfig:
    input_size: int = 96
    conv1_filters: int = 8
    conv1_kernel: int = 5
    conv2_filters: int = 16
    conv2_kernel: int = 3
    fc_units: int = 128
    n_classes: int = 2
    init_std: float = 0.05

    def layer_sizes(self) -> tuple[int, int, int]:
        """(after conv1+pool, after conv2+pool, flatten) side lengths."""
        s1 = self.input_size - self.conv1_kernel + 1
        if s1 <= 0 or s1 % 2:
            raise ModelError(f"conv1 output {s1} not poolable for input {self.input_size}")
        p1 = s1 // 2
        s2 = p1 - self.conv2_kernel + 1
        if s2 <= 0 or s2 % 2:
            raise ModelError(f"conv2 output {s2} not poolable")
        p2 = s2 // 2
        return p1, p2, p2 * p2 * self.conv2_filters


@dataclass
class CnnModel:
    config: CnnConfig
    params: dict[str, np.ndarray]
    rng_seed: int = 0
    version: int = 1

    def validate(self) -> None:
        cfg = self.config
        _, _, flat = cfg.layer_sizes()
        expected = {
            "conv1_w": (cfg.conv1_filters, 1, cfg.conv1_kernel, cfg.conv1_kernel),
            "conv1_b": (cfg.conv1_filters,),
            "conv2_w": (cfg.conv2_filters, cfg.conv1_filters, cfg.conv2_kernel, cfg.conv2_kernel),
            "conv2_b": (cfg.conv2_filters,),
            "fc_w": (flat, cfg.fc_units),
            "fc_b": (cfg.fc_units,),
            "out_w": (cfg.fc_units, cfg.n_classes),
            "out_b": (cfg.n_classes,),
        }
        for name, shape in expected.items():
            if name not in self.params:
                raise ModelError(f"missing parameter block {name}")
            if self.params[name].shape != shape:
                raise ModelError(
                    f"{name} has shape {self.params[name].shape}, expected {shape}"
                )
            if not np.all(np.isfinite(self.params[name])):
                raise ModelError(f"{name} contains non-finite values")


def init_model(cfg: CnnConfig | None = None, seed: int = 0) -> CnnModel:
    """Gaussian-initialized model, deterministic per seed."""
    cfg = cfg or CnnConfig()
    _, _, flat = cfg.layer_sizes()
    rng = np.random.default_rng(seed)
    std = cfg.init_std
    params = {
        "conv1_w": rng.normal(0.0, std, (cfg.conv1_filters, 1, cfg.conv1_kernel, cfg.conv1_kernel)),
        "conv1_b": np.zeros(cfg.conv1_filters),
        "conv2_w": rng.normal(0.0, std, (cfg.conv2_filters, cfg.conv1_filters, cfg.conv2_kernel, cfg.conv2_kernel)),
        "conv2_b": np.zeros(cfg.conv2_filters),
        "fc_w": rng.normal(0.0, std, (flat, cfg.fc_units)),
        "fc_b": np.zeros(cfg.fc_units),
        "out_w": rng.normal(0.0, std, (cfg.fc_units, cfg.n_classes)),
        "out_b": np.zeros(cfg.n_classes),
    }
    model = CnnModel(config=cfg, params=params, rng_seed=seed)
    model.validate()
    return model


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def forward(model: CnnModel, x: np.ndarray, want_cache: bool = False):
    """Class probabilities for a batch of (N, H, W) inputs.

    Returns (probs, cache); cache holds the intermediates backward() needs.
    """
    p = model.params
    if x.ndim == 2:
        x = x[None]
    if x.shape[1] != model.config.input_size or x.shape[2] != model.config.input_size:
        raise ModelError(
            f"input is {x.shape[1]}x{x.shape[2]}, model expects "
            f"{model.config.input_size}x{model.config.input_size}"
        )
    x = np.ascontiguousarray(x, dtype=np.float64)[:, None, :, :]
    z1 = _kernels.conv2d_forward(x, p["conv1_w"], p["conv1_b"])
    a1 = np.maximum(z1, 0.0)
    p1, arg1 = _kernels.maxpool2_forward(a1)
    z2 = _kernels.conv2d_forward(p1, p["conv2_w"], p["conv2_b"])
    a2 = np.maximum(z2, 0.0)
    p2, arg2 = _kernels.maxpool2_forward(a2)
    flat = p2.reshape(p2.shape[0], -1)
    z3 = flat @ p["fc_w"] + p["fc_b"]
    a3 = np.maximum(z3, 0.0)
    logits = a3 @ p["out_w"] + p["out_b"]
    probs = softmax(logits)
    cache = None
    if want_cache:
        cache = (x, z1, a1, arg1, p1, z2, a2, arg2, p2, flat, z3, a3)
    return probs, cache


def forward_probs(model: CnnModel, grid: np.ndarray) -> np.ndarray:
    """Probabilities for a single (H, W) input."""
    probs, _ = forward(model, np.asarray(grid, dtype=np.float64))
    return probs[0]


def cross_entropy(probs: np.ndarray, labels: np.ndarray) -> float:
    n = labels.size
    return float(-np.mean(np.log(np.maximum(probs[np.arange(n), labels], 1e-300))))


def backward(model: CnnModel, probs: np.ndarray, labels: np.ndarray, cache) -> dict[str, np.ndarray]:
    """Gradients of mean cross-entropy w.r.t. every parameter block."""
    p = model.params
    x, z1, a1, arg1, p1, z2, a2, arg2, p2, flat, z3, a3 = cache
    n = labels.size
    dlogits = probs.copy()
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n
    grads = {
        "out_w": a3.T @ dlogits,
        "out_b": dlogits.sum(axis=0),
    }
    da3 = dlogits @ p["out_w"].T
    dz3 = da3 * (z3 > 0)
    grads["fc_w"] = flat.T @ dz3
    grads["fc_b"] = dz3.sum(axis=0)
    dflat = dz3 @ p["fc_w"].T
    dp2 = dflat.reshape(p2.shape)
    da2 = _kernels.maxpool2_backward(dp2, arg2, a2.shape[2], a2.shape[3])
    dz2 = da2 * (z2 > 0)
    dw2, db2, dp1 = _kernels.conv2d_backward(p1, p["conv2_w"], dz2, need_dx=True)
    grads["conv2_w"] = dw2
    grads["conv2_b"] = db2
    da1 = _kernels.maxpool2_backward(dp1, arg1, a1.shape[2], a1.shape[3])
    dz1 = da1 * (z1 > 0)
    dw1, db1, _ = _kernels.conv2d_backward(x, p["conv1_w"], dz1, need_dx=False)
    grads["conv1_w"] = dw1
    grads["conv1_b"] = db1
    return grads


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    batch_size: int = 32
    epochs: int = 30
    seed: int = 0
    target_accuracy: float = 1.0  # stop early once training accuracy reaches this


@dataclass
class TrainCurvePoint:
    epoch: int
    loss: float
    accuracy: float


def train(
    x: np.ndarray,
    y: np.ndarray,
    cnn_cfg: CnnConfig | None = None,
    train_cfg: TrainConfig | None = None,
) -> tuple[CnnModel, list[TrainCurvePoint]]:
    """Mini-batch SGD with momentum on cross-entropy; deterministic per seed.

    x: (N, H, W) float or binary rasters; y: (N,) int labels.  Both classes
    must be present.
    """
    tc = train_cfg or TrainConfig()
    cfg = cnn_cfg or CnnConfig()
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.int64)
    if x.shape[0] == 0:
        raise DataError("empty training set")
    if np.unique(y).size < 2:
        raise DataError("training set must contain both classes")
    model = init_model(cfg, tc.seed)
    velocity = {k: np.zeros_like(v) for k, v in model.params.items()}
    rng = np.random.default_rng(tc.seed)
    n = x.shape[0]
    curve: list[TrainCurvePoint] = []
    for epoch in range(tc.epochs):
        order = rng.permutation(n)
        losses = []
        correct = 0
        for lo in range(0, n, tc.batch_size):
            idx = order[lo : lo + tc.batch_size]
            probs, cache = forward(model, x[idx], want_cache=True)
            losses.append(cross_entropy(probs, y[idx]) * idx.size)
            correct += int(np.sum(probs.argmax(axis=1) == y[idx]))
            grads = backward(model, probs, y[idx], cache)
            for k, g in grads.items():
                velocity[k] = tc.momentum * velocity[k] - tc.learning_rate * g
                model.params[k] += velocity[k]
        curve.append(TrainCurvePoint(epoch, float(np.sum(losses) / n), correct / n))
        if curve[-1].accuracy >= tc.target_accuracy:
            break
    return model, curve


def save_model(path, model: CnnModel) -> None:
    model.validate()
    cfg = model.config
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(
            struct.pack(
                "<7I",
                cfg.input_size,
                cfg.conv1_filters,
                cfg.conv1_kernel,
                cfg.conv2_filters,
                cfg.conv2_kernel,
                cfg.fc_units,
                cfg.n_classes,
            )
        )
        fh.write(struct.pack("<q", model.rng_seed))
        for name in PARAM_ORDER:
            fh.write(model.params[name].astype("<f4").tobytes())


def load_model(path) -> CnnModel:
    try:
        raw = open(path, "rb").read()
    except OSError as exc:
        raise ModelError(f"cannot read model file {path}: {exc}") from exc
    if len(raw) < len(MODEL_MAGIC) + 28 + 8 or raw[: len(MODEL_MAGIC)] != MODEL_MAGIC:
        raise ModelError(f"{path}: not a model file (bad magic or truncated header)")
    off = len(MODEL_MAGIC)
    dims = struct.unpack_from("<7I", raw, off)
    off += 28
    (seed,) = struct.unpack_from("<q", raw, off)
    off += 8
    cfg = CnnConfig(
        input_size=dims[0],
        conv1_filters=dims[1],
        conv1_kernel=dims[2],
        conv2_filters=dims[3],
        conv2_kernel=dims[4],
        fc_units=dims[5],
        n_classes=dims[6],
    )
    _, _, flat = cfg.layer_sizes()
    shapes = {
        "conv1_w": (cfg.conv1_filters, 1, cfg.conv1_kernel, cfg.conv1_kernel),
        "conv1_b": (cfg.conv1_filters,),
        "conv2_w": (cfg.conv2_filters, cfg.conv1_filters, cfg.conv2_kernel, cfg.conv2_kernel),
        "conv2_b": (cfg.conv2_filters,),
        "fc_w": (flat, cfg.fc_units),
        "fc_b": (cfg.fc_units,),
        "out_w": (cfg.fc_units, cfg.n_classes),
        "out_b": (cfg.n_classes,),
    }
    params = {}
    for name in PARAM_ORDER:
        count = int(np.prod(shapes[name]))
        block = np.frombuffer(raw, dtype="<f4", count=count, offset=off)
        if block.size != count:
            raise ModelError(f"{path}: truncated parameter block {name}")
        params[name] = block.astype(np.float64).reshape(shapes[name])
        off += count * 4
    if off != len(raw):
        raise ModelError(f"{path}: {len(raw) - off} trailing bytes")
    model = CnnModel(config=cfg, params=params, rng_seed=int(seed))
    model.validate()
    return model


def export_train_curve(path, curve: list[TrainCurvePoint]) -> None:
    with open(path, "w") as fh:
        fh.write("# epoch loss accuracy\n")
        for pt in curve:
            fh.write(f"{pt.epoch} {pt.loss:.6f} {pt.accuracy:.6f}\n")
