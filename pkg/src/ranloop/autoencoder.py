"""Hourglass autoencoder trained from scratch with numpy.

Layer sizes are mirror-shaped around a strictly smaller latent layer,
e.g. [16, 8, 3, 8, 16]. Hidden layers use tanh, the output layer is
identity, and training minimizes mean squared reconstruction error
with seeded mini-batch SGD, so identical (data, sizes, seed) give
identical weights.

The model file is versioned plaintext: a header with the layer sizes
and the per-metric scaling ranges it was trained with, followed by
row-major weight/bias floats (full precision).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MODEL_MAGIC = "ranloop-ae"
MODEL_VERSION = 1


class TrainingDiverged(RuntimeError):
    """Reconstruction error became non-finite during training."""


def validate_hourglass(sizes) -> list[int]:
    sizes = [int(s) for s in sizes]
    if len(sizes) < 3 or len(sizes) % 2 == 0:
        raise ValueError("hourglass needs an odd number of layers (>= 3)")
    if any(s <= 0 for s in sizes):
        raise ValueError("layer sizes must be positive")
    if sizes != sizes[::-1]:
        raise ValueError("encoder/decoder must mirror each other")
    mid = len(sizes) // 2
    for i in range(mid):
        if sizes[i + 1] >= sizes[i]:
            raise ValueError("sizes must strictly shrink toward the latent layer")
    return sizes


@dataclass
class Autoencoder:
    sizes: list[int]
    weights: list[np.ndarray]  # weights[i]: (sizes[i], sizes[i+1])
    biases: list[np.ndarray]

    @property
    def input_dim(self) -> int:
        return self.sizes[0]

    @property
    def latent_dim(self) -> int:
        return self.sizes[len(self.sizes) // 2]

    @property
    def latent_layer(self) -> int:
        # index into the activation stack where the latent lives
        return len(self.sizes) // 2


def init_autoencoder(sizes, seed: int) -> Autoencoder:
    """Glorot-uniform initial weights, zero biases."""
    sizes = validate_hourglass(sizes)
    rng = np.random.default_rng(seed)
    weights = []
    biases = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return Autoencoder(sizes=sizes, weights=weights, biases=biases)


def _forward_stack(model: Autoencoder, x: np.ndarray) -> list[np.ndarray]:
    """All layer activations for a batch (input included)."""
    acts = [x]
    last = len(model.weights) - 1
    h = x
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ w + b
        h = z if i == last else np.tanh(z)
        acts.append(h)
    return acts


def ae_forward(model: Autoencoder, x) -> tuple[np.ndarray, np.ndarray]:
    """Return (latent, reconstruction) for one input vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.input_dim,):
        raise ValueError(f"expected input of shape ({model.input_dim},), got {x.shape}")
    acts = _forward_stack(model, x[None, :])
    return acts[model.latent_layer][0], acts[-1][0]


def encode_batch(model: Autoencoder, batch: np.ndarray) -> np.ndarray:
    """Latent representations for a (n, D) batch."""
    batch = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    acts = _forward_stack(model, batch)
    return acts[model.latent_layer]


def reconstruction_mse(model: Autoencoder, batch: np.ndarray) -> float:
    acts = _forward_stack(model, np.atleast_2d(batch))
    diff = acts[-1] - np.atleast_2d(batch)
    return float(np.mean(diff * diff))


def ae_gradients(model: Autoencoder, batch: np.ndarray):
    """Analytic gradients of the batch-mean reconstruction MSE.

    Returns (grad_weights, grad_biases, mse); the loss averages over
    both batch rows and output dimensions.
    """
    batch = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    n, d = batch.shape
    acts = _forward_stack(model, batch)
    diff = acts[-1] - batch
    mse = float(np.mean(diff * diff))

    grad_w = [np.zeros_like(w) for w in model.weights]
    grad_b = [np.zeros_like(b) for b in model.biases]
    delta = 2.0 * diff / (n * d)  # output layer is identity
    for i in range(len(model.weights) - 1, -1, -1):
        grad_w[i] = acts[i].T @ delta
        grad_b[i] = delta.sum(axis=0)
        if i > 0:
            upstream = delta @ model.weights[i].T
            delta = upstream * (1.0 - acts[i] * acts[i])  # tanh'
    return grad_w, grad_b, mse


def ae_train(
    data,
    sizes,
    epochs: int,
    lr: float,
    seed: int,
    batch_size: int = 32,
) -> tuple[Autoencoder, list[float]]:
    """Mini-batch SGD on reconstruction MSE; returns (model, epoch MSE history)."""
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    if data.shape[0] == 0:
        raise ValueError("training dataset is empty")
    sizes = validate_hourglass(sizes)
    if data.shape[1] != sizes[0]:
        raise ValueError(f"data dim {data.shape[1]} != input layer {sizes[0]}")

    model = init_autoencoder(sizes, seed)
    rng = np.random.default_rng(seed + 1)
    n = data.shape[0]
    history = []
    for _epoch in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            batch = data[order[start : start + batch_size]]
            grad_w, grad_b, _ = ae_gradients(model, batch)
            if lr != 0.0:
                for i in range(len(model.weights)):
                    model.weights[i] -= lr * grad_w[i]
                    model.biases[i] -= lr * grad_b[i]
        mse = reconstruction_mse(model, data)
        if not np.isfinite(mse):
            raise TrainingDiverged(
                f"reconstruction MSE became non-finite at epoch {_epoch}"
            )
        history.append(mse)
    return model, history


# ---------------------------------------------------------------------------
# persistence (scaling ranges travel with the model; see xapp_sdk)
# ---------------------------------------------------------------------------


def save_autoencoder(path: str, model: Autoencoder, ranges: dict) -> None:
    """``ranges`` maps slice_id -> ScalingRanges (one row of ranges per
    slice and metric in the header)."""
    slice_ids = sorted(ranges)
    metrics = ranges[slice_ids[0]].metrics
    lines = [f"{MODEL_MAGIC} v{MODEL_VERSION}"]
    lines.append("layers " + " ".join(str(s) for s in model.sizes))
    lines.append("metrics " + " ".join(metrics))
    lines.append("slices " + " ".join(slice_ids))
    for slice_id in slice_ids:
        r = ranges[slice_id]
        for name, lo, hi in zip(r.metrics, r.mins, r.maxs):
            lines.append(f"range {slice_id} {name} {float(lo)!r} {float(hi)!r}")
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        lines.append(f"W {i} {w.shape[0]} {w.shape[1]}")
        lines.append(" ".join(repr(float(v)) for v in w.ravel()))
        lines.append(f"b {i} {b.shape[0]}")
        lines.append(" ".join(repr(float(v)) for v in b))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_autoencoder(path: str):
    from .xapp_sdk import ScalingRanges

    with open(path, "r", encoding="utf-8") as fh:
        lines = [line.rstrip("\n") for line in fh]
    if not lines or not lines[0].startswith(MODEL_MAGIC):
        raise ValueError(f"{path}: not a {MODEL_MAGIC} file")
    version = lines[0].split("v")[-1]
    if int(version) != MODEL_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")

    sizes = None
    metrics = None
    slice_ids: tuple = ()
    mins: dict[tuple[str, str], float] = {}
    maxs: dict[tuple[str, str], float] = {}
    weights: list[np.ndarray] = []
    biases: list[np.ndarray] = []
    i = 1
    while i < len(lines):
        line = lines[i]
        if not line:
            i += 1
            continue
        parts = line.split()
        if parts[0] == "layers":
            sizes = [int(s) for s in parts[1:]]
        elif parts[0] == "metrics":
            metrics = tuple(parts[1:])
        elif parts[0] == "slices":
            slice_ids = tuple(parts[1:])
        elif parts[0] == "range":
            mins[(parts[1], parts[2])] = float(parts[3])
            maxs[(parts[1], parts[2])] = float(parts[4])
        elif parts[0] == "W":
            rows, cols = int(parts[2]), int(parts[3])
            values = np.array(lines[i + 1].split(), dtype=np.float64)
            weights.append(values.reshape(rows, cols))
            i += 1
        elif parts[0] == "b":
            size = int(parts[2])
            values = np.array(lines[i + 1].split(), dtype=np.float64)
            if values.shape != (size,):
                raise ValueError(f"{path}: bias {parts[1]} has wrong length")
            biases.append(values)
            i += 1
        else:
            raise ValueError(f"{path}: unknown record {parts[0]!r}")
        i += 1

    if sizes is None or metrics is None or not slice_ids:
        raise ValueError(f"{path}: missing header records")
    model = Autoencoder(sizes=validate_hourglass(sizes), weights=weights, biases=biases)
    ranges = {
        slice_id: ScalingRanges(
            mins=np.array([mins[(slice_id, m)] for m in metrics]),
            maxs=np.array([maxs[(slice_id, m)] for m in metrics]),
            metrics=metrics,
        )
        for slice_id in slice_ids
    }
    return model, ranges
