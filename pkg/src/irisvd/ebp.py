"""Three-layer sigmoid network trained by adaptive-rate error backprop.

The classifier maps a k-dimensional singular-value feature vector through
one hidden layer (roughly twice the input width) to one sigmoid output per
class; targets are one-hot and predictions decode by argmax.  Training is
full-batch gradient descent on the mean squared error with the adaptive
learning-rate rule: a candidate step that worsens the error beyond a small
ratio is rejected and the rate shrinks, an improving step is accepted and
the rate grows.

Every epoch's rate, error, and accept/improve outcome is recorded so the
rate schedule can be audited exactly after the fact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

StopReason = str  # "goal_met" | "max_epochs" | "gradient_floor"

MODEL_HEADER = "irisvd-mlp v1"


class ModelFormatError(Exception):
    """Raised when a model file does not parse."""


@dataclass(frozen=True)
class MlpShape:
    n_in: int
    n_hidden: int
    n_out: int

    def __post_init__(self) -> None:
        if min(self.n_in, self.n_hidden, self.n_out) < 1:
            raise ValueError(f"all layer sizes must be >= 1, got {self}")


def default_hidden(n_in: int) -> int:
    """Hidden width convention: double the input dimension."""
    return 2 * n_in


@dataclass(frozen=True, eq=False)
class Mlp:
    """Weights plus the per-dimension (min, max) input scaling they expect."""

    shape: MlpShape
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    feature_scaling: tuple[tuple[float, float], ...]

    def __post_init__(self) -> None:
        w1 = np.array(self.w1, dtype=np.float64, copy=True)
        b1 = np.array(self.b1, dtype=np.float64, copy=True)
        w2 = np.array(self.w2, dtype=np.float64, copy=True)
        b2 = np.array(self.b2, dtype=np.float64, copy=True)
        s = self.shape
        if w1.shape != (s.n_hidden, s.n_in) or b1.shape != (s.n_hidden,):
            raise ValueError(f"layer-1 arrays do not match shape {s}")
        if w2.shape != (s.n_out, s.n_hidden) or b2.shape != (s.n_out,):
            raise ValueError(f"layer-2 arrays do not match shape {s}")
        for arr in (w1, b1, w2, b2):
            if not np.all(np.isfinite(arr)):
                raise ValueError("weights must be finite")
            arr.setflags(write=False)
        scaling = tuple((float(lo), float(hi)) for lo, hi in self.feature_scaling)
        if len(scaling) != s.n_in:
            raise ValueError(
                f"feature_scaling needs {s.n_in} entries, got {len(scaling)}"
            )
        object.__setattr__(self, "w1", w1)
        object.__setattr__(self, "b1", b1)
        object.__setattr__(self, "w2", w2)
        object.__setattr__(self, "b2", b2)
        object.__setattr__(self, "feature_scaling", scaling)


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 0.2
    lr_inc: float = 1.05
    lr_dec: float = 0.7
    max_perf_inc: float = 1.04
    max_epochs: int = 50000
    mse_goal: float = 5e-7
    min_grad: float = 1e-9
    seed: int = 0

    def __post_init__(self) -> None:
        if self.lr0 <= 0:
            raise ValueError(f"lr0 must be positive, got {self.lr0}")
        if self.lr_inc <= 1:
            raise ValueError(f"lr_inc must exceed 1, got {self.lr_inc}")
        if not 0 < self.lr_dec < 1:
            raise ValueError(f"lr_dec must be in (0, 1), got {self.lr_dec}")
        if self.max_perf_inc < 1:
            raise ValueError(
                f"max_perf_inc must be >= 1, got {self.max_perf_inc}"
            )
        if self.max_epochs < 1:
            raise ValueError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.mse_goal <= 0:
            raise ValueError(f"mse_goal must be positive, got {self.mse_goal}")
        if self.min_grad < 0:
            raise ValueError(f"min_grad must be >= 0, got {self.min_grad}")
        if self.seed < 0:
            raise ValueError(f"seed must be non-negative, got {self.seed}")


@dataclass(frozen=True)
class TrainReport:
    """Per-epoch audit trail of one training run."""

    epochs_run: int
    final_mse: float
    stop_reason: StopReason
    mse_trace: tuple[float, ...]
    lr_trace: tuple[float, ...]
    accepted: tuple[bool, ...]
    improved: tuple[bool, ...]

    def __post_init__(self) -> None:
        if self.stop_reason not in ("goal_met", "max_epochs", "gradient_floor"):
            raise ValueError(f"unknown stop_reason {self.stop_reason!r}")
        n = self.epochs_run
        if not (len(self.mse_trace) == len(self.lr_trace) == n):
            raise ValueError("trace lengths must equal epochs_run")
        if not (len(self.accepted) == len(self.improved) == n):
            raise ValueError("flag lengths must equal epochs_run")


@dataclass(frozen=True, eq=False)
class Gradient:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def inf_norm(self) -> float:
        return max(
            float(np.max(np.abs(a))) if a.size else 0.0
            for a in (self.w1, self.b1, self.w2, self.b2)
        )


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def init(shape: MlpShape, seed: int) -> Mlp:
    """Fresh network: weights uniform in +-1/sqrt(fan_in), biases zero.

    Draws come from numpy's PCG64 stream for the given seed (w1 first, then
    w2), so identical (shape, seed) pairs give bit-identical networks.  The
    feature scaling starts as the identity; attach the real one after
    fitting it on training data.
    """
    rng = np.random.default_rng(seed)
    a1 = 1.0 / math.sqrt(shape.n_in)
    a2 = 1.0 / math.sqrt(shape.n_hidden)
    return Mlp(
        shape=shape,
        w1=rng.uniform(-a1, a1, (shape.n_hidden, shape.n_in)),
        b1=np.zeros(shape.n_hidden),
        w2=rng.uniform(-a2, a2, (shape.n_out, shape.n_hidden)),
        b2=np.zeros(shape.n_out),
        feature_scaling=((0.0, 1.0),) * shape.n_in,
    )


def fit_scaling(features: np.ndarray) -> tuple[tuple[float, float], ...]:
    """Per-dimension (min, max) over a training feature matrix (rows = samples)."""
    arr = np.asarray(features, dtype=np.float64)
    if arr.ndim != 2 or arr.size == 0:
        raise ValueError(f"need a nonempty 2-D feature matrix, got {arr.shape}")
    return tuple(
        (float(lo), float(hi)) for lo, hi in zip(arr.min(axis=0), arr.max(axis=0))
    )


def apply_scaling(
    scaling: Sequence[tuple[float, float]], x: np.ndarray
) -> np.ndarray:
    """Map each dimension of x through (x - min) / (max - min).

    A dimension that was constant in training (max == min) maps to 0.  Values
    outside the fitted range scale past [0, 1] rather than clipping.
    """
    arr = np.asarray(x, dtype=np.float64)
    lows = np.array([lo for lo, _ in scaling])
    highs = np.array([hi for _, hi in scaling])
    if arr.shape[-1] != lows.size:
        raise ValueError(
            f"feature dimension {arr.shape[-1]} does not match scaling "
            f"of {lows.size}"
        )
    span = highs - lows
    safe = np.where(span > 0.0, span, 1.0)
    out = (arr - lows) / safe
    return np.where(span > 0.0, out, 0.0)


def attach_scaling(
    net: Mlp, scaling: Sequence[tuple[float, float]]
) -> Mlp:
    return replace(net, feature_scaling=tuple((float(a), float(b)) for a, b in scaling))


def forward(net: Mlp, x: np.ndarray) -> np.ndarray:
    """Output vector for one already-scaled input."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.shape != (net.shape.n_in,):
        raise ValueError(
            f"input shape {arr.shape} does not match n_in={net.shape.n_in}"
        )
    h = _sigmoid(net.w1 @ arr + net.b1)
    return _sigmoid(net.w2 @ h + net.b2)


def _as_batch(net: Mlp, batch) -> tuple[np.ndarray, np.ndarray]:
    pairs = list(batch)
    if not pairs:
        raise ValueError("batch must not be empty")
    xs = np.array([np.asarray(x, dtype=np.float64) for x, _ in pairs])
    ts = np.array([np.asarray(t, dtype=np.float64) for _, t in pairs])
    if xs.shape != (len(pairs), net.shape.n_in):
        raise ValueError(f"batch inputs have shape {xs.shape}")
    if ts.shape != (len(pairs), net.shape.n_out):
        raise ValueError(f"batch targets have shape {ts.shape}")
    binary = (ts == 0.0) | (ts == 1.0)
    if not (np.all(binary) and np.all(ts.sum(axis=1) == 1.0)):
        raise ValueError("targets must be one-hot vectors")
    return xs, ts


def _forward_batch(w1, b1, w2, b2, xs):
    h = _sigmoid(xs @ w1.T + b1)
    y = _sigmoid(h @ w2.T + b2)
    return h, y


def _batch_mse(w1, b1, w2, b2, xs, ts) -> float:
    _, y = _forward_batch(w1, b1, w2, b2, xs)
    err = y - ts
    return float(np.mean(err * err))


def _gradient_arrays(w1, b1, w2, b2, xs, ts):
    h, y = _forward_batch(w1, b1, w2, b2, xs)
    err = y - ts
    mse = float(np.mean(err * err))
    scale = 2.0 / err.size
    delta2 = scale * err * y * (1.0 - y)
    gw2 = delta2.T @ h
    gb2 = delta2.sum(axis=0)
    delta1 = (delta2 @ w2) * h * (1.0 - h)
    gw1 = delta1.T @ xs
    gb1 = delta1.sum(axis=0)
    return Gradient(w1=gw1, b1=gb1, w2=gw2, b2=gb2), mse


def backprop_gradient(net: Mlp, batch) -> tuple[Gradient, float]:
    """Full-batch MSE gradient for every weight and bias, plus the MSE.

    MSE is the mean over the batch and the output neurons of (y - t)^2, so
    duplicating every pair leaves both the error and the gradient unchanged.
    """
    xs, ts = _as_batch(net, batch)
    return _gradient_arrays(net.w1, net.b1, net.w2, net.b2, xs, ts)


def train(net: Mlp, train_set, cfg: TrainConfig = TrainConfig()) -> tuple[Mlp, TrainReport]:
    """Adaptive-rate full-batch gradient descent.

    Each epoch proposes w' = w - lr * g.  A candidate whose MSE exceeds the
    current MSE by more than the max_perf_inc ratio is rejected (weights
    kept, lr shrunk by lr_dec); otherwise it is accepted, and lr grows by
    lr_inc when the error strictly improved.  Stops on the error goal, the
    epoch cap, or a vanishing gradient, whichever comes first.
    """
    xs, ts = _as_batch(net, train_set)
    w1, b1, w2, b2 = net.w1, net.b1, net.w2, net.b2
    lr = cfg.lr0

    mse_trace: list[float] = []
    lr_trace: list[float] = []
    accepted: list[bool] = []
    improved: list[bool] = []

    while True:
        grad, cur = _gradient_arrays(w1, b1, w2, b2, xs, ts)
        if cur <= cfg.mse_goal:
            reason = "goal_met"
            break
        if len(mse_trace) >= cfg.max_epochs:
            reason = "max_epochs"
            break
        if grad.inf_norm() < cfg.min_grad:
            reason = "gradient_floor"
            break

        cand = (
            w1 - lr * grad.w1,
            b1 - lr * grad.b1,
            w2 - lr * grad.w2,
            b2 - lr * grad.b2,
        )
        cand_mse = _batch_mse(*cand, xs, ts)
        lr_trace.append(lr)
        if cand_mse > cur * cfg.max_perf_inc:
            accepted.append(False)
            improved.append(False)
            mse_trace.append(cur)
            lr = lr * cfg.lr_dec
        else:
            w1, b1, w2, b2 = cand
            accepted.append(True)
            better = cand_mse < cur
            improved.append(better)
            mse_trace.append(cand_mse)
            if better:
                lr = lr * cfg.lr_inc

    final = cur
    report = TrainReport(
        epochs_run=len(mse_trace),
        final_mse=final,
        stop_reason=reason,
        mse_trace=tuple(mse_trace),
        lr_trace=tuple(lr_trace),
        accepted=tuple(accepted),
        improved=tuple(improved),
    )
    out = Mlp(
        shape=net.shape,
        w1=w1,
        b1=b1,
        w2=w2,
        b2=b2,
        feature_scaling=net.feature_scaling,
    )
    return out, report


def decode(y: np.ndarray) -> int:
    """Index of the largest output; ties go to the lowest index."""
    arr = np.asarray(y, dtype=np.float64)
    if arr.ndim != 1 or arr.size < 1:
        raise ValueError(f"need a nonempty 1-D vector, got shape {arr.shape}")
    return int(np.argmax(arr))


def encode_target(class_index: int, n_out: int) -> np.ndarray:
    """One-hot target vector."""
    if not 0 <= class_index < n_out:
        raise ValueError(f"class index {class_index} outside [0, {n_out})")
    out = np.zeros(n_out)
    out[class_index] = 1.0
    return out


def save_model(path, net: Mlp) -> None:
    """Plain-text model file; weights at 17 significant digits round-trip
    float64 exactly."""
    s = net.shape
    lines = [MODEL_HEADER, f"shape {s.n_in} {s.n_hidden} {s.n_out}"]
    for i, (lo, hi) in enumerate(net.feature_scaling):
        lines.append(f"scale {i} {lo:.17g} {hi:.17g}")
    for name, arr in (("w1", net.w1), ("b1", net.b1), ("w2", net.w2), ("b2", net.b2)):
        lines.append(name)
        rows = arr if arr.ndim == 2 else arr[None, :]
        for row in rows:
            lines.append(" ".join(f"{v:.17g}" for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def _parse_matrix(lines, idx: int, name: str, shape: tuple[int, int]):
    if idx >= len(lines) or lines[idx] != name:
        raise ModelFormatError(f"line {idx + 1}: expected section {name!r}")
    idx += 1
    rows = []
    for r in range(shape[0]):
        if idx >= len(lines):
            raise ModelFormatError(f"line {idx + 1}: missing row {r} of {name}")
        parts = lines[idx].split()
        if len(parts) != shape[1]:
            raise ModelFormatError(
                f"line {idx + 1}: {name} row has {len(parts)} values, "
                f"expected {shape[1]}"
            )
        try:
            rows.append([float(p) for p in parts])
        except ValueError as exc:
            raise ModelFormatError(f"line {idx + 1}: {exc}") from None
        idx += 1
    return np.array(rows), idx


def load_model(path) -> Mlp:
    text = Path(path).read_text(encoding="ascii")
    lines = [ln.rstrip("\n") for ln in text.splitlines()]
    if not lines or lines[0] != MODEL_HEADER:
        raise ModelFormatError(f"line 1: expected header {MODEL_HEADER!r}")
    if len(lines) < 2 or not lines[1].startswith("shape "):
        raise ModelFormatError("line 2: expected shape line")
    try:
        n_in, n_hidden, n_out = (int(p) for p in lines[1].split()[1:])
    except ValueError:
        raise ModelFormatError(f"line 2: bad shape line {lines[1]!r}") from None
    shape = MlpShape(n_in=n_in, n_hidden=n_hidden, n_out=n_out)

    scaling = []
    idx = 2
    for i in range(n_in):
        parts = lines[idx].split() if idx < len(lines) else []
        if len(parts) != 4 or parts[0] != "scale" or parts[1] != str(i):
            raise ModelFormatError(f"line {idx + 1}: expected scale line {i}")
        scaling.append((float(parts[2]), float(parts[3])))
        idx += 1

    w1, idx = _parse_matrix(lines, idx, "w1", (n_hidden, n_in))
    b1, idx = _parse_matrix(lines, idx, "b1", (1, n_hidden))
    w2, idx = _parse_matrix(lines, idx, "w2", (n_out, n_hidden))
    b2, idx = _parse_matrix(lines, idx, "b2", (1, n_out))
    if any(lines[idx:]):
        raise ModelFormatError(f"line {idx + 1}: trailing content")
    return Mlp(
        shape=shape,
        w1=w1,
        b1=b1[0],
        w2=w2,
        b2=b2[0],
        feature_scaling=tuple(scaling),
    )
