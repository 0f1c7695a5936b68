"""Small differentiable classifiers over flat parameter vectors.

Two model kinds are supported: a softmax linear classifier and a one-hidden-
layer ReLU MLP. Losses and gradients are exact closed forms (verified against
central finite differences by :func:`fd_check`); parameters live in a single
flat float64 vector with an explicit layout so the federated engine can treat
models as opaque vectors.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .backend import kernels
from .data import Dataset
from .errors import DataFormatError, NumericError, ParameterError
from .rng import stream

SOFTMAX_LINEAR = "softmax-linear"
MLP_1HIDDEN = "mlp-1hidden"
MODEL_KINDS = (SOFTMAX_LINEAR, MLP_1HIDDEN)

Layout = tuple[tuple[str, tuple[int, ...]], ...]


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    feature_dim: int
    num_classes: int
    hidden_dim: int = 0
    weight_decay: float = 0.0
    init_scale: float = 0.05
    init_seed: int = 0

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ParameterError(f"unknown model kind {self.kind!r}")
        if self.feature_dim < 1 or self.num_classes < 1:
            raise ParameterError("feature_dim and num_classes must be positive")
        if self.kind == MLP_1HIDDEN and self.hidden_dim < 1:
            raise ParameterError("mlp-1hidden requires hidden_dim >= 1")
        if self.weight_decay < 0:
            raise ParameterError("weight_decay must be non-negative")
        if self.init_scale <= 0:
            raise ParameterError("init_scale must be positive")

    def layout(self) -> Layout:
        d, C, h = self.feature_dim, self.num_classes, self.hidden_dim
        if self.kind == SOFTMAX_LINEAR:
            return (("W", (d, C)), ("b", (C,)))
        return (("W1", (d, h)), ("b1", (h,)), ("W2", (h, C)), ("b2", (C,)))

    @property
    def num_params(self) -> int:
        return sum(int(np.prod(shape)) for _, shape in self.layout())


@dataclass
class ModelParams:
    """Flat parameter vector plus the (name, shape) layout mapping into it."""

    flat: np.ndarray
    layout: Layout

    def __post_init__(self):
        self.flat = np.asarray(self.flat, dtype=np.float64)
        expected = sum(int(np.prod(shape)) for _, shape in self.layout)
        if self.flat.shape != (expected,):
            raise ParameterError(
                f"flat vector length {self.flat.shape} does not match layout size {expected}"
            )

    def views(self) -> dict[str, np.ndarray]:
        """Reshaped views into ``flat`` (no copies); writes pass through."""
        out, at = {}, 0
        for name, shape in self.layout:
            size = int(np.prod(shape))
            out[name] = self.flat[at : at + size].reshape(shape)
            at += size
        return out

    def copy(self) -> "ModelParams":
        return ModelParams(self.flat.copy(), self.layout)


@dataclass(frozen=True)
class Batch:
    """Mini-batch as dataset indices, optionally with positive example weights."""

    indices: np.ndarray
    per_example_weight: np.ndarray | None = field(default=None)

    def __post_init__(self):
        indices = np.asarray(self.indices, dtype=np.int64)
        object.__setattr__(self, "indices", indices)
        if indices.size == 0:
            raise ParameterError("batch must be non-empty")
        if self.per_example_weight is not None:
            w = np.asarray(self.per_example_weight, dtype=np.float64)
            object.__setattr__(self, "per_example_weight", w)
            if w.shape != indices.shape:
                raise ParameterError("weights must align with batch indices")
            if np.any(w <= 0):
                raise ParameterError("per-example weights must be positive")


def init_model(spec: ModelSpec) -> ModelParams:
    """Seeded uniform(-init_scale, init_scale) weights, zero biases."""
    rng = stream(spec.init_seed, "model-init", spec.kind)
    params = ModelParams(np.zeros(spec.num_params), spec.layout())
    for name, view in params.views().items():
        if not name.startswith("b"):
            view[...] = rng.uniform(-spec.init_scale, spec.init_scale, size=view.shape)
    return params


def _batch_arrays(params: ModelParams, dataset: Dataset, batch: Batch):
    X = dataset.features[batch.indices]
    y = dataset.labels[batch.indices]
    if not np.isfinite(X).all():
        raise NumericError("batch contains non-finite features")
    return np.ascontiguousarray(X), np.ascontiguousarray(y), batch.per_example_weight


def loss_and_gradient(
    params: ModelParams, dataset: Dataset, batch: Batch, weight_decay: float = 0.0
) -> tuple[float, np.ndarray, np.ndarray]:
    """Fused forward/backward pass.

    Returns ``(loss, per_example_ce, grad_flat)`` where ``loss`` is the
    (self-normalized, decay-augmented) batch loss and ``grad_flat`` its exact
    gradient in the flat layout.
    """
    X, y, w = _batch_arrays(params, dataset, batch)
    v = params.views()
    if "W" in v:
        loss, per_example, gW, gb = kernels.linear_loss_grad(
            v["W"], v["b"], X, y, w, weight_decay
        )
        grad = np.concatenate([gW.ravel(), gb.ravel()])
    else:
        loss, per_example, gW1, gb1, gW2, gb2 = kernels.mlp_loss_grad(
            v["W1"], v["b1"], v["W2"], v["b2"], X, y, w, weight_decay
        )
        grad = np.concatenate([gW1.ravel(), gb1.ravel(), gW2.ravel(), gb2.ravel()])
    return float(loss), per_example, grad


def forward_loss(
    params: ModelParams, dataset: Dataset, batch: Batch, weight_decay: float = 0.0
) -> tuple[float, np.ndarray]:
    """Batch loss plus the per-example cross-entropies."""
    loss, per_example, _ = loss_and_gradient(params, dataset, batch, weight_decay)
    return loss, per_example


def gradient(
    params: ModelParams, dataset: Dataset, batch: Batch, weight_decay: float = 0.0
) -> np.ndarray:
    """Exact analytic gradient of :func:`forward_loss` w.r.t. the flat vector."""
    _, _, grad = loss_and_gradient(params, dataset, batch, weight_decay)
    return grad


def logits(params: ModelParams, X: np.ndarray) -> np.ndarray:
    v = params.views()
    X = np.ascontiguousarray(X, dtype=np.float64)
    if "W" in v:
        return kernels.linear_logits(v["W"], v["b"], X)
    return kernels.mlp_logits(v["W1"], v["b1"], v["W2"], v["b2"], X)


def sgd_step(params: ModelParams, grad: np.ndarray, eta: float) -> ModelParams:
    """One descent step; returns new params (inputs untouched)."""
    if eta <= 0:
        raise ParameterError("eta must be positive")
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != params.flat.shape:
        raise ParameterError("gradient layout does not match params")
    return ModelParams(params.flat - eta * grad, params.layout)


def evaluate(params: ModelParams, dataset: Dataset, subset: np.ndarray | None = None) -> float:
    """Top-1 accuracy; argmax ties break toward the lowest class index."""
    if subset is None:
        X, y = dataset.features, dataset.labels
    else:
        subset = np.asarray(subset, dtype=np.int64)
        X, y = dataset.features[subset], dataset.labels[subset]
    preds = np.argmax(logits(params, X), axis=1)
    return float(np.mean(preds == y))


def _kink_safe_mask(params: ModelParams, X: np.ndarray, epsilon: float) -> np.ndarray:
    """Coordinates whose +/-epsilon probe cannot flip a ReLU unit.

    A first-layer coordinate feeding hidden unit u shifts that unit's
    pre-activation by at most epsilon * |x| per example, so any coordinate
    within that margin (plus a 1e-6 floor) of a zero pre-activation is
    excluded from the finite-difference comparison.
    """
    mask = np.ones(params.flat.shape[0], dtype=bool)
    v = params.views()
    if "W1" not in v:
        return mask
    pre = np.abs(X @ v["W1"] + v["b1"])  # (n, h)
    margin = 1e-6
    # W1[j, u] is unsafe if any example has |pre[i, u]| <= eps * |X[i, j]| + floor
    unsafe_w1 = (pre[:, None, :] <= epsilon * np.abs(X)[:, :, None] + margin).any(axis=0)
    unsafe_b1 = (pre <= epsilon + margin).any(axis=0)
    d, h = unsafe_w1.shape
    mask[: d * h] = ~unsafe_w1.ravel()
    mask[d * h : d * h + h] = ~unsafe_b1
    return mask


def fd_check(
    params: ModelParams,
    dataset: Dataset,
    batch: Batch,
    epsilon: float = 1e-5,
    weight_decay: float = 0.0,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Error per coordinate is ``|fd - analytic| / max(1, |analytic|)``. MLP
    coordinates that could flip a ReLU inside the probe are skipped (the loss
    is not differentiable there).
    """
    if not 1e-8 < epsilon < 1e-3:
        raise ParameterError("epsilon must lie in (1e-8, 1e-3)")
    X = np.ascontiguousarray(dataset.features[batch.indices])
    analytic = gradient(params, dataset, batch, weight_decay)
    mask = _kink_safe_mask(params, X, epsilon)

    worst = 0.0
    probe = params.copy()
    flat = probe.flat
    for k in np.flatnonzero(mask):
        original = flat[k]
        flat[k] = original + epsilon
        plus, _ = forward_loss(probe, dataset, batch, weight_decay)
        flat[k] = original - epsilon
        minus, _ = forward_loss(probe, dataset, batch, weight_decay)
        flat[k] = original
        fd = (plus - minus) / (2.0 * epsilon)
        rel = abs(fd - analytic[k]) / max(1.0, abs(analytic[k]))
        if rel > worst:
            worst = rel
    return worst


_PARAMS_MAGIC = "fedsim-params v1"


def _write_layout(fh, spec: ModelSpec) -> None:
    fh.write(
        f"kind={spec.kind} feature_dim={spec.feature_dim} "
        f"num_classes={spec.num_classes} hidden_dim={spec.hidden_dim}\n"
    )
    for name, shape in spec.layout():
        fh.write("layout " + name + " " + " ".join(str(s) for s in shape) + "\n")


def _check_layout(lines: list[str], at: int, spec: ModelSpec, path) -> int:
    expected_head = (
        f"kind={spec.kind} feature_dim={spec.feature_dim} "
        f"num_classes={spec.num_classes} hidden_dim={spec.hidden_dim}"
    )
    if at >= len(lines) or lines[at] != expected_head:
        raise DataFormatError(f"{path}: stored model spec does not match {spec.kind} dims")
    at += 1
    for name, shape in spec.layout():
        expected = "layout " + name + " " + " ".join(str(s) for s in shape)
        if at >= len(lines) or lines[at] != expected:
            raise DataFormatError(f"{path}: layout mismatch at entry {name!r}")
        at += 1
    return at


def _read_vector(lines: list[str], at: int, count: int, path) -> tuple[np.ndarray, int]:
    if at + count > len(lines):
        raise DataFormatError(f"{path}: truncated value block")
    try:
        values = np.array([float(lines[at + i]) for i in range(count)])
    except ValueError:
        raise DataFormatError(f"{path}: non-numeric parameter value") from None
    return values, at + count


def save_params(params: ModelParams, spec: ModelSpec, path) -> None:
    """Write the flat vector with a layout header (round-trip precision)."""
    with open(path, "w") as fh:
        fh.write(_PARAMS_MAGIC + "\n")
        _write_layout(fh, spec)
        for value in params.flat:
            fh.write(f"{value:.17g}\n")


def load_params(path, spec: ModelSpec) -> ModelParams:
    """Load a params file, validating the stored layout against ``spec``."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != _PARAMS_MAGIC:
        raise DataFormatError(f"{path}: not a fedsim params file")
    at = _check_layout(lines, 1, spec, path)
    flat, at = _read_vector(lines, at, spec.num_params, path)
    if at != len(lines):
        raise DataFormatError(f"{path}: trailing content after parameter block")
    return ModelParams(flat, spec.layout())
