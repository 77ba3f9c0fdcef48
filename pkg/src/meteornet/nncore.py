"""Minimal reverse-mode differentiable compute core.

Dense float64 tensors on a dynamically built tape: each operation records
its parents and a closure that routes the output gradient back to them.
``backward`` walks the tape in reverse topological order with a fixed
accumulation order, so gradients are bit-reproducible. Gradients are only
materialized for tensors created with ``requires_grad`` (or downstream of
one).

The op set is intentionally small: shared-weight dense layers, element-wise
max pooling over row sets (ties route to the smallest row index), gather and
scatter for neighborhood machinery, padding/patch extraction for dense
convolution, a stabilized softmax cross-entropy, inverted dropout, and mean
reductions. ``grad_check`` verifies any scalar-valued computation against
central finite differences.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .util import InputError, TrainingError, as_float_array


class Tensor:
    """A float64 array with an optional gradient and tape linkage."""

    __slots__ = ("values", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, values, requires_grad: bool = False, _parents=(), _backward=None):
        if _parents:
            self.values = values  # op outputs are trusted float64 arrays
        else:
            self.values = as_float_array(values, "tensor values")
        self.grad = None
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in _parents)
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.values.shape

    def item(self) -> float:
        return float(self.values)

    def backward(self):
        """Accumulate gradients of this (scalar or any-shape) tensor's parents."""
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                stack.append((parent, False))
        for node in topo:
            node.grad = np.zeros_like(node.values)
        self.grad = np.ones_like(self.values)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def constant(values) -> Tensor:
    return Tensor(values, requires_grad=False)


def parameter(values) -> Tensor:
    return Tensor(values, requires_grad=True)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else constant(x)


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.values + b.values, _parents=(a, b))

    def backward(g):
        if a.requires_grad:
            a.grad += _unbroadcast(g, a.values.shape)
        if b.requires_grad:
            b.grad += _unbroadcast(g, b.values.shape)

    out._backward = backward
    return out


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.values - b.values, _parents=(a, b))

    def backward(g):
        if a.requires_grad:
            a.grad += _unbroadcast(g, a.values.shape)
        if b.requires_grad:
            b.grad -= _unbroadcast(g, b.values.shape)

    out._backward = backward
    return out


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.values * b.values, _parents=(a, b))

    def backward(g):
        if a.requires_grad:
            a.grad += _unbroadcast(g * b.values, a.values.shape)
        if b.requires_grad:
            b.grad += _unbroadcast(g * a.values, b.values.shape)

    out._backward = backward
    return out


def scale(a: Tensor, factor: float) -> Tensor:
    out = Tensor(a.values * factor, _parents=(a,))

    def backward(g):
        if a.requires_grad:
            a.grad += g * factor

    out._backward = backward
    return out


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.values.ndim != 2 or b.values.ndim != 2 or a.values.shape[1] != b.values.shape[0]:
        raise InputError(
            f"matmul shape mismatch: {a.values.shape} @ {b.values.shape}"
        )
    out = Tensor(a.values @ b.values, _parents=(a, b))

    def backward(g):
        if a.requires_grad:
            a.grad += g @ b.values.T
        if b.requires_grad:
            b.grad += a.values.T @ g

    out._backward = backward
    return out


def relu(a: Tensor) -> Tensor:
    mask = a.values > 0
    out = Tensor(np.where(mask, a.values, 0.0), _parents=(a,))

    def backward(g):
        if a.requires_grad:
            a.grad += g * mask

    out._backward = backward
    return out


def concat_cols(parts) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    if not parts:
        raise InputError("concat_cols needs at least one tensor")
    rows = parts[0].values.shape[0]
    for p in parts:
        if p.values.ndim != 2 or p.values.shape[0] != rows:
            raise InputError("concat_cols parts must be 2-D with equal row counts")
    out = Tensor(np.concatenate([p.values for p in parts], axis=1), _parents=tuple(parts))
    widths = [p.values.shape[1] for p in parts]

    def backward(g):
        offset = 0
        for p, w in zip(parts, widths):
            if p.requires_grad:
                p.grad += g[:, offset:offset + w]
            offset += w

    out._backward = backward
    return out


def gather_rows(a: Tensor, indices) -> Tensor:
    """Select rows ``a[indices]``; repeated indices accumulate in backward."""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1:
        raise InputError("gather_rows indices must be 1-D")
    if a.values.ndim != 2:
        raise InputError("gather_rows expects a 2-D tensor")
    if idx.size and (idx.min() < 0 or idx.max() >= a.values.shape[0]):
        raise InputError("gather_rows index out of range")
    out = Tensor(a.values[idx], _parents=(a,))

    def backward(g):
        if a.requires_grad:
            np.add.at(a.grad, idx, g)

    out._backward = backward
    return out


def pad(a: Tensor, pad_width) -> Tensor:
    """Zero padding; ``pad_width`` follows numpy's (before, after) per axis."""
    pad_width = tuple((int(lo), int(hi)) for lo, hi in pad_width)
    out = Tensor(np.pad(a.values, pad_width), _parents=(a,))
    slices = tuple(slice(lo, lo + s) for (lo, _), s in zip(pad_width, a.values.shape))

    def backward(g):
        if a.requires_grad:
            a.grad += g[slices]

    out._backward = backward
    return out


def reshape(a: Tensor, shape) -> Tensor:
    out = Tensor(a.values.reshape(shape), _parents=(a,))

    def backward(g):
        if a.requires_grad:
            a.grad += g.reshape(a.values.shape)

    out._backward = backward
    return out


def transpose(a: Tensor, axes=None) -> Tensor:
    out = Tensor(np.ascontiguousarray(np.transpose(a.values, axes)), _parents=(a,))
    inverse = None if axes is None else np.argsort(axes)

    def backward(g):
        if a.requires_grad:
            a.grad += np.transpose(g, inverse)

    out._backward = backward
    return out


def extract_patches(flat: Tensor, base_indices: np.ndarray, sample_stride: int,
                    num_samples: int) -> Tensor:
    """Gather convolution patches from a flattened padded batch.

    ``flat`` holds ``num_samples`` blocks of ``sample_stride`` values each;
    ``base_indices`` (positions x patch) indexes within one block. The output
    stacks the per-sample patch matrices vertically.
    """
    if flat.values.ndim != 1:
        raise InputError("extract_patches expects a flat 1-D tensor")
    if flat.values.size != sample_stride * num_samples:
        raise InputError("extract_patches: stride and sample count do not cover the tensor")
    parts = [
        flat.values[base_indices + s * sample_stride] for s in range(num_samples)
    ]
    out = Tensor(np.concatenate(parts, axis=0), _parents=(flat,))
    rows_per_sample = base_indices.shape[0]
    flat_base = base_indices.ravel()

    def backward(g):
        if not flat.requires_grad:
            return
        for s in range(num_samples):
            block = g[s * rows_per_sample:(s + 1) * rows_per_sample]
            flat.grad[s * sample_stride:(s + 1) * sample_stride] += np.bincount(
                flat_base, weights=block.ravel(), minlength=sample_stride
            )

    out._backward = backward
    return out


def segment_max(a: Tensor, offsets: np.ndarray) -> Tensor:
    """Per-channel maximum over row segments.

    ``offsets`` are the (m + 1) segment boundaries; every segment must be
    nonempty. The backward pass routes each output channel's gradient
    entirely to the row that attained the maximum, ties toward the smaller
    row index.
    """
    offsets = np.asarray(offsets, dtype=np.int64)
    if a.values.ndim != 2:
        raise InputError("segment_max expects a 2-D tensor")
    if offsets.ndim != 1 or offsets.size < 2 or offsets[0] != 0 \
            or offsets[-1] != a.values.shape[0] or (np.diff(offsets) < 1).any():
        raise InputError("segment offsets must cover all rows with nonempty segments")
    m = offsets.size - 1
    cols = a.values.shape[1]
    vals = np.empty((m, cols))
    argrows = np.empty((m, cols), dtype=np.int64)
    col_range = np.arange(cols)
    for s in range(m):
        block = a.values[offsets[s]:offsets[s + 1]]
        arg = block.argmax(axis=0)
        argrows[s] = arg + offsets[s]
        vals[s] = block[arg, col_range]
    out = Tensor(vals, _parents=(a,))

    def backward(g):
        if a.requires_grad:
            np.add.at(a.grad, (argrows.ravel(), np.tile(col_range, m)), g.ravel())

    out._backward = backward
    return out


def max_pool_rows(a: Tensor) -> Tensor:
    """Element-wise maximum over all rows, returning a 1-D tensor.

    Gradient routes each channel to the first row attaining the maximum.
    """
    if a.values.ndim != 2 or a.values.shape[0] < 1:
        raise InputError("max_pool_rows expects a nonempty 2-D tensor")
    pooled = segment_max(a, np.array([0, a.values.shape[0]]))
    return reshape(pooled, (a.values.shape[1],))


def softmax_cross_entropy(logits: Tensor, labels):
    """Stabilized softmax cross-entropy.

    Accepts a single logit vector with an integer label, or a (batch, k)
    matrix with a label array (the loss is then the batch mean). Returns a
    scalar tensor whose gradient is softmax minus one-hot (mean-scaled).
    """
    single = logits.values.ndim == 1
    values = logits.values[None, :] if single else logits.values
    if values.ndim != 2 or values.shape[1] < 2:
        raise InputError("logits must have at least two classes")
    label_arr = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if label_arr.shape[0] != values.shape[0]:
        raise InputError("label count does not match logit rows")
    if (label_arr < 0).any() or (label_arr >= values.shape[1]).any():
        raise InputError(f"labels must lie in 0..{values.shape[1] - 1}")
    shifted = values - values.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    n = values.shape[0]
    rows = np.arange(n)
    loss = float(-(shifted[rows, label_arr] - np.log(exp.sum(axis=1))).mean())
    out = Tensor(np.float64(loss), _parents=(logits,))

    def backward(g):
        if logits.requires_grad:
            grad = probs.copy()
            grad[rows, label_arr] -= 1.0
            grad *= float(g) / n
            logits.grad += grad[0] if single else grad

    out._backward = backward
    return out


def dropout(a: Tensor, rate: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: kept units are scaled by 1/(1 - rate).

    Identity when not training or when the rate is zero.
    """
    if not 0.0 <= rate < 1.0:
        raise InputError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        out = Tensor(a.values, _parents=(a,))

        def backward_identity(g):
            if a.requires_grad:
                a.grad += g

        out._backward = backward_identity
        return out
    if rng is None:
        raise InputError("dropout in training mode needs an rng")
    mask = (rng.random(a.values.shape) >= rate) / (1.0 - rate)
    out = Tensor(a.values * mask, _parents=(a,))

    def backward(g):
        if a.requires_grad:
            a.grad += g * mask

    out._backward = backward
    return out


def reduce_mean(a: Tensor) -> Tensor:
    out = Tensor(np.float64(a.values.mean()), _parents=(a,))
    inv = 1.0 / a.values.size

    def backward(g):
        if a.requires_grad:
            a.grad += float(g) * inv

    out._backward = backward
    return out


def mse_loss(pred: Tensor, target) -> Tensor:
    """Mean squared error against a constant target."""
    diff = sub(pred, _as_tensor(target))
    return reduce_mean(mul(diff, diff))


# ---------------------------------------------------------------------------
# shared MLPs


@dataclass(frozen=True)
class MLPSpec:
    """Layer widths of a shared multi-layer perceptron.

    Hidden and output layers all apply a rectified-linear activation unless
    ``final_activation`` is off (prediction heads emit raw values).
    """

    widths: tuple
    final_activation: bool = True

    def __post_init__(self):
        widths = tuple(int(w) for w in self.widths)
        if not widths or any(w < 1 for w in widths):
            raise InputError(f"MLP widths must be positive, got {self.widths}")
        object.__setattr__(self, "widths", widths)


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, (fan_in, fan_out))


class SharedMLP:
    """An MLP applied row-wise with identical weights for every row."""

    def __init__(self, rng: np.random.Generator, in_width: int, spec: MLPSpec,
                 name: str = "mlp"):
        if in_width < 1:
            raise InputError(f"in_width must be positive, got {in_width}")
        self.spec = spec
        self.name = name
        self.in_width = in_width
        self.layers = []
        fan_in = in_width
        for depth, width in enumerate(spec.widths):
            weight = parameter(glorot_uniform(rng, fan_in, width))
            bias = parameter(np.zeros(width))
            self.layers.append((weight, bias))
            fan_in = width
        self.out_width = fan_in

    def __call__(self, rows: Tensor) -> Tensor:
        if rows.values.ndim != 2 or rows.values.shape[1] != self.in_width:
            raise InputError(
                f"{self.name}: expected input width {self.in_width}, "
                f"got shape {rows.values.shape}"
            )
        out = rows
        last = len(self.layers) - 1
        for depth, (weight, bias) in enumerate(self.layers):
            out = add(matmul(out, weight), bias)
            if depth < last or self.spec.final_activation:
                out = relu(out)
        return out

    def parameters(self) -> dict:
        params = {}
        for depth, (weight, bias) in enumerate(self.layers):
            params[f"{self.name}.{depth}.weight"] = weight
            params[f"{self.name}.{depth}.bias"] = bias
        return params


def shared_mlp_forward(mlp: SharedMLP, rows: Tensor) -> Tensor:
    """Apply a shared MLP independently to every row."""
    return mlp(rows)


# ---------------------------------------------------------------------------
# optimizer


class Adam:
    """Bias-corrected adaptive-moment optimizer over a named parameter dict."""

    def __init__(self, params: dict, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = dict(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.first_moment = {k: np.zeros_like(p.values) for k, p in self.params.items()}
        self.second_moment = {k: np.zeros_like(p.values) for k, p in self.params.items()}

    def step(self):
        """One update from the gradients currently stored on the parameters."""
        self.step_count += 1
        correct1 = 1.0 - self.beta1**self.step_count
        correct2 = 1.0 - self.beta2**self.step_count
        for name, p in self.params.items():
            grad = p.grad
            if grad is None:
                raise TrainingError(f"parameter {name} has no gradient; run backward first")
            if not np.isfinite(grad).all():
                raise TrainingError(f"non-finite gradient for parameter {name}")
            m = self.first_moment[name]
            v = self.second_moment[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * grad**2
            p.values -= self.lr * (m / correct1) / (np.sqrt(v / correct2) + self.eps)


def adam_step(state: Adam):
    """Apply one optimizer update (alias for :meth:`Adam.step`)."""
    state.step()


# ---------------------------------------------------------------------------
# gradient verification


def grad_check(fn, wrt, eps: float = 1e-5, max_entries_per_tensor: int | None = None,
               rng: np.random.Generator | None = None) -> float:
    """Worst relative error between analytic and central-difference gradients.

    ``fn`` must rebuild its graph from the current values of the ``wrt``
    tensors and return a scalar tensor; it has to be deterministic. Large
    tensors can be spot-checked by capping ``max_entries_per_tensor``.
    Relative error is ``|a - n| / max(1, |a|, |n|)``.
    """
    wrt = list(wrt)
    out = fn()
    if out.values.ndim != 0:
        raise InputError("grad_check expects fn to return a scalar tensor")
    out.backward()
    analytic = [
        np.zeros_like(t.values) if t.grad is None else t.grad.copy() for t in wrt
    ]

    worst = 0.0
    for tensor, grad in zip(wrt, analytic):
        flat = tensor.values.reshape(-1)
        size = flat.size
        if max_entries_per_tensor is not None and size > max_entries_per_tensor:
            if rng is None:
                rng = np.random.default_rng(0)
            entries = rng.choice(size, size=max_entries_per_tensor, replace=False)
        else:
            entries = range(size)
        gflat = grad.reshape(-1)
        for idx in entries:
            original = flat[idx]
            flat[idx] = original + eps
            upper = fn().item()
            flat[idx] = original - eps
            lower = fn().item()
            flat[idx] = original
            numeric = (upper - lower) / (2.0 * eps)
            denom = max(1.0, abs(gflat[idx]), abs(numeric))
            worst = max(worst, abs(gflat[idx] - numeric) / denom)
    return worst
