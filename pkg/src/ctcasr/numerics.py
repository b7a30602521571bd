"""Array plumbing shared by every layer.

Single global precision switch (64-bit for gradient checks, 32-bit for
training), a named parameter container with a gradient slot, matmul and
conv2d primitives with explicit gradient rules, and a central
finite-difference gradient checker for anything that implements the
layer contract (``forward(x, training) -> (y, cache)``,
``backward(d_y, cache) -> d_x`` accumulating parameter gradients).

There is no autodiff tape anywhere in the package; every backward pass
is written out by hand and validated against ``check_gradient``.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from .errors import ContractViolation, ShapeError

_PRECISIONS = {"float32": np.float32, "float64": np.float64}
_dtype = np.float32
_finite_checks = False


def set_precision(name: str) -> None:
    """Select the dtype used by newly created tensors ("float32"/"float64")."""
    global _dtype
    if name not in _PRECISIONS:
        raise ValueError(f"unknown precision {name!r}; expected one of {sorted(_PRECISIONS)}")
    _dtype = _PRECISIONS[name]


def precision() -> str:
    return "float64" if _dtype is np.float64 else "float32"


def get_dtype():
    return _dtype


@contextmanager
def using_precision(name: str):
    """Temporarily switch global precision (used heavily by the test suite)."""
    old = precision()
    set_precision(name)
    try:
        yield
    finally:
        set_precision(old)


def set_finite_checks(enabled: bool) -> None:
    """Debug mode: layers assert all outputs are finite when enabled."""
    global _finite_checks
    _finite_checks = bool(enabled)


def finite_checks_enabled() -> bool:
    return _finite_checks


def assert_finite(arr, what: str) -> None:
    if _finite_checks and not np.all(np.isfinite(arr)):
        raise ContractViolation(f"non-finite values in {what}")


def as_dtype(x):
    return np.asarray(x, dtype=_dtype)


class Tensor:
    """Named dense array with a same-shape gradient slot.

    Data is stored row-major and contiguous. The gradient buffer is
    allocated lazily on first use so eval-only code never pays for it;
    reading ``.grad`` always yields an array (zeros until something
    accumulates into it).
    """

    __slots__ = ("name", "data", "_grad")

    def __init__(self, name: str, data):
        self.name = name
        self.data = np.ascontiguousarray(data, dtype=_dtype)
        self._grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            self._grad = np.zeros_like(self.data)
        return self._grad

    def zero_grad(self) -> None:
        if self._grad is not None:
            self._grad.fill(0.0)

    def accumulate_grad(self, delta) -> None:
        if self._grad is None:
            self._grad = np.zeros_like(self.data)
        self._grad += delta
        assert_finite(self._grad, f"gradient of {self.name}")

    def __repr__(self):
        return f"Tensor({self.name!r}, shape={self.data.shape})"


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    """uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)), the init used everywhere."""
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(_dtype)


def matmul(a, b) -> np.ndarray:
    """2-D matrix product with an explicit inner-dimension check."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} vs {b.shape}")
    out = a @ b
    assert_finite(out, "matmul output")
    return out


def matmul_grads(a, b, d_out):
    """Gradients of ``matmul(a, b)`` with respect to both operands."""
    return d_out @ np.asarray(b).T, np.asarray(a).T @ d_out


def _conv_out_len(n: int, k: int, s: int, p: int) -> int:
    return (n + 2 * p - k) // s + 1


def conv_output_hw(hw, kernel, stride, padding):
    """(H', W') = floor((n + 2p - k)/s) + 1 per axis; errors if non-positive."""
    out = tuple(_conv_out_len(n, k, s, p) for n, k, s, p in zip(hw, kernel, stride, padding))
    if min(out) < 1:
        raise ShapeError(
            f"conv kernel {kernel} with stride {stride}, padding {padding} "
            f"does not fit input plane {hw}"
        )
    return out


def _im2col(xp, kernel, stride, out_hw):
    """(B, C, Hp, Wp) padded input -> (B, C*kH*kW, Ho*Wo) patch matrix."""
    b, c, _, _ = xp.shape
    k_h, k_w = kernel
    s_h, s_w = stride
    h_o, w_o = out_hw
    cols = np.empty((b, c, k_h, k_w, h_o, w_o), dtype=xp.dtype)
    for i in range(k_h):
        for j in range(k_w):
            cols[:, :, i, j] = xp[:, :, i : i + s_h * h_o : s_h, j : j + s_w * w_o : s_w]
    return cols.reshape(b, c * k_h * k_w, h_o * w_o)


def conv2d_forward(x, w, b=None, stride=(1, 1), padding=(0, 0)):
    """Batched cross-correlation.

    x: (B, C_in, H, W), w: (C_out, C_in, kH, kW), b: (C_out,) or None.
    Returns (y, cache) with y of shape (B, C_out, H', W').
    """
    x = np.asarray(x)
    w = np.asarray(w)
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input/kernels, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape} vs kernels {w.shape}")
    p_h, p_w = padding
    out_hw = conv_output_hw(x.shape[2:], w.shape[2:], stride, padding)
    xp = np.pad(x, ((0, 0), (0, 0), (p_h, p_h), (p_w, p_w)))
    cols = _im2col(xp, w.shape[2:], stride, out_hw)
    wmat = w.reshape(w.shape[0], -1)
    y = wmat @ cols  # (B, C_out, Ho*Wo) by broadcasting over the batch axis
    if b is not None:
        y = y + np.asarray(b)[:, None]
    y = y.reshape(x.shape[0], w.shape[0], *out_hw)
    assert_finite(y, "conv2d output")
    cache = (x.shape, cols, w, stride, padding, out_hw, b is not None)
    return y, cache


def conv2d_backward(d_y, cache):
    """Gradients of conv2d_forward; returns (d_x, d_w, d_b)."""
    x_shape, cols, w, stride, padding, out_hw, has_bias = cache
    b_sz, c_in, h, w_in = x_shape
    k_h, k_w = w.shape[2:]
    s_h, s_w = stride
    p_h, p_w = padding
    h_o, w_o = out_hw
    d_y2 = d_y.reshape(b_sz, w.shape[0], h_o * w_o)
    d_w = np.einsum("bon,bkn->ok", d_y2, cols).reshape(w.shape)
    d_b = d_y2.sum(axis=(0, 2)) if has_bias else None
    d_cols = w.reshape(w.shape[0], -1).T @ d_y2  # (B, K, N)
    d_cols = d_cols.reshape(b_sz, c_in, k_h, k_w, h_o, w_o)
    d_xp = np.zeros((b_sz, c_in, h + 2 * p_h, w_in + 2 * p_w), dtype=d_y.dtype)
    for i in range(k_h):
        for j in range(k_w):
            d_xp[:, :, i : i + s_h * h_o : s_h, j : j + s_w * w_o : s_w] += d_cols[:, :, i, j]
    d_x = d_xp[:, :, p_h : p_h + h, p_w : p_w + w_in]
    return d_x, d_w, d_b


def conv2d(x, w, b=None, stride=(1, 1), padding=(0, 0)) -> np.ndarray:
    """Single-image convolution: (C_in, H, W) -> (C_out, H', W')."""
    x = np.asarray(x)
    if x.ndim != 3:
        raise ShapeError(f"conv2d single-image input must be 3-D, got {x.shape}")
    y, _ = conv2d_forward(x[None], w, b, stride, padding)
    return y[0]


def check_gradient(layer, x, epsilon: float = 1e-5, training: bool = False, rng=None) -> float:
    """Compare the layer's analytic gradients against central differences.

    The scalar loss is a fixed random linear functional of the output,
    sum(R * forward(x)). Returns the maximum elementwise relative error
    over the input gradient and all parameter gradients. The relative
    error of element pairs (a, n) is |a - n| / max(|a|, |n|, floor)
    where floor is 1e-5 times the largest gradient magnitude observed,
    so that near-zero entries are judged on the tensor's own scale.

    Run under float64 precision; float32 rounding swamps the epsilon
    used here. Raises ContractViolation if two forward calls disagree.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    x = as_dtype(np.asarray(x))

    y_first, _ = layer.forward(x, training=training)
    y, cache = layer.forward(x, training=training)
    if not np.array_equal(y_first, y):
        raise ContractViolation(f"{type(layer).__name__}.forward is not deterministic")
    proj = rng.standard_normal(y.shape).astype(x.dtype)

    params = list(layer.params())
    for p in params:
        p.zero_grad()
    d_x = layer.backward(proj.copy(), cache)
    analytic = [np.asarray(d_x, dtype=x.dtype).copy()] + [p.grad.copy() for p in params]

    def loss_at():
        out, _ = layer.forward(x, training=training)
        return float(np.sum(proj * out))

    def central_diff(buf):
        grad = np.zeros_like(buf)
        flat = buf.reshape(-1)
        g_flat = grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            hi = loss_at()
            flat[i] = orig - epsilon
            lo = loss_at()
            flat[i] = orig
            g_flat[i] = (hi - lo) / (2.0 * epsilon)
        return grad

    numeric = [central_diff(x)] + [central_diff(p.data) for p in params]

    scale = max(
        1.0,
        max(float(np.max(np.abs(g))) for g in analytic + numeric),
    )
    floor = 1e-5 * scale
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst
