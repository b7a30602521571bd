"""Network layers with hand-written forward/backward passes.

Every layer follows the same contract: ``forward(x, training) -> (y,
cache)`` is pure given the layer state, and ``backward(d_y, cache) ->
d_x`` consumes exactly the cache produced by the matching forward call
while accumulating parameter gradients into each ``Tensor.grad``.
Caches are opaque tuples owned by the layer that produced them.
"""

from __future__ import annotations

import numpy as np

from . import numerics
from .errors import ShapeError
from .numerics import Tensor, conv2d_backward, conv2d_forward, uniform_init

CLIP_LO = 0.0
CLIP_HI = 20.0


class Layer:
    def params(self):
        return []

    def forward(self, x, training: bool = False):
        raise NotImplementedError

    def backward(self, d_y, cache):
        raise NotImplementedError


class Conv2d(Layer):
    """Cross-correlation over (B, C, freq, time) maps with bias."""

    def __init__(self, in_channels, out_channels, kernel, stride, padding, rng, name="conv"):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = tuple(kernel)
        self.stride = tuple(stride)
        self.padding = tuple(padding)
        fan_in = in_channels * kernel[0] * kernel[1]
        self.w = Tensor(f"{name}.w", uniform_init(rng, (out_channels, in_channels, *kernel), fan_in))
        self.b = Tensor(f"{name}.b", np.zeros(out_channels))

    def params(self):
        return [self.w, self.b]

    def output_hw(self, hw):
        return numerics.conv_output_hw(hw, self.kernel, self.stride, self.padding)

    def forward(self, x, training: bool = False):
        return conv2d_forward(x, self.w.data, self.b.data, self.stride, self.padding)

    def backward(self, d_y, cache):
        d_x, d_w, d_b = conv2d_backward(d_y, cache)
        self.w.accumulate_grad(d_w)
        self.b.accumulate_grad(d_b)
        return d_x


class BatchNorm2d(Layer):
    """Per-channel batch norm over (B, C, H, W).

    Training mode normalizes with statistics of the current batch; a
    boolean ``mask`` of shape (B, W) restricts those statistics to valid
    time steps so zero padding never leaks into them. The output is also
    zeroed at masked-out positions, which keeps a padded batch forward
    identical to running each utterance alone (a later conv layer's
    boundary reads then see the same zeros its own padding would supply).
    Running statistics are updated as running = momentum * running +
    (1 - momentum) * batch and used verbatim in eval mode. Variance is
    the biased estimate in both roles.
    """

    def __init__(self, channels, momentum=0.9, eps=1e-5, name="bn"):
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self.gamma = Tensor(f"{name}.gamma", np.ones(channels))
        self.beta = Tensor(f"{name}.beta", np.zeros(channels))
        self.running_mean = np.zeros(channels, dtype=numerics.get_dtype())
        self.running_var = np.ones(channels, dtype=numerics.get_dtype())

    def params(self):
        return [self.gamma, self.beta]

    def buffers(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def load_buffers(self, bufs):
        self.running_mean = np.array(bufs["running_mean"], dtype=self.running_mean.dtype)
        self.running_var = np.array(bufs["running_var"], dtype=self.running_var.dtype)

    def forward(self, x, training: bool = False, mask=None):
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise ShapeError(f"batch norm over {self.channels} channels got input {x.shape}")
        g = self.gamma.data[None, :, None, None]
        b = self.beta.data[None, :, None, None]
        if mask is None:
            m = np.ones((x.shape[0], 1, 1, x.shape[3]), dtype=x.dtype)
        else:
            m = np.asarray(mask, dtype=x.dtype)[:, None, None, :]
        if not training:
            inv = 1.0 / np.sqrt(self.running_var + self.eps)
            x_hat = (x - self.running_mean[None, :, None, None]) * inv[None, :, None, None]
            return (x_hat * g + b) * m, ("eval", x_hat, inv, m)

        count = float(m.sum()) * x.shape[2]
        mean = (x * m).sum(axis=(0, 2, 3)) / count
        centered = x - mean[None, :, None, None]
        var = ((centered**2) * m).sum(axis=(0, 2, 3)) / count
        inv = 1.0 / np.sqrt(var + self.eps)
        x_hat = centered * inv[None, :, None, None]
        self.running_mean = self.momentum * self.running_mean + (1 - self.momentum) * mean
        self.running_var = self.momentum * self.running_var + (1 - self.momentum) * var
        return (x_hat * g + b) * m, ("train", x_hat, inv, m, count)

    def backward(self, d_y, cache):
        if cache[0] == "eval":
            _, x_hat, inv, m = cache
            d_ym = d_y * m
            self.gamma.accumulate_grad((d_ym * x_hat).sum(axis=(0, 2, 3)))
            self.beta.accumulate_grad(d_ym.sum(axis=(0, 2, 3)))
            return d_ym * self.gamma.data[None, :, None, None] * inv[None, :, None, None]

        _, x_hat, inv, m, count = cache
        # the forward output is masked, so gradient reaching masked-out
        # positions is discarded before it can touch the statistics
        d_ym = d_y * m
        self.gamma.accumulate_grad((d_ym * x_hat).sum(axis=(0, 2, 3)))
        self.beta.accumulate_grad(d_ym.sum(axis=(0, 2, 3)))
        g_inv = self.gamma.data[None, :, None, None] * inv[None, :, None, None]
        mean_dy = d_ym.sum(axis=(0, 2, 3)) / count
        mean_dy_xhat = (d_ym * x_hat).sum(axis=(0, 2, 3)) / count
        correction = mean_dy[None, :, None, None] + x_hat * mean_dy_xhat[None, :, None, None]
        return g_inv * (d_ym - m * correction)


class HardClip(Layer):
    """Elementwise clip to [0, 20]; gradient is zero outside the open interval."""

    def __init__(self, lo=CLIP_LO, hi=CLIP_HI):
        self.lo = lo
        self.hi = hi

    def forward(self, x, training: bool = False):
        inside = (x > self.lo) & (x < self.hi)
        return np.clip(x, self.lo, self.hi), inside

    def backward(self, d_y, cache):
        return d_y * cache


class Linear(Layer):
    """y = x @ W + b over the trailing axis of a 2-D input."""

    def __init__(self, in_features, out_features, rng, name="linear"):
        self.in_features = in_features
        self.out_features = out_features
        self.w = Tensor(f"{name}.w", uniform_init(rng, (in_features, out_features), in_features))
        self.b = Tensor(f"{name}.b", np.zeros(out_features))

    def params(self):
        return [self.w, self.b]

    def forward(self, x, training: bool = False):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeError(f"linear({self.in_features}->{self.out_features}) got input {x.shape}")
        return x @ self.w.data + self.b.data, x

    def backward(self, d_y, cache):
        x = cache
        self.w.accumulate_grad(x.T @ d_y)
        self.b.accumulate_grad(d_y.sum(axis=0))
        return d_y @ self.w.data.T


class LogSoftmax(Layer):
    """Row-wise log-softmax; every output row log-sum-exps to zero."""

    def forward(self, x, training: bool = False):
        shifted = x - x.max(axis=1, keepdims=True)
        log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        y = shifted - log_z
        return y, np.exp(y)

    def backward(self, d_y, cache):
        softmax = cache
        return d_y - softmax * d_y.sum(axis=1, keepdims=True)


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class GRUCell(Layer):
    """Single GRU step.

    Gate order is reset, update, candidate:

        r = sigmoid(W_ir x + b_ir + W_hr h + b_hr)
        z = sigmoid(W_iz x + b_iz + W_hz h + b_hz)
        n = tanh(W_in x + b_in + r * (W_hn h + b_hn))
        h' = (1 - z) * n + z * h

    Both bias vectors are kept separate; the candidate gate applies the
    reset gate to the recurrent half only, so they are not redundant.
    As a Layer, forward takes the concatenation [x, h] of length
    input_size + hidden_size and returns h'.
    """

    def __init__(self, input_size, hidden_size, rng, name="gru"):
        self.input_size = input_size
        self.hidden_size = hidden_size
        h = hidden_size
        self.w_ih = Tensor(f"{name}.w_ih", uniform_init(rng, (3 * h, input_size), input_size))
        self.w_hh = Tensor(f"{name}.w_hh", uniform_init(rng, (3 * h, h), h))
        self.b_ih = Tensor(f"{name}.b_ih", np.zeros(3 * h))
        self.b_hh = Tensor(f"{name}.b_hh", np.zeros(3 * h))

    def params(self):
        return [self.w_ih, self.w_hh, self.b_ih, self.b_hh]

    def step(self, gi, h_prev):
        """Advance one step from precomputed input projections.

        gi = W_ih x + b_ih (length 3h). Returns (h_new, cache).
        """
        h = self.hidden_size
        gh = self.w_hh.data @ h_prev + self.b_hh.data
        r = _sigmoid(gi[:h] + gh[:h])
        z = _sigmoid(gi[h : 2 * h] + gh[h : 2 * h])
        n = np.tanh(gi[2 * h :] + r * gh[2 * h :])
        h_new = (1.0 - z) * n + z * h_prev
        return h_new, (h_prev, gh, r, z, n)

    def step_backward(self, d_h, cache):
        """Gradients of one step; returns (d_gi, d_h_prev) and
        accumulates into w_hh/b_hh. The caller owns d_gi -> (x, w_ih, b_ih)."""
        h = self.hidden_size
        h_prev, gh, r, z, n = cache
        d_n = d_h * (1.0 - z)
        d_z = d_h * (h_prev - n)
        d_h_prev = d_h * z

        d_pre_n = d_n * (1.0 - n * n)
        d_r = d_pre_n * gh[2 * h :]
        d_gh_n = d_pre_n * r
        d_pre_z = d_z * z * (1.0 - z)
        d_pre_r = d_r * r * (1.0 - r)

        d_gi = np.concatenate([d_pre_r, d_pre_z, d_pre_n])
        d_gh = np.concatenate([d_pre_r, d_pre_z, d_gh_n])
        self.w_hh.accumulate_grad(np.outer(d_gh, h_prev))
        self.b_hh.accumulate_grad(d_gh)
        d_h_prev = d_h_prev + self.w_hh.data.T @ d_gh
        return d_gi, d_h_prev

    # Layer-contract adapter over the concatenated [x, h_prev] vector.
    def forward(self, x, training: bool = False):
        xi = x[: self.input_size]
        h_prev = x[self.input_size :]
        gi = self.w_ih.data @ xi + self.b_ih.data
        h_new, cache = self.step(gi, h_prev)
        return h_new, (xi, cache)

    def backward(self, d_y, cache):
        xi, step_cache = cache
        d_gi, d_h_prev = self.step_backward(d_y, step_cache)
        self.w_ih.accumulate_grad(np.outer(d_gi, xi))
        self.b_ih.accumulate_grad(d_gi)
        d_x = self.w_ih.data.T @ d_gi
        return np.concatenate([d_x, d_h_prev])


class GRU(Layer):
    """Unidirectional GRU over a (T, input_size) sequence, h_0 = 0."""

    def __init__(self, input_size, hidden_size, rng, name="gru"):
        self.cell = GRUCell(input_size, hidden_size, rng, name=name)
        self.input_size = input_size
        self.hidden_size = hidden_size

    def params(self):
        return self.cell.params()

    def forward(self, x, training: bool = False):
        if x.ndim != 2 or x.shape[1] != self.input_size:
            raise ShapeError(f"GRU({self.input_size}->{self.hidden_size}) got input {x.shape}")
        t_len = x.shape[0]
        gi_all = x @ self.cell.w_ih.data.T + self.cell.b_ih.data
        h = np.zeros(self.hidden_size, dtype=x.dtype)
        outputs = np.empty((t_len, self.hidden_size), dtype=x.dtype)
        caches = []
        for t in range(t_len):
            h, c = self.cell.step(gi_all[t], h)
            outputs[t] = h
            caches.append(c)
        return outputs, (x, caches)

    def backward(self, d_y, cache):
        x, caches = cache
        t_len = x.shape[0]
        d_gi_all = np.zeros((t_len, 3 * self.hidden_size), dtype=x.dtype)
        d_h = np.zeros(self.hidden_size, dtype=x.dtype)
        for t in range(t_len - 1, -1, -1):
            d_gi_all[t], d_h = self.cell.step_backward(d_y[t] + d_h, caches[t])
        self.cell.w_ih.accumulate_grad(d_gi_all.T @ x)
        self.cell.b_ih.accumulate_grad(d_gi_all.sum(axis=0))
        return d_gi_all @ self.cell.w_ih.data


class BiGRU(Layer):
    """Bidirectional GRU whose per-step outputs are summed, not concatenated,
    so the layer output width equals the hidden size."""

    def __init__(self, input_size, hidden_size, rng, name="bigru"):
        self.fw = GRU(input_size, hidden_size, rng, name=f"{name}.fw")
        self.bw = GRU(input_size, hidden_size, rng, name=f"{name}.bw")
        self.input_size = input_size
        self.hidden_size = hidden_size

    def params(self):
        return self.fw.params() + self.bw.params()

    def forward(self, x, training: bool = False):
        y_f, c_f = self.fw.forward(x, training)
        y_b, c_b = self.bw.forward(x[::-1], training)
        return y_f + y_b[::-1], (c_f, c_b)

    def backward(self, d_y, cache):
        c_f, c_b = cache
        d_x = self.fw.backward(d_y, c_f)
        d_x = d_x + self.bw.backward(d_y[::-1], c_b)[::-1]
        return d_x
