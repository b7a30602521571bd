"""Acoustic model: convolutional front end, BiGRU stack, CTC output head.

Three convolution front ends are registered. "DS2" is the classic
large-kernel pair (41x11 then 21x11). "BlockA" and "BlockB" replace it
with small kernels: a 7x3 opening layer followed by 3x3 layers, where
only the first layer is strided (2 in frequency, 2 in time) and every
later layer runs at stride 1 with same-shape padding. Every conv layer
is followed by batch norm and a hard clip to [0, 20].

The flatten stage turns the conv output (C, F', T'') into one
C*F'-wide vector per time step; the BiGRU stack and a linear layer map
those to log-probabilities over the alphabet plus blank.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics
from .errors import ConfigError, ShapeError
from .layers import BatchNorm2d, BiGRU, Conv2d, HardClip, Linear, LogSoftmax


@dataclass(frozen=True)
class ConvLayerSpec:
    in_channels: int
    out_channels: int
    kernel: tuple[int, int]  # (frequency, time)
    stride: tuple[int, int]
    padding: tuple[int, int]

    def __post_init__(self):
        if min(self.in_channels, self.out_channels) < 1:
            raise ConfigError(f"conv layer needs positive channel counts, got {self}")
        if min(self.kernel) < 1 or min(self.stride) < 1:
            raise ConfigError(f"conv kernel and stride must be positive, got {self}")
        if min(self.padding) < 0:
            raise ConfigError(f"conv padding must be non-negative, got {self}")

    def output_hw(self, hw):
        return numerics.conv_output_hw(hw, self.kernel, self.stride, self.padding)


@dataclass(frozen=True)
class ConvBlockSpec:
    name: str
    layers: tuple[ConvLayerSpec, ...]

    def __post_init__(self):
        for prev, cur in zip(self.layers, self.layers[1:]):
            if prev.out_channels != cur.in_channels:
                raise ConfigError(
                    f"block {self.name}: layer channel chain broken "
                    f"({prev.out_channels} -> {cur.in_channels})"
                )

    def output_hw(self, hw):
        for layer in self.layers:
            hw = layer.output_hw(hw)
        return hw

    def output_time_len(self, t: int) -> int:
        """Valid time frames after the block for an utterance of t input frames."""
        length = t
        for layer in self.layers:
            length = (length + 2 * layer.padding[1] - layer.kernel[1]) // layer.stride[1] + 1
            if length < 1:
                raise ShapeError(f"block {self.name} consumes all {t} time frames")
        return length


def _small_kernel_layers(channels):
    """7x3 opening layer, then 3x3 layers; stride 2 on the first layer only."""
    layers = []
    for i, (c_in, c_out) in enumerate(zip(channels, channels[1:])):
        if i == 0:
            layers.append(ConvLayerSpec(c_in, c_out, (7, 3), (2, 2), (3, 1)))
        else:
            layers.append(ConvLayerSpec(c_in, c_out, (3, 3), (1, 1), (1, 1)))
    return tuple(layers)


BLOCKS = {
    "DS2": ConvBlockSpec(
        "DS2",
        (
            ConvLayerSpec(1, 32, (41, 11), (2, 2), (20, 5)),
            ConvLayerSpec(32, 32, (21, 11), (2, 1), (10, 5)),
        ),
    ),
    "BlockA": ConvBlockSpec("BlockA", _small_kernel_layers((1, 32, 32))),
    "BlockB": ConvBlockSpec("BlockB", _small_kernel_layers((1, 32, 32, 64, 64))),
}


@dataclass(frozen=True)
class ModelConfig:
    name: str
    block: str
    rnn_layers: int
    rnn_hidden: int
    custom: bool = False  # True for ad-hoc configs outside the registry

    def __post_init__(self):
        if self.block not in BLOCKS:
            raise ConfigError(f"unknown conv block {self.block!r}; have {sorted(BLOCKS)}")
        if self.rnn_layers < 1 or self.rnn_hidden < 1:
            raise ConfigError(f"RNN stack needs positive depth and width, got {self}")


MODEL_CONFIGS = {
    cfg.name: cfg
    for cfg in (
        ModelConfig("A-3GRU", "BlockA", 3, 512),
        ModelConfig("A-4GRU", "BlockA", 4, 512),
        ModelConfig("A-5GRU", "BlockA", 5, 512),
        ModelConfig("B-3GRU", "BlockB", 3, 512),
        ModelConfig("B-4GRU", "BlockB", 4, 512),
        ModelConfig("B-5GRU", "BlockB", 5, 512),
        ModelConfig("B-5GRU-Large", "BlockB", 5, 800),
        ModelConfig("2CNN-5GRU", "DS2", 5, 800),
    )
}


def get_block(name: str) -> ConvBlockSpec:
    try:
        return BLOCKS[name]
    except KeyError:
        raise ConfigError(f"unknown conv block {name!r}; have {sorted(BLOCKS)}") from None


def get_config(name: str) -> ModelConfig:
    try:
        return MODEL_CONFIGS[name]
    except KeyError:
        raise ConfigError(f"unknown model config {name!r}; have {sorted(MODEL_CONFIGS)}") from None


class Network:
    """Assembled acoustic model.

    Batch forward runs the conv stack on the whole padded batch (batch
    norm statistics restricted to valid frames), then the recurrent
    stack per utterance on its true length. All caches are returned to
    the caller so interleaved forwards never clobber each other.
    """

    def __init__(self, config: ModelConfig, alphabet_size: int, rng, input_bins: int = 81):
        self.config = config
        self.input_bins = input_bins
        self.alphabet_size = alphabet_size
        block = get_block(config.block)
        self.block_spec = block

        self.conv_stages = []
        for i, spec in enumerate(block.layers):
            conv = Conv2d(
                spec.in_channels, spec.out_channels, spec.kernel, spec.stride, spec.padding,
                rng, name=f"conv{i}",
            )
            bn = BatchNorm2d(spec.out_channels, name=f"conv{i}.bn")
            self.conv_stages.append((conv, bn, HardClip()))

        freq_out, _ = block.output_hw((input_bins, input_bins))
        self.flat_width = block.layers[-1].out_channels * freq_out
        self.rnns = []
        width = self.flat_width
        for i in range(config.rnn_layers):
            self.rnns.append(BiGRU(width, config.rnn_hidden, rng, name=f"bigru{i}"))
            width = config.rnn_hidden
        self.proj = Linear(width, alphabet_size + 1, rng, name="proj")
        self.log_softmax = LogSoftmax()

    def params(self):
        out = []
        for conv, bn, _ in self.conv_stages:
            out.extend(conv.params())
            out.extend(bn.params())
        for rnn in self.rnns:
            out.extend(rnn.params())
        out.extend(self.proj.params())
        return out

    def named_buffers(self):
        out = {}
        for i, (_, bn, _) in enumerate(self.conv_stages):
            for key, val in bn.buffers().items():
                out[f"conv{i}.bn.{key}"] = val
        return out

    def load_named_buffers(self, bufs):
        for i, (_, bn, _) in enumerate(self.conv_stages):
            bn.load_buffers(
                {
                    "running_mean": bufs[f"conv{i}.bn.running_mean"],
                    "running_var": bufs[f"conv{i}.bn.running_var"],
                }
            )

    def zero_grads(self):
        for p in self.params():
            p.zero_grad()

    def output_time_len(self, t_frames: int) -> int:
        return self.block_spec.output_time_len(t_frames)

    def _conv_forward(self, x, lengths, training):
        """x: (B, 1, bins, T_max). Returns (maps, lengths, caches)."""
        caches = []
        for conv, bn, clip in self.conv_stages:
            x, c_conv = conv.forward(x, training)
            lengths = [
                (n + 2 * conv.padding[1] - conv.kernel[1]) // conv.stride[1] + 1 for n in lengths
            ]
            if min(lengths) < 1:
                raise ShapeError(f"utterance too short for the conv stack (frames left: {min(lengths)})")
            mask = _time_mask(x.shape[0], x.shape[3], lengths, x.dtype)
            x, c_bn = bn.forward(x, training, mask=mask)
            x, c_clip = clip.forward(x, training)
            caches.append((c_conv, c_bn, c_clip))
        return x, lengths, caches

    def forward_batch(self, feats, lengths, training: bool = False):
        """feats: (B, T_max, bins) zero-padded; lengths: true frame counts.

        Returns (log_probs_list, cache) where entry b has shape
        (T''_b, alphabet_size + 1).
        """
        if feats.ndim != 3 or feats.shape[2] != self.input_bins:
            raise ShapeError(f"expected (B, T, {self.input_bins}) features, got {feats.shape}")
        x = np.ascontiguousarray(feats.transpose(0, 2, 1))[:, None]  # (B, 1, bins, T)
        maps, out_lens, conv_caches = self._conv_forward(x, list(lengths), training)

        b_sz, c_ch, f_dim, _ = maps.shape
        log_probs = []
        seq_caches = []
        for b in range(b_sz):
            t_out = out_lens[b]
            seq = maps[b, :, :, :t_out].reshape(c_ch * f_dim, t_out).T.copy()
            per_layer = []
            for rnn in self.rnns:
                seq, c = rnn.forward(seq, training)
                per_layer.append(c)
            logits, c_proj = self.proj.forward(seq, training)
            lp, c_ls = self.log_softmax.forward(logits, training)
            numerics.assert_finite(lp, "network log-probabilities")
            log_probs.append(lp)
            seq_caches.append((per_layer, c_proj, c_ls))
        cache = (maps.shape, out_lens, conv_caches, seq_caches)
        return log_probs, cache

    def backward_batch(self, d_log_probs, cache):
        """Accumulate parameter gradients for a batch forward."""
        maps_shape, out_lens, conv_caches, seq_caches = cache
        b_sz, c_ch, f_dim, t_max = maps_shape
        d_maps = np.zeros(maps_shape, dtype=numerics.get_dtype())
        for b, d_lp in enumerate(d_log_probs):
            per_layer, c_proj, c_ls = seq_caches[b]
            d = self.log_softmax.backward(d_lp, c_ls)
            d = self.proj.backward(d, c_proj)
            for rnn, c in zip(reversed(self.rnns), reversed(per_layer)):
                d = rnn.backward(d, c)
            t_out = out_lens[b]
            d_maps[b, :, :, :t_out] = d.T.reshape(c_ch, f_dim, t_out)

        d_x = d_maps
        for (conv, bn, clip), (c_conv, c_bn, c_clip) in zip(
            reversed(self.conv_stages), reversed(conv_caches)
        ):
            d_x = clip.backward(d_x, c_clip)
            d_x = bn.backward(d_x, c_bn)
            d_x = conv.backward(d_x, c_conv)
        # back to the (B, T_max, bins) layout forward_batch consumed
        return d_x[:, 0].transpose(0, 2, 1)

    def forward(self, values, training: bool = False):
        """Single utterance (T', bins) -> ((T'', classes), cache)."""
        values = np.asarray(values)
        if values.ndim != 2:
            raise ShapeError(f"expected a (T, {self.input_bins}) spectrogram, got {values.shape}")
        lp, cache = self.forward_batch(values[None], [values.shape[0]], training)
        return lp[0], cache

    def backward(self, d_log_probs, cache):
        return self.backward_batch([d_log_probs], cache)[0]

    def predict(self, values) -> np.ndarray:
        """Eval-mode log-probabilities for one utterance, cache discarded."""
        lp, _ = self.forward(values, training=False)
        return lp


def build_model(config: ModelConfig, alphabet_size: int, rng=None, input_bins: int = 81) -> Network:
    if alphabet_size < 1:
        raise ConfigError(f"alphabet size must be positive, got {alphabet_size}")
    if rng is None:
        rng = np.random.default_rng(0)
    return Network(config, alphabet_size, rng, input_bins=input_bins)


def _time_mask(b_sz, t_max, lengths, dtype):
    mask = np.zeros((b_sz, t_max), dtype=dtype)
    for i, n in enumerate(lengths):
        mask[i, : min(n, t_max)] = 1.0
    return mask
