"""Parameter and FLOP accounting for the registered architectures.

Conventions are explicit and recorded in every report: one
multiply-accumulate is two FLOPs; the per-channel bias add is one
operation per output element; batch norm is counted in folded eval
form (scale and shift, two operations per element); the clip
activation is one operation per element. A bidirectional GRU layer
with input width w and hidden size h has 2*3*(w*h + h*h + 2*h)
parameters (two bias vectors per gate, as the candidate gate applies
the reset gate inside the recurrent half only).
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .features import BINS
from .model import ConvBlockSpec, ModelConfig, get_block

DEFAULT_FRAMES = 300


@dataclass(frozen=True)
class Convention:
    macs_to_flops: int = 2
    bias_ops_per_element: int = 1
    batchnorm_ops_per_element: int = 2
    activation_ops_per_element: int = 1

    def describe(self) -> str:
        return (
            f"MAC={self.macs_to_flops} FLOPs, bias={self.bias_ops_per_element}/elem, "
            f"bn={self.batchnorm_ops_per_element}/elem (folded), "
            f"clip={self.activation_ops_per_element}/elem"
        )


DEFAULT_CONVENTION = Convention()


@dataclass
class LayerCost:
    name: str
    params: int
    macs: int
    flops: int
    out_shape: tuple


@dataclass
class ComplexityReport:
    title: str
    input_shape: tuple
    convention: Convention
    layers: list[LayerCost] = field(default_factory=list)

    @property
    def total_params(self) -> int:
        return sum(l.params for l in self.layers)

    @property
    def total_flops(self) -> int:
        return sum(l.flops for l in self.layers)

    @property
    def total_macs(self) -> int:
        return sum(l.macs for l in self.layers)


def conv_layer_params(layer) -> int:
    """Kernel weights + bias + the batch-norm scale/shift pair."""
    k_h, k_w = layer.kernel
    return k_h * k_w * layer.in_channels * layer.out_channels + layer.out_channels + 2 * layer.out_channels


def count_params(block: ConvBlockSpec) -> int:
    return sum(conv_layer_params(layer) for layer in block.layers)


def bigru_params(input_width: int, hidden: int) -> int:
    return 2 * 3 * (input_width * hidden + hidden * hidden + 2 * hidden)


def linear_params(input_width: int, outputs: int) -> int:
    return input_width * outputs + outputs


def count_flops(block: ConvBlockSpec, frames: int, bins: int = BINS,
                convention: Convention = DEFAULT_CONVENTION) -> int:
    """Analytic FLOPs of one pass of the conv block over (bins x frames)."""
    return block_report(block, frames, bins, convention).total_flops


def block_report(block: ConvBlockSpec, frames: int, bins: int = BINS,
                 convention: Convention = DEFAULT_CONVENTION) -> ComplexityReport:
    report = ComplexityReport(title=block.name, input_shape=(1, bins, frames), convention=convention)
    hw = (bins, frames)
    for i, layer in enumerate(block.layers):
        hw = layer.output_hw(hw)
        elements = layer.out_channels * hw[0] * hw[1]
        macs = elements * layer.kernel[0] * layer.kernel[1] * layer.in_channels
        flops = (
            convention.macs_to_flops * macs
            + convention.bias_ops_per_element * elements
            + convention.batchnorm_ops_per_element * elements
            + convention.activation_ops_per_element * elements
        )
        k_h, k_w = layer.kernel
        report.layers.append(
            LayerCost(
                name=f"conv{i} {k_h}x{k_w}/{layer.stride[0]}x{layer.stride[1]} "
                f"{layer.in_channels}->{layer.out_channels}",
                params=conv_layer_params(layer),
                macs=macs,
                flops=flops,
                out_shape=(layer.out_channels, *hw),
            )
        )
    return report


# per time step and direction, the gate arithmetic beyond the matmuls:
# 6h bias adds, 3h gate-sum adds, 3h nonlinearities, h reset products,
# 4h ops for the convex output blend
_GRU_ELEMWISE_PER_UNIT = 17


def model_report(config: ModelConfig, frames: int = DEFAULT_FRAMES, bins: int = BINS,
                 classes: int | None = None,
                 convention: Convention = DEFAULT_CONVENTION) -> ComplexityReport:
    """Full-network accounting: conv block, BiGRU stack, output layer."""
    block = get_block(config.block)
    report = block_report(block, frames, bins, convention)
    report.title = config.name

    freq_out, time_out = block.output_hw((bins, frames))
    width = block.layers[-1].out_channels * freq_out
    for i in range(config.rnn_layers):
        hidden = config.rnn_hidden
        macs = 2 * time_out * 3 * (width * hidden + hidden * hidden)
        flops = convention.macs_to_flops * macs + 2 * time_out * _GRU_ELEMWISE_PER_UNIT * hidden
        report.layers.append(
            LayerCost(
                name=f"bigru{i} {width}->{hidden}",
                params=bigru_params(width, hidden),
                macs=macs,
                flops=flops,
                out_shape=(time_out, hidden),
            )
        )
        width = hidden
    if classes is not None:
        macs = time_out * width * classes
        report.layers.append(
            LayerCost(
                name=f"linear {width}->{classes}",
                params=linear_params(width, classes),
                macs=macs,
                flops=convention.macs_to_flops * macs + time_out * classes,
                out_shape=(time_out, classes),
            )
        )
    return report


def format_report(report: ComplexityReport) -> str:
    """Aligned human-readable table."""
    rows = [("layer", "output", "params", "MACs", "FLOPs")]
    for layer in report.layers:
        rows.append(
            (
                layer.name,
                "x".join(str(d) for d in layer.out_shape),
                f"{layer.params:,}",
                f"{layer.macs:,}",
                f"{layer.flops:,}",
            )
        )
    rows.append(
        (
            "total",
            "",
            f"{report.total_params:,}",
            f"{report.total_macs:,}",
            f"{report.total_flops:,}",
        )
    )
    widths = [max(len(row[i]) for row in rows) for i in range(5)]
    lines = [
        f"{report.title}: input {'x'.join(str(d) for d in report.input_shape)}",
        f"convention: {report.convention.describe()}",
    ]
    for j, row in enumerate(rows):
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
        if j == 0:
            lines.append("-" * (sum(widths) + 8))
    return "\n".join(lines)


def report_keyvalues(report: ComplexityReport) -> list[str]:
    """Machine-readable counterpart of format_report."""
    lines = [f"report.title={report.title}"]
    for i, layer in enumerate(report.layers):
        lines.append(f"layer.{i}.name={layer.name}")
        lines.append(f"layer.{i}.params={layer.params}")
        lines.append(f"layer.{i}.flops={layer.flops}")
    lines.append(f"params.total={report.total_params}")
    lines.append(f"macs.total={report.total_macs}")
    lines.append(f"flops.total={report.total_flops}")
    return lines
