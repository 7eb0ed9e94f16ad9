"""Named network presets and their variant flags.

Two desk-scale backbones are shipped, ``alexnet_mini`` and ``zfnet_mini``.
They keep the originals' signatures (first-conv kernel and stride, the
overlapping 3x3 stride-2 pools, the conv depth ratio, two hidden dense
layers) but cap channels at 64 so they train on a laptop.

alexnet_mini (input C x H x W, e.g. 3x64x64):

    conv1  5x5 s2 p2  16f  + relu
    pool1  3x3 s2
    conv2  5x5 s1 p2  32f  + relu
    pool2  3x3 s2
    conv3  3x3 s1 p1  64f  + relu
    flatten -> fc1 64 + relu -> fc2 64 + relu -> fc3 classes -> softmax
    multi-scale branch filters: 32

zfnet_mini:

    conv1  7x7 s2 p3  16f  + relu
    pool1  3x3 s2
    conv2  5x5 s1 p2  32f  + relu
    pool2  3x3 s2
    conv3  3x3 s1 p1  48f  + relu
    conv4  3x3 s1 p1  64f  + relu
    flatten -> fc1 64 + relu -> fc2 64 + relu -> fc3 classes -> softmax
    multi-scale branch filters: 64

Variants, combinable with ``+`` in the preset name:

    baseline          the table above, unchanged
    transition        multi-scale conv/batchnorm/relu/gap block (kernels
                      3,5,7, stride 2) inserted between the last conv
                      stage and fc1; fc1 then sees 3*branch_filters inputs
    transition_nogap  same block with the per-branch pooling removed, so
                      fc1 sees 3*branch_filters*H'*W' inputs (the ablation)
    dropout           dropout p=0.5 after each hidden dense layer
    lrn               cross-channel response normalization after each pool
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional, Tuple

from .errors import ConfigError
from .graph import (
    DenseSpec,
    GraphBuilder,
    INPUT_ID,
    NetGraph,
    SoftmaxSpec,
    build_transition_module,
)
from .layers import Conv2DSpec, DropoutSpec, LrnSpec, MaxPoolSpec
from .tensor import Shape4

TRANSITION_KERNELS = (3, 5, 7)
TRANSITION_STRIDE = 2
DROPOUT_P = 0.5

VARIANTS = ("baseline", "transition", "dropout", "lrn", "transition_nogap")


@dataclass(frozen=True)
class _ConvStep:
    name: str
    kernel: int
    stride: int
    filters: int


@dataclass(frozen=True)
class _ArchTable:
    steps: Tuple[Tuple[str, object], ...]  # ("conv", _ConvStep) or ("pool", name)
    fc_widths: Tuple[int, ...]
    branch_filters: int


_ARCHS: Dict[str, _ArchTable] = {
    "alexnet_mini": _ArchTable(
        steps=(
            ("conv", _ConvStep("conv1", 5, 2, 16)),
            ("pool", "pool1"),
            ("conv", _ConvStep("conv2", 5, 1, 32)),
            ("pool", "pool2"),
            ("conv", _ConvStep("conv3", 3, 1, 64)),
        ),
        fc_widths=(64, 64),
        branch_filters=32,
    ),
    "zfnet_mini": _ArchTable(
        steps=(
            ("conv", _ConvStep("conv1", 7, 2, 16)),
            ("pool", "pool1"),
            ("conv", _ConvStep("conv2", 5, 1, 32)),
            ("pool", "pool2"),
            ("conv", _ConvStep("conv3", 3, 1, 48)),
            ("conv", _ConvStep("conv4", 3, 1, 64)),
        ),
        fc_widths=(64, 64),
        branch_filters=64,
    ),
}


def parse_preset_name(name: str) -> Tuple[str, frozenset]:
    """Split ``base+variant+...`` and validate every part."""
    parts = name.split("+")
    base = parts[0]
    if base not in _ARCHS:
        raise ConfigError(f"unknown preset {base!r}; available: {sorted(_ARCHS)}")
    variants = set(parts[1:])
    unknown = variants - set(VARIANTS)
    if unknown:
        raise ConfigError(f"unknown variant(s) {sorted(unknown)}; available: {list(VARIANTS)}")
    if {"transition", "transition_nogap"} <= variants:
        raise ConfigError("transition and transition_nogap are mutually exclusive")
    variants.discard("baseline")
    return base, frozenset(variants)


def preset_names() -> list:
    return sorted(_ARCHS)


def build_preset(name: str, num_classes: int, input_shape: Shape4,
                 max_channels: Optional[int] = None) -> NetGraph:
    """Instantiate a preset graph.

    ``name`` is the architecture optionally joined with variants, e.g.
    ``alexnet_mini+transition+lrn``.  ``input_shape`` is per-sample.
    ``max_channels`` clamps every width (used by the gradient checker to
    shrink presets to finite-difference scale).
    """
    if num_classes < 2:
        raise ConfigError(f"num_classes must be >= 2, got {num_classes}")
    base, variants = parse_preset_name(name)
    table = _ARCHS[base]

    def width(value: int) -> int:
        return min(value, max_channels) if max_channels else value

    b = GraphBuilder(Shape4(*input_shape))
    current = INPUT_ID
    channels = b.input_shape.c
    for step_kind, step in table.steps:
        if step_kind == "conv":
            cid = b.add(step.name, "conv",
                        Conv2DSpec(channels, width(step.filters), step.kernel, step.stride),
                        (current,))
            current = b.add(f"{step.name}.relu", "relu", None, (cid,))
            channels = width(step.filters)
        else:
            current = b.add(step, "maxpool", MaxPoolSpec(3, 2), (current,))
            if "lrn" in variants:
                current = b.add(f"{step}.lrn", "lrn", LrnSpec(), (current,))

    if "transition" in variants or "transition_nogap" in variants:
        current = build_transition_module(
            b, current, "trans", channels, width(table.branch_filters),
            TRANSITION_KERNELS, TRANSITION_STRIDE,
            use_gap="transition" in variants,
        )
    else:
        current = b.add("flatten", "flatten", None, (current,))

    features = b.flat_size(current)
    for i, fc_width in enumerate(table.fc_widths, start=1):
        fid = b.add(f"fc{i}", "dense", DenseSpec(features, width(fc_width)), (current,))
        current = b.add(f"fc{i}.relu", "relu", None, (fid,))
        if "dropout" in variants:
            current = b.add(f"fc{i}.drop", "dropout", DropoutSpec(DROPOUT_P), (current,))
        features = width(fc_width)
    head = b.add(f"fc{len(table.fc_widths) + 1}", "dense",
                 DenseSpec(features, num_classes), (current,))
    b.add("loss", "softmax-ce", SoftmaxSpec(num_classes), (head,))
    return b.build()


def dump_architecture(g: NetGraph) -> str:
    """Plain-text table: node id, kind, detail, output shape, parameter count."""
    from .graph import node_param_count

    rows = [("node", "kind", "detail", "output", "params")]
    total = 0
    for nid in g.order:
        node = g.nodes[nid]
        shape = g.shapes[nid]
        count = node_param_count(node)
        total += count
        detail = ""
        if node.kind == "conv":
            s = node.spec
            detail = f"k={s.kernel} s={s.stride} p={s.pad} f={s.out_channels}"
        elif node.kind == "maxpool":
            s = node.spec
            detail = f"k={s.kernel} s={s.stride} p={s.padding}"
        elif node.kind == "dense":
            detail = f"{node.spec.in_features}->{node.spec.out_features}"
        elif node.kind == "dropout":
            detail = f"p={node.spec.p}"
        elif node.kind == "lrn":
            s = node.spec
            detail = f"n={s.depth} k={s.k} a={s.alpha} b={s.beta}"
        elif node.kind == "batchnorm":
            detail = f"c={node.spec.channels}"
        rows.append((nid, node.kind, detail, f"{shape.c}x{shape.h}x{shape.w}", str(count)))
    rows.append(("total", "", "", "", str(total)))
    widths = [max(len(r[i]) for r in rows) for i in range(5)]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in rows]
    lines.insert(1, "-" * len(lines[0]))
    return "\n".join(lines)
