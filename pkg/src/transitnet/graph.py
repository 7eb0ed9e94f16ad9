"""Composable network graphs: nodes, shape inference, parameter storage,
execution, and the multi-branch module builders.

A graph is a DAG of :class:`LayerNode` records ending in exactly one
softmax cross-entropy sink.  Evaluation order is deterministic: Kahn's
algorithm with ready nodes processed in ascending id order.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from typing import Dict, List, NamedTuple, Optional, Sequence

import numpy as np

from .errors import GraphError, NumericError, ParameterError, UsageError
from .layers import (
    MODE_INFERENCE,
    MODE_TRAINING,
    BatchNormState,
    Conv2DSpec,
    MaxPoolSpec,
    batchnorm2d_backward,
    batchnorm2d_forward,
    concat_backward,
    concat_channels,
    conv2d_backward,
    conv2d_forward,
    conv_out_size,
    dense_backward,
    dense_forward,
    dropout_backward,
    dropout_forward,
    flatten_backward,
    flatten_forward,
    global_avg_pool,
    global_avg_pool_backward,
    lrn_backward,
    lrn_forward,
    maxpool_backward,
    maxpool_forward,
    relu,
    relu_backward,
    softmax_cross_entropy,
)
from .tensor import Rng, Shape4, Tensor

INPUT_ID = "input"

LAYER_KINDS = (
    "conv", "maxpool", "gap", "batchnorm", "dropout", "lrn",
    "dense", "relu", "softmax-ce", "concat", "flatten",
)


@dataclass(frozen=True)
class DenseSpec:
    in_features: int
    out_features: int
    has_bias: bool = True

    def __post_init__(self):
        if self.in_features < 1 or self.out_features < 1:
            raise ParameterError("dense feature counts must be >= 1")


@dataclass(frozen=True)
class BatchNormSpec:
    channels: int
    momentum: float = 0.9
    eps: float = 1e-5


@dataclass(frozen=True)
class SoftmaxSpec:
    num_classes: int


@dataclass(frozen=True)
class LayerNode:
    id: str
    kind: str
    spec: object = None
    inputs: tuple = ()

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise GraphError(f"unknown layer kind {self.kind!r} on node {self.id!r}")
        if self.kind != "concat" and len(self.inputs) != 1:
            raise GraphError(f"node {self.id!r}: kind {self.kind!r} takes exactly one input")
        if self.kind == "concat" and len(self.inputs) < 1:
            raise GraphError(f"node {self.id!r}: concat needs at least one input")


def _node_output_shape(node: LayerNode, in_shapes: List[Shape4]) -> Shape4:
    """Per-sample output shape of one node; raises ShapeError-family on misfit."""
    s = in_shapes[0]
    kind = node.kind
    if kind == "conv":
        spec: Conv2DSpec = node.spec
        if s.c != spec.in_channels:
            raise GraphError(f"expects {spec.in_channels} channels, got {s.c}")
        oh = conv_out_size(s.h, spec.kernel, spec.stride, spec.pad)
        ow = conv_out_size(s.w, spec.kernel, spec.stride, spec.pad)
        if oh < 1 or ow < 1:
            raise GraphError(f"non-positive output size {oh}x{ow}")
        return Shape4(s.n, spec.out_channels, oh, ow)
    if kind == "maxpool":
        spec: MaxPoolSpec = node.spec
        oh = conv_out_size(s.h, spec.kernel, spec.stride, spec.padding)
        ow = conv_out_size(s.w, spec.kernel, spec.stride, spec.padding)
        if oh < 1 or ow < 1:
            raise GraphError(f"pool window does not fit {s.h}x{s.w}")
        return Shape4(s.n, s.c, oh, ow)
    if kind == "gap":
        return Shape4(s.n, s.c, 1, 1)
    if kind == "batchnorm":
        if s.c != node.spec.channels:
            raise GraphError(f"batchnorm sized for {node.spec.channels} channels, got {s.c}")
        return s
    if kind in ("dropout", "lrn", "relu"):
        return s
    if kind == "dense":
        spec: DenseSpec = node.spec
        flat = s.c * s.h * s.w
        if flat != spec.in_features:
            raise GraphError(
                f"dense input length {flat} does not match weight rows {spec.in_features}"
            )
        return Shape4(s.n, spec.out_features, 1, 1)
    if kind == "flatten":
        return Shape4(s.n, s.c * s.h * s.w, 1, 1)
    if kind == "softmax-ce":
        if s.h != 1 or s.w != 1:
            raise GraphError(f"softmax expects flat logits, got {s.c}x{s.h}x{s.w}")
        if node.spec is not None and s.c != node.spec.num_classes:
            raise GraphError(f"softmax sized for {node.spec.num_classes} classes, got {s.c}")
        return s
    if kind == "concat":
        total = 0
        for other in in_shapes:
            if (other.n, other.h, other.w) != (s.n, s.h, s.w):
                raise GraphError(
                    f"concat inputs disagree on batch/spatial dims: {tuple(s)} vs {tuple(other)}"
                )
            total += other.c
        return Shape4(s.n, total, s.h, s.w)
    raise GraphError(f"no shape rule for kind {kind!r}")


def node_param_count(node: LayerNode) -> int:
    if node.kind == "conv":
        spec = node.spec
        count = spec.out_channels * spec.in_channels * spec.kernel * spec.kernel
        return count + (spec.out_channels if spec.has_bias else 0)
    if node.kind == "dense":
        spec = node.spec
        return spec.in_features * spec.out_features + (spec.out_features if spec.has_bias else 0)
    if node.kind == "batchnorm":
        return 2 * node.spec.channels
    return 0


def topological_order(nodes: Dict[str, LayerNode]) -> List[str]:
    """Kahn's algorithm; ready nodes are consumed in ascending id order."""
    indegree = {nid: 0 for nid in nodes}
    consumers: Dict[str, List[str]] = {nid: [] for nid in nodes}
    for node in nodes.values():
        for src in node.inputs:
            if src == INPUT_ID:
                continue
            if src not in nodes:
                raise GraphError(f"node {node.id!r} references missing input {src!r}")
            indegree[node.id] += 1
            consumers[src].append(node.id)
    ready = sorted(nid for nid, deg in indegree.items() if deg == 0)
    heapq.heapify(ready)
    order: List[str] = []
    while ready:
        nid = heapq.heappop(ready)
        order.append(nid)
        for downstream in consumers[nid]:
            indegree[downstream] -= 1
            if indegree[downstream] == 0:
                heapq.heappush(ready, downstream)
    if len(order) != len(nodes):
        stuck = sorted(set(nodes) - set(order))
        raise GraphError(f"graph contains a cycle through {stuck}")
    return order


def infer_node_shapes(nodes: Sequence[LayerNode], input_shape: Shape4) -> Dict[str, Shape4]:
    """Annotate every node with its per-sample output shape.

    Failures name the first offending node in evaluation order.
    """
    by_id = {n.id: n for n in nodes}
    if len(by_id) != len(nodes):
        seen = set()
        for node in nodes:
            if node.id in seen:
                raise GraphError(f"duplicate node id {node.id!r}")
            seen.add(node.id)
    if INPUT_ID in by_id:
        raise GraphError(f"node id {INPUT_ID!r} is reserved for the graph input")
    shapes: Dict[str, Shape4] = {INPUT_ID: Shape4(*input_shape)}
    for nid in topological_order(by_id):
        node = by_id[nid]
        try:
            in_shapes = [shapes[src] for src in node.inputs]
            shapes[nid] = _node_output_shape(node, in_shapes)
        except (GraphError, ParameterError) as exc:
            raise GraphError(f"node {nid!r}: {exc}") from None
    return shapes


class NetGraph:
    """Validated DAG of layer nodes with a single softmax-ce sink."""

    def __init__(self, nodes: Sequence[LayerNode], input_shape: Shape4):
        self.nodes: Dict[str, LayerNode] = {n.id: n for n in nodes}
        if len(self.nodes) != len(nodes):
            raise GraphError("duplicate node ids in graph")
        self.input_shape = Shape4(*input_shape)
        sinks = [n.id for n in nodes if n.kind == "softmax-ce"]
        if len(sinks) != 1:
            raise GraphError(f"graph must have exactly one softmax-ce sink, found {len(sinks)}")
        self.output_id = sinks[0]
        self.order = topological_order(self.nodes)
        self.shapes = infer_node_shapes(list(self.nodes.values()), self.input_shape)
        consumed = {src for n in nodes for src in n.inputs}
        if self.output_id in consumed:
            raise GraphError("the softmax-ce sink must not feed another node")
        dangling = [nid for nid in self.nodes if nid not in consumed and nid != self.output_id]
        if dangling:
            raise GraphError(f"nodes {sorted(dangling)} do not feed the loss sink")

    def infer_shapes(self) -> Dict[str, Shape4]:
        return dict(self.shapes)

    @property
    def num_classes(self) -> int:
        return self.shapes[self.output_id].c


class GraphBuilder:
    """Incremental graph construction with running shape inference."""

    def __init__(self, input_shape: Shape4):
        self.input_shape = Shape4(*input_shape).validate()
        self.nodes: List[LayerNode] = []
        self._shapes: Dict[str, Shape4] = {INPUT_ID: self.input_shape}

    def add(self, node_id: str, kind: str, spec=None, inputs=(INPUT_ID,)) -> str:
        if node_id in self._shapes:
            raise GraphError(f"duplicate node id {node_id!r}")
        node = LayerNode(node_id, kind, spec, tuple(inputs))
        try:
            in_shapes = [self._shapes[src] for src in node.inputs]
        except KeyError as missing:
            raise GraphError(f"node {node_id!r} references missing input {missing}") from None
        try:
            self._shapes[node_id] = _node_output_shape(node, in_shapes)
        except GraphError as exc:
            raise GraphError(f"node {node_id!r}: {exc}") from None
        self.nodes.append(node)
        return node_id

    def shape_of(self, node_id: str) -> Shape4:
        return self._shapes[node_id]

    def flat_size(self, node_id: str) -> int:
        s = self._shapes[node_id]
        return s.c * s.h * s.w

    def build(self) -> NetGraph:
        return NetGraph(self.nodes, self.input_shape)


# ---------------------------------------------------------------------------
# composite builders


class InceptionWidths(NamedTuple):
    b1x1: int
    r3x3: int
    b3x3: int
    r5x5: int
    b5x5: int
    pool_proj: int


def build_inception_module(b: GraphBuilder, input_id: str, prefix: str,
                           in_channels: int, widths: InceptionWidths) -> str:
    """Four parallel branches concatenated on channels.

    1x1 conv; 1x1 reduce then 3x3; 1x1 reduce then 5x5; 3x3 maxpool
    (stride 1, padded) then 1x1 projection.  Every conv is stride 1 with
    same-style padding and a trailing ReLU, so all branches keep the input
    spatial dims and the output has b1x1+b3x3+b5x5+pool_proj channels.
    """
    widths = InceptionWidths(*widths)
    if min(widths) < 1:
        raise ParameterError(f"inception branch widths must be >= 1, got {tuple(widths)}")

    def conv_relu(name, src, src_channels, out_channels, kernel):
        cid = b.add(f"{prefix}.{name}", "conv",
                    Conv2DSpec(src_channels, out_channels, kernel), (src,))
        return b.add(f"{prefix}.{name}.relu", "relu", None, (cid,))

    b1 = conv_relu("b1.conv", input_id, in_channels, widths.b1x1, 1)
    r3 = conv_relu("b3.reduce", input_id, in_channels, widths.r3x3, 1)
    b3 = conv_relu("b3.conv", r3, widths.r3x3, widths.b3x3, 3)
    r5 = conv_relu("b5.reduce", input_id, in_channels, widths.r5x5, 1)
    b5 = conv_relu("b5.conv", r5, widths.r5x5, widths.b5x5, 5)
    pool = b.add(f"{prefix}.bpool.pool", "maxpool", MaxPoolSpec(3, 1, 1), (input_id,))
    proj = conv_relu("bpool.proj", pool, in_channels, widths.pool_proj, 1)
    return b.add(f"{prefix}.concat", "concat", None, (b1, b3, b5, proj))


def build_transition_module(b: GraphBuilder, input_id: str, prefix: str,
                            in_channels: int, filters_per_branch: int,
                            kernel_sizes: Sequence[int] = (3, 5, 7),
                            stride: int = 2, use_gap: bool = True) -> str:
    """Multi-scale reduction block placed before the dense stage.

    One branch per kernel size: strided same-padded conv, batchnorm, ReLU,
    then (by default) a global average pool that collapses each feature
    map to a single value.  Branch outputs are concatenated ascending by
    kernel size and flattened to one vector per sample: length
    len(kernel_sizes) * filters_per_branch with pooling, or that times the
    conv output area when ``use_gap=False``.
    """
    kernels = list(kernel_sizes)
    if not kernels:
        raise ParameterError("transition module needs at least one kernel size")
    if len(set(kernels)) != len(kernels):
        raise ParameterError(f"transition kernel sizes must be distinct, got {kernels}")
    if any(k < 1 or k % 2 == 0 for k in kernels):
        raise ParameterError(f"transition kernel sizes must be odd, got {kernels}")
    if filters_per_branch < 1:
        raise ParameterError("transition filters_per_branch must be >= 1")

    branch_outputs = []
    for k in sorted(kernels):
        conv = b.add(f"{prefix}.k{k}.conv", "conv",
                     Conv2DSpec(in_channels, filters_per_branch, k, stride=stride), (input_id,))
        bn = b.add(f"{prefix}.k{k}.bn", "batchnorm",
                   BatchNormSpec(filters_per_branch), (conv,))
        act = b.add(f"{prefix}.k{k}.relu", "relu", None, (bn,))
        if use_gap:
            act = b.add(f"{prefix}.k{k}.gap", "gap", None, (act,))
        branch_outputs.append(act)
    joined = b.add(f"{prefix}.concat", "concat", None, tuple(branch_outputs))
    return b.add(f"{prefix}.flatten", "flatten", None, (joined,))


# ---------------------------------------------------------------------------
# parameters


@dataclass
class ParamSlot:
    value: np.ndarray
    grad: np.ndarray
    velocity: np.ndarray


class ParameterStore:
    """Named parameter tensors with matching gradient and velocity buffers.

    ``state`` holds non-learnable arrays (batchnorm running statistics)
    that ship with checkpoints but receive no gradients.
    """

    def __init__(self):
        self.slots: Dict[str, ParamSlot] = {}
        self.state: Dict[str, np.ndarray] = {}

    def add_slot(self, name: str, value: np.ndarray) -> None:
        if name in self.slots:
            raise UsageError(f"duplicate parameter slot {name!r}")
        value = np.asarray(value, dtype=np.float64)
        self.slots[name] = ParamSlot(value, np.zeros_like(value), np.zeros_like(value))

    def zero_grads(self) -> None:
        for slot in self.slots.values():
            slot.grad[...] = 0.0

    def param_count(self) -> int:
        return sum(slot.value.size for slot in self.slots.values())


def init_parameters(g: NetGraph, rng: Rng) -> ParameterStore:
    """He-normal weights (stdev sqrt(2/fan_in)), zero biases, unit batchnorm
    scale; slots are created in deterministic evaluation order."""
    store = ParameterStore()
    for nid in g.order:
        node = g.nodes[nid]
        if node.kind == "conv":
            spec = node.spec
            fan_in = spec.in_channels * spec.kernel * spec.kernel
            shape = (spec.out_channels, spec.in_channels, spec.kernel, spec.kernel)
            weights = rng.normal(int(np.prod(shape)), 0.0, np.sqrt(2.0 / fan_in)).reshape(shape)
            store.add_slot(f"{nid}.w", weights)
            if spec.has_bias:
                store.add_slot(f"{nid}.b", np.zeros(spec.out_channels))
        elif node.kind == "dense":
            spec = node.spec
            shape = (spec.in_features, spec.out_features)
            weights = rng.normal(shape[0] * shape[1], 0.0, np.sqrt(2.0 / spec.in_features))
            store.add_slot(f"{nid}.w", weights.reshape(shape))
            if spec.has_bias:
                store.add_slot(f"{nid}.b", np.zeros(spec.out_features))
        elif node.kind == "batchnorm":
            c = node.spec.channels
            store.add_slot(f"{nid}.gamma", np.ones(c))
            store.add_slot(f"{nid}.beta", np.zeros(c))
            store.state[f"{nid}.running_mean"] = np.zeros(c)
            store.state[f"{nid}.running_var"] = np.ones(c)
    return store


# ---------------------------------------------------------------------------
# execution


class LossCtx(NamedTuple):
    grad_logits: np.ndarray
    logits_shape: tuple


def _bn_state(store: ParameterStore, nid: str, spec: BatchNormSpec, mode: str) -> BatchNormState:
    return BatchNormState(
        gamma=store.slots[f"{nid}.gamma"].value,
        beta=store.slots[f"{nid}.beta"].value,
        running_mean=store.state[f"{nid}.running_mean"],
        running_var=store.state[f"{nid}.running_var"],
        momentum=spec.momentum,
        eps=spec.eps,
        mode=mode,
    )


def forward_pass(g: NetGraph, store: ParameterStore, x: Tensor, labels: np.ndarray,
                 mode: str = MODE_TRAINING, rng: Optional[Rng] = None,
                 check_finite: bool = False):
    """Evaluate the graph on a batch.

    Returns ``(loss, probabilities, contexts)``; contexts are saved only in
    training mode and are required by :func:`backward_pass`.  Inference
    consumes no randomness, so repeated calls are bit-identical.
    """
    if mode not in (MODE_TRAINING, MODE_INFERENCE):
        raise UsageError(f"unknown mode {mode!r}")
    save_ctx = mode == MODE_TRAINING
    x = np.asarray(x, dtype=np.float64)
    expected = tuple(g.input_shape)[1:]
    if x.ndim != 4 or x.shape[1:] != expected:
        raise GraphError(
            f"batch shaped {x.shape} does not match graph input {expected} per sample"
        )
    values: Dict[str, Tensor] = {INPUT_ID: x}
    contexts: Dict[str, object] = {} if save_ctx else None
    loss = probs = None
    for nid in g.order:
        node = g.nodes[nid]
        ins = [values[src] for src in node.inputs]
        kind = node.kind
        if kind == "conv":
            bias = store.slots[f"{nid}.b"].value if node.spec.has_bias else None
            y, ctx = conv2d_forward(ins[0], store.slots[f"{nid}.w"].value, bias, node.spec, save_ctx)
        elif kind == "maxpool":
            y, ctx = maxpool_forward(ins[0], node.spec, save_ctx)
        elif kind == "gap":
            y, ctx = global_avg_pool(ins[0], save_ctx)
        elif kind == "batchnorm":
            y, ctx = batchnorm2d_forward(ins[0], _bn_state(store, nid, node.spec, mode), save_ctx)
        elif kind == "dropout":
            y, ctx = dropout_forward(ins[0], node.spec, mode, rng, save_ctx)
        elif kind == "lrn":
            y, ctx = lrn_forward(ins[0], node.spec, save_ctx)
        elif kind == "dense":
            bias = store.slots[f"{nid}.b"].value if node.spec.has_bias else None
            y, ctx = dense_forward(ins[0], store.slots[f"{nid}.w"].value, bias, save_ctx)
        elif kind == "relu":
            y, ctx = relu(ins[0], save_ctx)
        elif kind == "concat":
            y, ctx = concat_channels(ins, save_ctx)
        elif kind == "flatten":
            y, ctx = flatten_forward(ins[0], save_ctx)
        elif kind == "softmax-ce":
            loss, probs, grad_logits = softmax_cross_entropy(ins[0], labels)
            y = probs.reshape(ins[0].shape)
            ctx = LossCtx(grad_logits, ins[0].shape) if save_ctx else None
        else:
            raise GraphError(f"no forward rule for kind {kind!r}")
        if check_finite and not np.isfinite(y).all():
            raise NumericError(f"node {nid!r} produced non-finite values")
        values[nid] = y
        if save_ctx:
            contexts[nid] = ctx
    if loss is None or not np.isfinite(loss):
        raise NumericError(f"loss is not finite: {loss}")
    return loss, probs, contexts


def backward_pass(g: NetGraph, store: ParameterStore, contexts: Dict[str, object]) -> Tensor:
    """Reverse-mode sweep; writes parameter gradients into the store
    (buffers are zeroed first) and returns the gradient at the graph input."""
    if contexts is None:
        raise UsageError("backward requires contexts from a training-mode forward")
    store.zero_grads()
    loss_node = g.nodes[g.output_id]
    loss_ctx: LossCtx = contexts[g.output_id]
    grads: Dict[str, Tensor] = {
        loss_node.inputs[0]: loss_ctx.grad_logits.reshape(loss_ctx.logits_shape)
    }

    def accumulate(target: str, grad: Tensor) -> None:
        if target in grads:
            grads[target] = grads[target] + grad
        else:
            grads[target] = grad

    for nid in reversed(g.order):
        if nid == g.output_id:
            continue
        node = g.nodes[nid]
        grad_out = grads.get(nid)
        if grad_out is None:
            raise GraphError(f"node {nid!r} received no gradient; graph is disconnected")
        ctx = contexts[nid]
        kind = node.kind
        if kind == "conv":
            gx, gw, gb = conv2d_backward(ctx, grad_out)
            store.slots[f"{nid}.w"].grad += gw
            if gb is not None:
                store.slots[f"{nid}.b"].grad += gb
            accumulate(node.inputs[0], gx)
        elif kind == "maxpool":
            accumulate(node.inputs[0], maxpool_backward(ctx, grad_out))
        elif kind == "gap":
            accumulate(node.inputs[0], global_avg_pool_backward(ctx, grad_out))
        elif kind == "batchnorm":
            gx, ggamma, gbeta = batchnorm2d_backward(ctx, grad_out)
            store.slots[f"{nid}.gamma"].grad += ggamma
            store.slots[f"{nid}.beta"].grad += gbeta
            accumulate(node.inputs[0], gx)
        elif kind == "dropout":
            accumulate(node.inputs[0], dropout_backward(ctx, grad_out))
        elif kind == "lrn":
            accumulate(node.inputs[0], lrn_backward(ctx, grad_out))
        elif kind == "dense":
            gx, gw, gb = dense_backward(ctx, grad_out)
            store.slots[f"{nid}.w"].grad += gw
            if gb is not None:
                store.slots[f"{nid}.b"].grad += gb
            accumulate(node.inputs[0], gx)
        elif kind == "relu":
            accumulate(node.inputs[0], relu_backward(ctx, grad_out))
        elif kind == "concat":
            for src, gx in zip(node.inputs, concat_backward(ctx, grad_out)):
                accumulate(src, gx)
        elif kind == "flatten":
            accumulate(node.inputs[0], flatten_backward(ctx, grad_out))
        else:
            raise GraphError(f"no backward rule for kind {kind!r}")
    return grads.get(INPUT_ID)
