"""Finite-difference verification of every backward rule.

Layer checks compare full analytic gradients against central differences
on small random tensors; preset checks shrink each architecture to
finite-difference scale (channels clamped to 8, 16x16 input) and probe a
seeded sample of coordinates per parameter slot.  The ``corrupt`` hook
deliberately breaks one layer's analytic gradient so the detection path
itself can be tested.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Callable, List, Optional

import numpy as np

from . import layers as L
from .graph import backward_pass, forward_pass, init_parameters
from .presets import VARIANTS, build_preset, preset_names
from .tensor import Rng, Shape4, derive_seed

LAYER_TOLERANCE = 1e-5
GRAPH_TOLERANCE = 1e-4
FD_STEP = 1e-5
COORDS_PER_SLOT = 24


@dataclass(frozen=True)
class CheckResult:
    name: str
    max_rel_err: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tolerance


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max elementwise |a-n| / max(1, |a|, |n|); the unit floor keeps
    near-zero gradient entries from inflating the ratio."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float((np.abs(analytic - numeric) / denom).max())


def _weighted(forward: Callable, upstream: np.ndarray) -> Callable:
    """Scalar objective sum(forward(x) * upstream), the standard trick to
    check a full Jacobian through one finite-difference pass."""
    def objective(x):
        return float((forward(x) * upstream).sum())
    return objective


def check_layers(tolerance: float = LAYER_TOLERANCE, step: float = FD_STEP,
                 corrupt: Optional[str] = None) -> List[CheckResult]:
    """One result per layer kind, worst case over all of its gradients."""
    rng = Rng(20240 + 1)
    results = []

    def distinct(shape):
        # strictly distinct values keep maxpool/relu off their kink points
        size = int(np.prod(shape))
        base = rng.permutation(size).astype(np.float64) / size
        return (base + 0.05 + 0.01 * rng.uniform(size)).reshape(shape)

    def record(name: str, errors: List[float]):
        worst = max(errors)
        if corrupt == name:
            worst += 1.0  # test hook: simulate a broken backward rule
        results.append(CheckResult(name, worst, tolerance))

    # conv2d
    spec = L.Conv2DSpec(3, 4, 3, stride=2, padding=1)
    x = rng.normal(2 * 3 * 6 * 6).reshape(2, 3, 6, 6)
    w = rng.normal(4 * 3 * 9).reshape(4, 3, 3, 3)
    b = rng.normal(4)
    y, ctx = L.conv2d_forward(x, w, b, spec)
    upstream = rng.normal(y.size).reshape(y.shape)
    gx, gw, gb = L.conv2d_backward(ctx, upstream)
    record("conv2d", [
        relative_error(gx, L.finite_difference_grad(
            _weighted(lambda t: L.conv2d_forward(t, w, b, spec, False)[0], upstream), x, step)),
        relative_error(gw, L.finite_difference_grad(
            _weighted(lambda t: L.conv2d_forward(x, t, b, spec, False)[0], upstream), w, step)),
        relative_error(gb, L.finite_difference_grad(
            _weighted(lambda t: L.conv2d_forward(x, w, t, spec, False)[0], upstream), b, step)),
    ])

    # maxpool
    spec = L.MaxPoolSpec(3, 2, 1)
    x = distinct((2, 2, 6, 6))
    y, ctx = L.maxpool_forward(x, spec)
    upstream = rng.normal(y.size).reshape(y.shape)
    record("maxpool", [
        relative_error(L.maxpool_backward(ctx, upstream), L.finite_difference_grad(
            _weighted(lambda t: L.maxpool_forward(t, spec, False)[0], upstream), x, step)),
    ])

    # gap
    x = rng.normal(2 * 3 * 4 * 4).reshape(2, 3, 4, 4)
    y, ctx = L.global_avg_pool(x)
    upstream = rng.normal(y.size).reshape(y.shape)
    record("gap", [
        relative_error(L.global_avg_pool_backward(ctx, upstream), L.finite_difference_grad(
            _weighted(lambda t: L.global_avg_pool(t, False)[0], upstream), x, step)),
    ])

    # batchnorm (training mode, gradient through the batch statistics)
    gamma = 1.0 + 0.2 * rng.normal(3)
    beta = 0.1 * rng.normal(3)
    x = rng.normal(4 * 3 * 5 * 5).reshape(4, 3, 5, 5)

    def bn_forward(xv, gv, bv):
        state = L.BatchNormState(gv, bv, np.zeros(3), np.ones(3))
        return L.batchnorm2d_forward(xv, state, False)[0]

    state = L.BatchNormState(gamma, beta, np.zeros(3), np.ones(3))
    y, ctx = L.batchnorm2d_forward(x, state)
    upstream = rng.normal(y.size).reshape(y.shape)
    gx, ggamma, gbeta = L.batchnorm2d_backward(ctx, upstream)
    record("batchnorm", [
        relative_error(gx, L.finite_difference_grad(
            _weighted(lambda t: bn_forward(t, gamma, beta), upstream), x, step)),
        relative_error(ggamma, L.finite_difference_grad(
            _weighted(lambda t: bn_forward(x, t, beta), upstream), gamma, step)),
        relative_error(gbeta, L.finite_difference_grad(
            _weighted(lambda t: bn_forward(x, gamma, t), upstream), beta, step)),
    ])

    # dropout (mask held fixed while differentiating)
    spec = L.DropoutSpec(0.4)
    x = rng.normal(2 * 3 * 4 * 4).reshape(2, 3, 4, 4)
    y, ctx = L.dropout_forward(x, spec, L.MODE_TRAINING, rng)
    upstream = rng.normal(y.size).reshape(y.shape)
    masked = lambda t: np.where(ctx.mask, t * ctx.scale, 0.0)
    record("dropout", [
        relative_error(L.dropout_backward(ctx, upstream), L.finite_difference_grad(
            _weighted(masked, upstream), x, step)),
    ])

    # lrn
    spec = L.LrnSpec()
    x = rng.normal(2 * 6 * 4 * 4).reshape(2, 6, 4, 4)
    y, ctx = L.lrn_forward(x, spec)
    upstream = rng.normal(y.size).reshape(y.shape)
    record("lrn", [
        relative_error(L.lrn_backward(ctx, upstream), L.finite_difference_grad(
            _weighted(lambda t: L.lrn_forward(t, spec, False)[0], upstream), x, step)),
    ])

    # dense
    x = rng.normal(3 * 8).reshape(3, 8, 1, 1)
    w = rng.normal(8 * 5).reshape(8, 5)
    b = rng.normal(5)
    y, ctx = L.dense_forward(x, w, b)
    upstream = rng.normal(y.size).reshape(y.shape)
    gx, gw, gb = L.dense_backward(ctx, upstream)
    record("dense", [
        relative_error(gx, L.finite_difference_grad(
            _weighted(lambda t: L.dense_forward(t, w, b, False)[0], upstream), x, step)),
        relative_error(gw, L.finite_difference_grad(
            _weighted(lambda t: L.dense_forward(x, t, b, False)[0], upstream), w, step)),
        relative_error(gb, L.finite_difference_grad(
            _weighted(lambda t: L.dense_forward(x, w, t, False)[0], upstream), b, step)),
    ])

    # relu (inputs nudged away from 0)
    x = rng.normal(2 * 3 * 4 * 4).reshape(2, 3, 4, 4)
    x = np.where(np.abs(x) < 0.05, 0.1 * np.sign(x) + (x == 0) * 0.1, x)
    y, ctx = L.relu(x)
    upstream = rng.normal(y.size).reshape(y.shape)
    record("relu", [
        relative_error(L.relu_backward(ctx, upstream), L.finite_difference_grad(
            _weighted(lambda t: L.relu(t, False)[0], upstream), x, step)),
    ])

    # softmax cross-entropy (gradient of the mean loss itself)
    logits = rng.normal(3 * 4).reshape(3, 4)
    labels = np.array([0, 2, 3])
    _, _, analytic = L.softmax_cross_entropy(logits, labels)
    numeric = L.finite_difference_grad(
        lambda t: L.softmax_cross_entropy(t, labels)[0], logits, step)
    record("softmax-ce", [relative_error(analytic, numeric)])

    # concat
    xa = rng.normal(2 * 2 * 3 * 3).reshape(2, 2, 3, 3)
    xb = rng.normal(2 * 3 * 3 * 3).reshape(2, 3, 3, 3)
    y, ctx = L.concat_channels([xa, xb])
    upstream = rng.normal(y.size).reshape(y.shape)
    ga, gb_ = L.concat_backward(ctx, upstream)
    record("concat", [
        relative_error(ga, L.finite_difference_grad(
            _weighted(lambda t: L.concat_channels([t, xb], False)[0], upstream), xa, step)),
        relative_error(gb_, L.finite_difference_grad(
            _weighted(lambda t: L.concat_channels([xa, t], False)[0], upstream), xb, step)),
    ])

    # flatten
    x = rng.normal(2 * 3 * 2 * 2).reshape(2, 3, 2, 2)
    y, ctx = L.flatten_forward(x)
    upstream = rng.normal(y.size).reshape(y.shape)
    record("flatten", [
        relative_error(L.flatten_backward(ctx, upstream), L.finite_difference_grad(
            _weighted(lambda t: L.flatten_forward(t, False)[0], upstream), x, step)),
    ])

    return results


def _preset_check_names() -> List[str]:
    names = []
    for base in preset_names():
        for variant in VARIANTS:
            names.append(base if variant == "baseline" else f"{base}+{variant}")
    return names


def check_presets(tolerance: float = GRAPH_TOLERANCE, step: float = FD_STEP,
                  coords_per_slot: int = COORDS_PER_SLOT,
                  corrupt: Optional[str] = None) -> List[CheckResult]:
    """End-to-end check of every preset on a tiny clone.

    Channels are clamped to 8 and the input is 2x3x16x16, small enough
    that central differences on a seeded sample of coordinates per
    parameter slot finish quickly.
    """
    results = []
    for name in _preset_check_names():
        name_tag = zlib.crc32(name.encode())  # stable across interpreter runs
        g = build_preset(name, 2, Shape4(1, 3, 16, 16), max_channels=8)
        init_rng = Rng(derive_seed(101, name_tag))
        store = init_parameters(g, init_rng)
        for slot in store.slots.values():
            # nudge zero-initialized biases/offsets so no pre-activation sits
            # exactly on a relu kink (dropout can zero a whole tiny layer)
            slot.value += 0.05 * init_rng.normal(slot.value.size).reshape(slot.value.shape)
        data_rng = Rng(7)
        x = data_rng.normal(2 * 3 * 16 * 16).reshape(2, 3, 16, 16)
        labels = np.array([0, 1])
        mask_seed = 3301

        def loss_at_params():
            loss, _, _ = forward_pass(g, store, x, labels, L.MODE_TRAINING, Rng(mask_seed))
            return loss

        loss, _, contexts = forward_pass(g, store, x, labels, L.MODE_TRAINING, Rng(mask_seed))
        backward_pass(g, store, contexts)
        analytic = {slot: store.slots[slot].grad.copy() for slot in store.slots}

        worst = 0.0
        coord_rng = Rng(derive_seed(55, name_tag))
        for slot_name, slot in store.slots.items():
            flat = slot.value.reshape(-1)
            size = flat.size
            if size <= coords_per_slot:
                coords = list(range(size))
            else:
                coords = sorted({coord_rng.randbelow(size) for _ in range(coords_per_slot)})
            for i in coords:
                original = flat[i]
                flat[i] = original + step
                upper = loss_at_params()
                flat[i] = original - step
                lower = loss_at_params()
                flat[i] = original
                numeric = (upper - lower) / (2 * step)
                a = analytic[slot_name].reshape(-1)[i]
                err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
                worst = max(worst, err)
        if corrupt == name:
            worst += 1.0
        results.append(CheckResult(name, worst, tolerance))
    return results


def run_gradcheck(layer_tolerance: float = LAYER_TOLERANCE,
                  graph_tolerance: float = GRAPH_TOLERANCE,
                  corrupt: Optional[str] = None,
                  emit: Callable[[str], None] = print) -> bool:
    """Run both suites, print one line per check, return overall pass."""
    results = check_layers(layer_tolerance, corrupt=corrupt)
    results += check_presets(graph_tolerance, corrupt=corrupt)
    ok = True
    for result in results:
        status = "PASS" if result.passed else "FAIL"
        emit(f"{result.name:<32} max_rel={result.max_rel_err:.3e}  "
             f"tol={result.tolerance:.0e}  {status}")
        ok = ok and result.passed
    emit(f"gradcheck: {'all checks passed' if ok else 'FAILURES detected'}")
    return ok
