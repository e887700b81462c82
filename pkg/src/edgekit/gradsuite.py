"""Finite-difference verification suite covering every differentiable op.

Each check builds small float64 tensors from a fixed seed and compares
analytic gradients against central differences. Seeds are pinned so no
relu pre-activation sits inside the perturbation window.
"""

from __future__ import annotations

import sys

import numpy as np

from edgekit.losses import dynamic_focal, focal, threshold_gt, wce
from edgekit.tensor import (
    Tensor,
    add,
    bilinear_resize,
    concat,
    conv2d,
    grad_check,
    group_norm,
    max_pool2,
    mul,
    relu,
    scale,
    sigmoid,
    softmax_axis,
    tensor_sum,
)

__all__ = ["run_gradient_suite"]

TOLERANCE = 1e-4


def _t(rng, shape, offset=0.0):
    return Tensor(rng.standard_normal(shape) + offset, requires_grad=True)


def _labels(rng, shape):
    gt = np.zeros(shape, dtype=np.float32)
    gt[rng.random(shape) < 0.3] = 1.0
    gt[rng.random(shape) < 0.1] = 0.2
    return threshold_gt(gt, 0.3)


def _op_checks():
    rng = np.random.default_rng(1234)
    checks = []

    x = _t(rng, (1, 3, 8, 8))
    w = _t(rng, (4, 3, 3, 3))
    b = _t(rng, (4,))
    checks.append(("conv2d", lambda: grad_check(
        lambda x, w, b: tensor_sum(sigmoid(conv2d(x, w, b, padding=1))), [x, w, b])))

    xd = _t(rng, (1, 2, 9, 9))
    wd = _t(rng, (2, 2, 3, 3))
    checks.append(("conv2d_stride_dilation", lambda: grad_check(
        lambda x, w: tensor_sum(sigmoid(conv2d(x, w, stride=2, padding=2, dilation=2))), [xd, wd])))

    xg = _t(rng, (2, 6, 5, 5))
    gamma = Tensor(rng.standard_normal(6) * 0.3 + 1.0, requires_grad=True)
    beta = _t(rng, (6,))
    checks.append(("group_norm", lambda: grad_check(
        lambda x, g, bb: tensor_sum(sigmoid(group_norm(x, 3, g, bb))), [xg, gamma, beta])))

    xr = _t(rng, (1, 3, 6, 7))
    checks.append(("bilinear_resize_up", lambda: grad_check(
        lambda x: tensor_sum(sigmoid(bilinear_resize(x, 11, 13))), xr)))
    xr2 = _t(rng, (1, 3, 9, 8))
    checks.append(("bilinear_resize_down", lambda: grad_check(
        lambda x: tensor_sum(sigmoid(bilinear_resize(x, 4, 3))), xr2)))

    xp = _t(rng, (1, 2, 7, 6))
    checks.append(("max_pool2", lambda: grad_check(
        lambda x: tensor_sum(sigmoid(max_pool2(x))), xp)))

    # keep relu inputs away from the kink
    xa = Tensor(rng.standard_normal((2, 3, 4, 4)) + np.where(rng.random((2, 3, 4, 4)) > 0.5, 0.5, -0.5),
                requires_grad=True)
    checks.append(("relu", lambda: grad_check(lambda x: tensor_sum(relu(x)), xa)))

    xs = _t(rng, (2, 3, 4, 4))
    checks.append(("sigmoid", lambda: grad_check(lambda x: tensor_sum(mul(sigmoid(xs), x)), _t(rng, (2, 3, 4, 4)))))

    aa = _t(rng, (3, 5))
    ab = _t(rng, (3, 5))
    checks.append(("add_scale_mul", lambda: grad_check(
        lambda a, b: tensor_sum(mul(scale(add(a, b), 0.5), a)), [aa, ab])))

    xc1 = _t(rng, (1, 2, 4, 4))
    xc2 = _t(rng, (1, 3, 4, 4))
    checks.append(("concat", lambda: grad_check(
        lambda a, b: tensor_sum(sigmoid(concat([a, b], axis=1))), [xc1, xc2])))

    xsm = _t(rng, (1, 5, 4, 4))
    checks.append(("softmax_axis", lambda: grad_check(
        lambda x: tensor_sum(mul(softmax_axis(x, 1), x)), xsm)))

    return checks


def _loss_checks():
    rng = np.random.default_rng(4321)
    checks = []
    labels = _labels(rng, (16, 16))
    for name, fn in (
        ("wce", lambda p: wce(p, labels)),
        ("focal", lambda p: focal(p, labels, gamma=2.0)),
        ("dynamic_focal", lambda p: dynamic_focal(p, labels, gamma=1.0, mu=0.5, epoch=2)),
    ):
        z = _t(rng, (16, 16))
        checks.append((name, lambda z=z, fn=fn: grad_check(lambda t: fn(sigmoid(t)), z)))
    return checks


def _composed_check():
    from edgekit.model import EdgeNet, ModelConfig

    # seeds pinned clear of relu kinks (see tests)
    model = EdgeNet(ModelConfig.from_preset("tiny"), seed=22, dtype=np.float64)
    rng = np.random.default_rng(23)
    gt = np.zeros((16, 16), dtype=np.float32)
    gt[5:7, :] = 1.0
    labels = threshold_gt(gt, 0.3)
    img = Tensor(rng.random((1, 3, 16, 16)))

    def f(image):
        pred = model.forward(image)
        return dynamic_focal(pred.fused_prob, labels, gamma=1.0, mu=0.5, epoch=1)

    return ("composed_forward_dfl", lambda: grad_check(f, img))


def run_gradient_suite(full: bool = False, out=None) -> float:
    """Run every check, print one line each, return the worst error."""
    out = out or sys.stdout
    checks = _op_checks() + _loss_checks()
    if full:
        checks.append(_composed_check())
    worst = 0.0
    for name, fn in checks:
        err = fn()
        status = "ok" if err < TOLERANCE else "FAIL"
        print(f"{name}: max_rel_error={err:.3e} {status}", file=out)
        worst = max(worst, err)
    return worst
