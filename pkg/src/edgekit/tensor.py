"""Dense tensors with reverse-mode automatic differentiation.

The engine covers exactly the operations the edge-detection stack needs:
2-D convolution (stride / padding / dilation), group normalization,
bilinear resizing, ceil-mode 2x2 max pooling, a handful of pointwise
maps, axis softmax, concatenation, and scalar summation. Every
differentiable operation can be validated against central finite
differences with :func:`grad_check`.

Tensors are treated as immutable once produced by an op. A training step
owns its graph exclusively; read-only forward passes may share weight
tensors across threads.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

__all__ = [
    "Tensor",
    "add",
    "backward",
    "bilinear_resize",
    "concat",
    "conv2d",
    "grad_check",
    "group_norm",
    "max_pool2",
    "mul",
    "relu",
    "scale",
    "sigmoid",
    "softmax_axis",
    "tensor_sum",
]


class Tensor:
    """N-dimensional float array, optionally tracked on the gradient tape.

    ``data`` is a contiguous float32 array by default; float64 inputs are
    kept as-is so the whole stack can run in double precision for
    gradient checking. ``grad`` is populated by :func:`backward` and has
    the same shape as ``data``.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def __float__(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{flag})"


def _finite(name: str, data: np.ndarray) -> np.ndarray:
    if not np.isfinite(data).all():
        raise FloatingPointError(f"{name} produced non-finite values")
    return data


def _node(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every tensor reachable from a scalar loss.

    Gradients are accumulated (summed) across all consumers of a tensor;
    traversal follows exact reverse topological order of the tape.
    """
    if loss.size != 1:
        raise ValueError(f"backward expects a scalar loss, got shape {loss.shape}")
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is None or node.grad is None:
            continue
        for parent, pgrad in zip(node._parents, node._backward(node.grad)):
            if pgrad is None or not parent.requires_grad:
                continue
            if parent.grad is None:
                parent.grad = pgrad
            else:
                parent.grad = parent.grad + pgrad


# ---------------------------------------------------------------------------
# convolution

_CONV_CACHE: dict[tuple, tuple] = {}


def _conv_plan(C, H, W, kh, kw, stride, padding, dilation):
    key = (C, H, W, kh, kw, stride, padding, dilation)
    plan = _CONV_CACHE.get(key)
    if plan is not None:
        return plan
    Hp, Wp = H + 2 * padding, W + 2 * padding
    span_h = dilation * (kh - 1) + 1
    span_w = dilation * (kw - 1) + 1
    Ho = (Hp - span_h) // stride + 1
    Wo = (Wp - span_w) // stride + 1
    if Ho < 1 or Wo < 1:
        raise ValueError(
            f"conv2d: kernel {kh}x{kw} (dilation {dilation}) does not fit "
            f"{H}x{W} input with padding {padding}"
        )
    i0 = np.repeat(np.arange(kh) * dilation, kw)
    j0 = np.tile(np.arange(kw) * dilation, kh)
    i1 = np.repeat(np.arange(Ho) * stride, Wo)
    j1 = np.tile(np.arange(Wo) * stride, Ho)
    rows = i0[:, None] + i1[None, :]  # (kh*kw, Ho*Wo)
    cols = j0[:, None] + j1[None, :]
    flat = rows * Wp + cols
    scatter = (np.arange(C)[:, None, None] * (Hp * Wp) + flat[None]).ravel()
    plan = (Ho, Wo, Hp, Wp, rows, cols, scatter)
    _CONV_CACHE[key] = plan
    return plan


def conv2d(
    x: Tensor,
    w: Tensor,
    b: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
    dilation: int = 1,
) -> Tensor:
    """Cross-correlate an NCHW input with OIHW weights (zero padding)."""
    if x.ndim != 4 or w.ndim != 4:
        raise ValueError(f"conv2d expects 4-D input and weight, got {x.shape} and {w.shape}")
    N, C, H, W = x.shape
    Co, Ci, kh, kw = w.shape
    if Ci != C:
        raise ValueError(f"conv2d: input shape {x.shape} incompatible with weight shape {w.shape}")
    if b is not None and b.shape != (Co,):
        raise ValueError(f"conv2d: bias shape {b.shape} does not match {Co} output channels")
    if stride < 1 or dilation < 1 or padding < 0:
        raise ValueError(f"conv2d: invalid stride={stride}, padding={padding}, dilation={dilation}")

    Ho, Wo, Hp, Wp, rows, cols, scatter = _conv_plan(C, H, W, kh, kw, stride, padding, dilation)
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    patches = xp[:, :, rows, cols].reshape(N, C * kh * kw, Ho * Wo)
    wm = w.data.reshape(Co, C * kh * kw)
    out = wm @ patches  # (N, Co, Ho*Wo)
    if b is not None:
        out = out + b.data[None, :, None]
    out = out.reshape(N, Co, Ho, Wo)
    _finite("conv2d", out)

    def backward_fn(g):
        gf = g.reshape(N, Co, Ho * Wo)
        gx = gw = gb = None
        if w.requires_grad:
            gw = np.matmul(gf, patches.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
            gw = gw.astype(w.dtype, copy=False)
        if b is not None and b.requires_grad:
            gb = gf.sum(axis=(0, 2)).astype(b.dtype, copy=False)
        if x.requires_grad:
            dpatches = wm.T @ gf  # (N, C*kh*kw, Ho*Wo)
            planes = [
                np.bincount(scatter, weights=dpatches[n].ravel(), minlength=C * Hp * Wp)
                for n in range(N)
            ]
            gxp = np.stack(planes).reshape(N, C, Hp, Wp)
            if padding:
                gxp = gxp[:, :, padding : padding + H, padding : padding + W]
            gx = gxp.astype(x.dtype, copy=False)
        return (gx, gw, gb) if b is not None else (gx, gw)

    parents = (x, w) if b is None else (x, w, b)
    return _node(out, parents, backward_fn)


# ---------------------------------------------------------------------------
# normalization

def group_norm(
    x: Tensor,
    num_groups: int,
    gamma: Tensor,
    beta: Tensor,
    eps: float = 1e-5,
) -> Tensor:
    """Per-(sample, group) mean/variance normalization with channel affine."""
    if x.ndim != 4:
        raise ValueError(f"group_norm expects 4-D input, got {x.shape}")
    N, C, H, W = x.shape
    if num_groups < 1 or C % num_groups != 0:
        raise ValueError(f"group_norm: {C} channels not divisible into {num_groups} groups")
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ValueError(f"group_norm: affine shapes {gamma.shape}/{beta.shape} do not match {C} channels")
    if eps <= 0:
        raise ValueError("group_norm: eps must be positive")

    xg = x.data.reshape(N, num_groups, -1)
    mu = xg.mean(axis=2, keepdims=True)
    var = xg.var(axis=2, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xh = ((xg - mu) * inv).reshape(N, C, H, W)
    out = xh * gamma.data.reshape(1, C, 1, 1) + beta.data.reshape(1, C, 1, 1)
    _finite("group_norm", out)

    def backward_fn(g):
        ggamma = gbeta = gx = None
        if gamma.requires_grad:
            ggamma = (g * xh).sum(axis=(0, 2, 3)).astype(gamma.dtype, copy=False)
        if beta.requires_grad:
            gbeta = g.sum(axis=(0, 2, 3)).astype(beta.dtype, copy=False)
        if x.requires_grad:
            dxh = (g * gamma.data.reshape(1, C, 1, 1)).reshape(N, num_groups, -1)
            xhg = xh.reshape(N, num_groups, -1)
            gxg = inv * (
                dxh
                - dxh.mean(axis=2, keepdims=True)
                - xhg * (dxh * xhg).mean(axis=2, keepdims=True)
            )
            gx = gxg.reshape(N, C, H, W).astype(x.dtype, copy=False)
        return gx, ggamma, gbeta

    return _node(out, (x, gamma, beta), backward_fn)


# ---------------------------------------------------------------------------
# resampling

_RESIZE_CACHE: dict[tuple, tuple] = {}


def _axis_plan(n_in: int, n_out: int):
    # half-pixel centers (align-corners off), clamped to the valid range
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, float(n_in - 1))
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, src - lo


def _resize_plan(H, W, oh, ow):
    key = (H, W, oh, ow)
    plan = _RESIZE_CACHE.get(key)
    if plan is not None:
        return plan
    y0, y1, fy = _axis_plan(H, oh)
    x0, x1, fx = _axis_plan(W, ow)
    w00 = (1.0 - fy)[:, None] * (1.0 - fx)[None, :]
    w01 = (1.0 - fy)[:, None] * fx[None, :]
    w10 = fy[:, None] * (1.0 - fx)[None, :]
    w11 = fy[:, None] * fx[None, :]
    i00 = y0[:, None] * W + x0[None, :]
    i01 = y0[:, None] * W + x1[None, :]
    i10 = y1[:, None] * W + x0[None, :]
    i11 = y1[:, None] * W + x1[None, :]
    scatter = np.concatenate([i00.ravel(), i01.ravel(), i10.ravel(), i11.ravel()])
    plan = (y0, y1, x0, x1, (w00, w01, w10, w11), scatter)
    _RESIZE_CACHE[key] = plan
    return plan


def bilinear_resize(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Bilinear resampling to (out_h, out_w); backward scatters the weights."""
    if x.ndim != 4:
        raise ValueError(f"bilinear_resize expects 4-D input, got {x.shape}")
    if out_h < 1 or out_w < 1:
        raise ValueError(f"bilinear_resize: invalid target size {out_h}x{out_w}")
    N, C, H, W = x.shape
    if (out_h, out_w) == (H, W):
        return _node(x.data.copy(), (x,), lambda g: (g,))

    y0, y1, x0, x1, (w00, w01, w10, w11), scatter = _resize_plan(H, W, out_h, out_w)
    d = x.data
    out = (
        w00 * d[:, :, y0[:, None], x0[None, :]]
        + w01 * d[:, :, y0[:, None], x1[None, :]]
        + w10 * d[:, :, y1[:, None], x0[None, :]]
        + w11 * d[:, :, y1[:, None], x1[None, :]]
    ).astype(x.dtype, copy=False)
    _finite("bilinear_resize", out)

    def backward_fn(g):
        if not x.requires_grad:
            return (None,)
        contrib = np.concatenate(
            [
                (g * w00).reshape(N * C, -1),
                (g * w01).reshape(N * C, -1),
                (g * w10).reshape(N * C, -1),
                (g * w11).reshape(N * C, -1),
            ],
            axis=1,
        )
        base = np.arange(N * C)[:, None] * (H * W)
        idx = (base + scatter[None, :]).ravel()
        gx = np.bincount(idx, weights=contrib.ravel(), minlength=N * C * H * W)
        return (gx.reshape(N, C, H, W).astype(x.dtype, copy=False),)

    return _node(out, (x,), backward_fn)


# ---------------------------------------------------------------------------
# pooling

def max_pool2(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2, ceil-mode output size.

    Gradient routes to the first maximum in row-major window scan order.
    """
    if x.ndim != 4:
        raise ValueError(f"max_pool2 expects 4-D input, got {x.shape}")
    N, C, H, W = x.shape
    if H < 2 or W < 2:
        raise ValueError(f"max_pool2 needs at least 2x2 input, got {H}x{W}")
    Ho, Wo = (H + 1) // 2, (W + 1) // 2
    ph, pw = 2 * Ho - H, 2 * Wo - W
    if ph or pw:
        xp = np.pad(x.data, ((0, 0), (0, 0), (0, ph), (0, pw)), constant_values=-np.inf)
    else:
        xp = x.data
    win = xp.reshape(N, C, Ho, 2, Wo, 2).transpose(0, 1, 2, 4, 3, 5).reshape(N, C, Ho, Wo, 4)
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    _finite("max_pool2", out)

    def backward_fn(g):
        if not x.requires_grad:
            return (None,)
        gx = np.zeros((N, C, 2 * Ho, 2 * Wo), dtype=g.dtype)
        n_i, c_i, h_i, w_i = np.ogrid[:N, :C, :Ho, :Wo]
        gx[n_i, c_i, h_i * 2 + arg // 2, w_i * 2 + arg % 2] = g
        return (gx[:, :, :H, :W].astype(x.dtype, copy=False),)

    return _node(out, (x,), backward_fn)


# ---------------------------------------------------------------------------
# pointwise and shape ops

def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0)

    def backward_fn(g):
        return ((g * (x.data > 0)).astype(x.dtype, copy=False),)

    return _node(out, (x,), backward_fn)


def sigmoid(x: Tensor) -> Tensor:
    s = expit(x.data)

    def backward_fn(g):
        return ((g * s * (1.0 - s)).astype(x.dtype, copy=False),)

    return _node(s, (x,), backward_fn)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"add: shape mismatch {a.shape} vs {b.shape}")
    out = a.data + b.data
    _finite("add", out)

    def backward_fn(g):
        return g, g

    return _node(out, (a, b), backward_fn)


def scale(x: Tensor, c: float) -> Tensor:
    out = x.data * c
    _finite("scale", out)

    def backward_fn(g):
        return ((g * c).astype(x.dtype, copy=False),)

    return _node(out, (x,), backward_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"mul: shape mismatch {a.shape} vs {b.shape}")
    out = a.data * b.data
    _finite("mul", out)

    def backward_fn(g):
        ga = (g * b.data).astype(a.dtype, copy=False) if a.requires_grad else None
        gb = (g * a.data).astype(b.dtype, copy=False) if b.requires_grad else None
        return ga, gb

    return _node(out, (a, b), backward_fn)


def concat(tensors: list[Tensor], axis: int) -> Tensor:
    if not tensors:
        raise ValueError("concat: empty tensor list")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward_fn(g):
        grads = []
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            index = [slice(None)] * g.ndim
            index[axis] = slice(lo, hi)
            grads.append(g[tuple(index)] if t.requires_grad else None)
        return tuple(grads)

    return _node(out, tuple(tensors), backward_fn)


def softmax_axis(x: Tensor, axis: int) -> Tensor:
    """Softmax along one axis, computed with max subtraction for stability."""
    if not -x.ndim <= axis < x.ndim:
        raise ValueError(f"softmax_axis: axis {axis} out of range for shape {x.shape}")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward_fn(g):
        gx = s * (g - (g * s).sum(axis=axis, keepdims=True))
        return (gx.astype(x.dtype, copy=False),)

    return _node(s, (x,), backward_fn)


def tensor_sum(x: Tensor) -> Tensor:
    out = x.data.sum()
    _finite("tensor_sum", np.asarray(out))

    def backward_fn(g):
        return (np.full(x.shape, g, dtype=x.dtype),)

    return _node(np.asarray(out), (x,), backward_fn)


# ---------------------------------------------------------------------------
# gradient checking

def grad_check(f, inputs, eps: float = 1e-4) -> float:
    """Compare analytic gradients of ``f(*inputs)`` to central differences.

    ``f`` must be a pure scalar-valued function of the given tensors, which
    must be float64 (finite differences are unreliable in single
    precision). Returns the max over all coordinates of
    ``|analytic - numeric| / max(1e-8, |analytic| + |numeric|)``.
    """
    if isinstance(inputs, Tensor):
        inputs = [inputs]
    for t in inputs:
        if t.data.dtype != np.float64:
            raise ValueError("grad_check requires float64 tensors")
        t.requires_grad = True
        t.grad = None
    out = f(*inputs)
    if out.size != 1:
        raise ValueError(f"grad_check: f must be scalar-valued, got shape {out.shape}")
    backward(out)
    worst = 0.0
    for t in inputs:
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad
        flat = t.data.ravel()
        an = analytic.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            plus = float(f(*inputs).data)
            flat[i] = orig - eps
            minus = float(f(*inputs).data)
            flat[i] = orig
            numeric = (plus - minus) / (2.0 * eps)
            denom = max(1e-8, abs(an[i]) + abs(numeric))
            worst = max(worst, abs(an[i] - numeric) / denom)
    return worst
