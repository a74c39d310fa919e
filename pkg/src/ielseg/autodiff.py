"""A small reverse-mode autodiff engine over dense numpy arrays.

Tensors are (batch, channels, rows, cols). Each op returns a :class:`Node`
holding its value and a closure mapping the upstream gradient to one
gradient per parent. Gradients take the dtype of the values, so the same
graph runs in float32 for training and float64 for finite-difference checks.
"""
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from ielseg import kernels
from ielseg.curvemotion import CurveMotionConfig, curve_step_array
from ielseg.diffusion import DiffusionConfig, fel_array, iel_array


class Node:
    __slots__ = ("value", "grad", "parents", "backward_fn", "requires_grad", "kink")

    def __init__(self, value, parents=(), backward_fn=None, requires_grad=False):
        self.value = np.asarray(value)
        self.grad = None
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad or any(p.requires_grad for p in self.parents)
        # non-differentiable decisions taken in the forward pass (relu masks,
        # pooling argmax, curve speed maps); finite-difference checks compare them
        self.kink = None

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node(shape={self.value.shape}, dtype={self.value.dtype}, requires_grad={self.requires_grad})"


def tensor(value, requires_grad=False) -> Node:
    return Node(value, requires_grad=requires_grad)


def _toposort(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in reversed(node.parents):
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Node):
    """Accumulate d(root)/d(node) into ``.grad`` of every node that requires it."""
    if root.value.size != 1:
        raise ValueError(f"backward needs a scalar root, got shape {root.value.shape}")
    order = _toposort(root)
    for node in order:
        node.grad = None
    root.grad = np.ones_like(root.value)
    for node in reversed(order):
        if node.backward_fn is None or node.grad is None:
            continue
        grads = node.backward_fn(node.grad)
        for parent, g in zip(node.parents, grads):
            if g is None or not parent.requires_grad:
                continue
            parent.grad = g if parent.grad is None else parent.grad + g


def graph_nodes(root: Node):
    return _toposort(root)


def kink_signature(root: Node) -> bytes:
    """Bytes identifying every non-differentiable branch taken in the graph."""
    parts = []
    for node in _toposort(root):
        if node.kink is not None:
            parts.append(np.ascontiguousarray(node.kink).tobytes())
    return b"|".join(parts)


# ----------------------------------------------------------------- basic ops

def op_add(a: Node, b: Node) -> Node:
    if a.shape != b.shape:
        raise ValueError(f"op_add shape mismatch: {a.shape} vs {b.shape}")
    return Node(a.value + b.value, (a, b), lambda g: (g, g))


def op_scale(a: Node, c: float) -> Node:
    c = a.value.dtype.type(c)
    return Node(a.value * c, (a,), lambda g: (g * c,))


def op_relu(x: Node) -> Node:
    mask = x.value > 0
    out = Node(np.where(mask, x.value, x.value.dtype.type(0)), (x,), lambda g: (g * mask,))
    out.kink = mask
    return out


def op_maxpool2(x: Node) -> Node:
    b, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"maxpool2 needs even spatial dims, got {h}x{w}")
    blocks = x.value.reshape(b, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h // 2, w // 2, 4)
    arg = blocks.argmax(axis=-1)  # first occurrence on ties
    val = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def back(g):
        gb = np.zeros(blocks.shape, dtype=g.dtype)
        np.put_along_axis(gb, arg[..., None], g[..., None], axis=-1)
        gx = gb.reshape(b, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h, w)
        return (gx,)

    out = Node(val, (x,), back)
    out.kink = arg.astype(np.int8)
    return out


def op_upsample_nearest2(x: Node) -> Node:
    b, c, h, w = x.shape
    val = np.repeat(np.repeat(x.value, 2, axis=2), 2, axis=3)
    return Node(val, (x,), lambda g: (g.reshape(b, c, h, 2, w, 2).sum(axis=(3, 5)),))


def op_concat_channels(a: Node, b: Node) -> Node:
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ValueError(f"op_concat_channels shape mismatch: {a.shape} vs {b.shape}")
    ca = a.shape[1]
    return Node(np.concatenate([a.value, b.value], axis=1), (a, b), lambda g: (g[:, :ca], g[:, ca:]))


def op_conv3x3(x: Node, kernels_: Node, bias: Node) -> Node:
    """Stride-1 3x3 cross-correlation with replicate padding."""
    bsz, cin, h, w = x.shape
    cout, kin, kh, kw = kernels_.shape
    if (kh, kw) != (3, 3):
        raise ValueError(f"kernel must be (out, in, 3, 3), got {kernels_.shape}")
    if kin != cin:
        raise ValueError(f"channel mismatch: input has {cin}, kernel expects {kin}")
    if bias.shape != (cout,):
        raise ValueError(f"bias must have shape ({cout},), got {bias.shape}")
    cols = kernels.im2col3x3(x.value)
    wmat = kernels_.value.reshape(cout, cin * 9)
    y = np.matmul(wmat, cols)
    y += bias.value[None, :, None]

    def back(g):
        g = g.reshape(bsz, cout, h * w)
        gk = np.matmul(g, cols.transpose(0, 2, 1)).sum(axis=0).reshape(kernels_.shape)
        gb = g.sum(axis=(0, 2))
        gx = None
        if x.requires_grad:
            gx = kernels.col2im3x3(np.matmul(wmat.T, g), h, w)
        return gx, gk, gb

    return Node(y.reshape(bsz, cout, h, w), (x, kernels_, bias), back)


# ------------------------------------------------------- evolution layers

def op_iel_heat(logits: Node, cfg: DiffusionConfig) -> Node:
    """Stacked inverse heat layers. The operator is linear and symmetric, so
    its vector-Jacobian product is the same operator applied to the gradient."""
    n, dt, h = cfg.n_layers, cfg.dt, cfg.spacing
    return Node(iel_array(logits.value, dt, n, h), (logits,), lambda g: (iel_array(g, dt, n, h),))


def op_fel_heat(logits: Node, cfg: DiffusionConfig) -> Node:
    n, dt, h = cfg.n_layers, cfg.dt, cfg.spacing
    return Node(fel_array(logits.value, dt, n, h), (logits,), lambda g: (fel_array(g, dt, n, h),))


def grad_mag_vjp(u, g, h=1.0):
    """Gradient of ``sum(g * |grad_h u|)`` with respect to ``u`` (H, W).

    Where the magnitude is zero the subgradient 0 is used.
    """
    hgt, wid = u.shape
    p = np.pad(u, 1, mode="edge")
    a = p[2:, 1:-1] - p[:-2, 1:-1]
    b = p[1:-1, 2:] - p[1:-1, :-2]
    s = np.sqrt(a * a + b * b)
    safe = np.where(s > 0, s, 1)
    coef = np.where(s > 0, g / (safe * (2.0 * h)), 0).astype(u.dtype)
    ca, cb = coef * a, coef * b
    acc = np.zeros((hgt + 2, wid + 2), dtype=u.dtype)
    acc[2:, 1:-1] += ca
    acc[:-2, 1:-1] -= ca
    acc[1:-1, 2:] += cb
    acc[1:-1, :-2] -= cb
    acc[1, :] += acc[0, :]
    acc[hgt, :] += acc[hgt + 1, :]
    acc[:, 1] += acc[:, 0]
    acc[:, wid] += acc[:, wid + 1]
    return acc[1:-1, 1:-1]


def op_curve_iel(logits: Node, cfg: CurveMotionConfig, channel: int = 1, reference: int = 0, h: float = 1.0) -> Node:
    """Curve-motion layers on the score ``logits[channel] - logits[reference]``.

    The evolved score replaces ``channel`` (``reference`` is untouched), so
    the softmax sees the evolved region. Each step's speed map is treated as
    a constant in the backward pass.
    """
    x = logits.value
    bsz = x.shape[0]
    trajectories = []
    out = x.copy()
    kinks = []
    for i in range(bsz):
        s = x[i, channel] - x[i, reference]
        steps = []
        for _ in range(cfg.n_steps):
            s_next, v = curve_step_array(s, cfg, h)
            steps.append((s, v))
            s = s_next
        trajectories.append(steps)
        out[i, channel] = x[i, reference] + s
        for s_n, v in steps:
            kinks.append(v != 0)
            kinks.append(kernels.grad_mag_central(s_n, h) == 0)

    def back(g):
        gx = g.copy()
        for i in range(bsz):
            gs = g[i, channel].copy()
            for s_n, v in reversed(trajectories[i]):
                if v.any():
                    gs = gs + grad_mag_vjp(s_n, cfg.dt * v * gs, h)
            gx[i, channel] = gs
            gx[i, reference] = g[i, reference] + g[i, channel] - gs
        return (gx,)

    node = Node(out, (logits,), back)
    node.kink = np.array(kinks) if kinks else None
    return node


# ------------------------------------------------------------ loss terms

def softmax_cross_entropy(logits: Node, target) -> Node:
    """Mean over pixels of ``-log softmax(logits)[target]``.

    ``target`` is an integer array (batch, rows, cols) or a LabelMask for a
    batch of one.
    """
    ids = np.asarray(getattr(target, "ids", target))
    if ids.ndim == 2:
        ids = ids[None]
    x = logits.value
    bsz, k, h, w = x.shape
    if ids.shape != (bsz, h, w):
        raise ValueError(f"target shape {ids.shape} does not match logits {x.shape}")
    if ids.min() < 0 or ids.max() >= k:
        raise ValueError(f"class ids must lie in [0, {k})")
    z = x - x.max(axis=1, keepdims=True)
    ez = np.exp(z)
    se = ez.sum(axis=1, keepdims=True)
    logp = z - np.log(se)
    picked = np.take_along_axis(logp, ids[:, None], axis=1)
    count = bsz * h * w
    loss = -picked.astype(np.float64).sum() / count

    def back(g):
        p = ez / se
        onehot = np.zeros_like(p)
        np.put_along_axis(onehot, ids[:, None], 1, axis=1)
        return ((p - onehot) * (g / count).astype(x.dtype),)

    return Node(np.asarray(loss, dtype=x.dtype), (logits,), back)


def grad_penalty_term(logits: Node, lam: float, h: float = 1.0) -> Node:
    """``lam * h^2 * E(logits)`` with E the forward-difference Dirichlet
    energy summed over channels and pixels, averaged over the batch."""
    x = logits.value
    bsz = x.shape[0]
    dx = np.zeros_like(x)
    dy = np.zeros_like(x)
    dx[:, :, :-1] = (x[:, :, 1:] - x[:, :, :-1]) / h
    dy[:, :, :, :-1] = (x[:, :, :, 1:] - x[:, :, :, :-1]) / h
    energy = (dx.astype(np.float64) ** 2).sum() + (dy.astype(np.float64) ** 2).sum()
    scale = lam * h * h / bsz

    def back(g):
        c = x.dtype.type(2 * scale / h) * g
        gx = np.zeros_like(x)
        # adjoint of the forward difference: -d on the left pixel, +d on the right
        gx[:, :, :-1] -= dx[:, :, :-1]
        gx[:, :, 1:] += dx[:, :, :-1]
        gx[:, :, :, :-1] -= dy[:, :, :, :-1]
        gx[:, :, :, 1:] += dy[:, :, :, :-1]
        return (gx * c,)

    return Node(np.asarray(scale * energy, dtype=x.dtype), (logits,), back)


def weight_decay_term(params, lam: float) -> Node:
    """``lam * sum(w^2)`` over every parameter node."""
    params = list(params)
    total = sum(float((p.value.astype(np.float64) ** 2).sum()) for p in params)
    dtype = params[0].value.dtype if params else np.float32

    def back(g):
        return tuple(p.value * p.value.dtype.type(2 * lam) * g for p in params)

    return Node(np.asarray(lam * total, dtype=dtype), params, back)


# ------------------------------------------------------------ variants

VARIANT_TAGS = ("plain", "iel_heat", "fel_heat", "curve_iel", "grad_penalty", "weight_decay")


@dataclass(frozen=True)
class LossVariant:
    """Which regularizer sits between the logits and the loss."""

    tag: str = "plain"
    diffusion: Optional[DiffusionConfig] = None
    curve: Optional[CurveMotionConfig] = None
    lam: float = 0.0

    def __post_init__(self):
        if self.tag not in VARIANT_TAGS:
            raise ValueError(f"unknown variant {self.tag!r}; expected one of {VARIANT_TAGS}")
        if self.tag in ("iel_heat", "fel_heat") and self.diffusion is None:
            object.__setattr__(self, "diffusion", DiffusionConfig())
        if self.tag == "curve_iel" and self.curve is None:
            object.__setattr__(self, "curve", CurveMotionConfig())
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")

    @classmethod
    def plain(cls):
        return cls("plain")

    @classmethod
    def iel_heat(cls, dt=0.1, n_layers=10):
        return cls("iel_heat", diffusion=DiffusionConfig(dt, n_layers))

    @classmethod
    def fel_heat(cls, dt=0.1, n_layers=10):
        return cls("fel_heat", diffusion=DiffusionConfig(dt, n_layers))

    @classmethod
    def curve_iel(cls, cfg: Union[CurveMotionConfig, None] = None):
        return cls("curve_iel", curve=cfg or CurveMotionConfig())

    @classmethod
    def grad_penalty(cls, lam=1.0):
        return cls("grad_penalty", lam=lam)

    @classmethod
    def weight_decay(cls, lam=0.1):
        return cls("weight_decay", lam=lam)

    def describe(self) -> str:
        if self.tag in ("iel_heat", "fel_heat"):
            return f"{self.tag}(dt={self.diffusion.dt},n={self.diffusion.n_layers})"
        if self.tag == "curve_iel":
            c = self.curve
            return f"curve_iel(dt={c.dt},n={c.n_steps},d={c.dilation},K={list(c.radii)})"
        if self.tag in ("grad_penalty", "weight_decay"):
            return f"{self.tag}(lambda={self.lam})"
        return "plain"
