"""Depth-2 U-Net used by every desk-scale experiment.

Architecture (all convs 3x3, replicate padding, ReLU after each except head)::

    enc1: in -> 8 -> 8            (H x W)
    enc2: 8 -> 16 -> 16           (H/2)
    bott: 16 -> 32 -> 32          (H/4)
    dec2: (32 up + 16) -> 16 -> 16 (H/2)
    dec1: (16 up + 8) -> 8 -> 8    (H)
    head: 8 -> classes            (only the kernel centre is nonzero at init)
"""
import numpy as np

from ielseg import autodiff as ad
from ielseg.autodiff import LossVariant, Node
from ielseg.field import Field


def layer_table(in_channels=3, classes=2):
    """(name, in, out) per conv, in checkpoint order."""
    return [
        ("enc1a", in_channels, 8), ("enc1b", 8, 8),
        ("enc2a", 8, 16), ("enc2b", 16, 16),
        ("botta", 16, 32), ("bottb", 32, 32),
        ("dec2a", 32 + 16, 16), ("dec2b", 16, 16),
        ("dec1a", 16 + 8, 8), ("dec1b", 8, 8),
        ("head", 8, classes),
    ]


def param_names(in_channels=3, classes=2):
    names = []
    for name, _, _ in layer_table(in_channels, classes):
        names += [f"{name}.w", f"{name}.b"]
    return names


class ModelParams:
    """Ordered mapping of parameter name to float array."""

    def __init__(self, arrays, in_channels=3, classes=2):
        self.in_channels = in_channels
        self.classes = classes
        expected = param_names(in_channels, classes)
        if list(arrays) != expected:
            raise ValueError(f"parameter names/order mismatch: {list(arrays)}")
        self.arrays = dict(arrays)
        for name, cin, cout in layer_table(in_channels, classes):
            if self.arrays[f"{name}.w"].shape != (cout, cin, 3, 3) or self.arrays[f"{name}.b"].shape != (cout,):
                raise ValueError(f"bad shape for layer {name}")

    def __getitem__(self, name):
        return self.arrays[name]

    def __iter__(self):
        return iter(self.arrays)

    def items(self):
        return self.arrays.items()

    def copy(self):
        return ModelParams({k: v.copy() for k, v in self.arrays.items()}, self.in_channels, self.classes)

    def astype(self, dtype):
        return ModelParams({k: v.astype(dtype) for k, v in self.arrays.items()}, self.in_channels, self.classes)

    def count(self) -> int:
        return sum(v.size for v in self.arrays.values())

    def all_finite(self) -> bool:
        return all(np.isfinite(v).all() for v in self.arrays.values())

    def equal(self, other) -> bool:
        return list(self.arrays) == list(other.arrays) and all(
            np.array_equal(self.arrays[k], other.arrays[k]) for k in self.arrays
        )

    def nodes(self, requires_grad=True):
        return {k: ad.tensor(v, requires_grad=requires_grad) for k, v in self.arrays.items()}


def init_bound(name, cin, cout):
    if name == "head":
        return np.sqrt(6.0 / (cin + cout))
    return np.sqrt(6.0 / (9 * cin + 9 * cout))


def init_params(seed: int, classes: int = 2, in_channels: int = 3) -> ModelParams:
    """Glorot-uniform kernels, zero biases; deterministic per seed."""
    if classes < 2:
        raise ValueError("classes must be >= 2")
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, cin, cout in layer_table(in_channels, classes):
        a = init_bound(name, cin, cout)
        if name == "head":
            w = np.zeros((cout, cin, 3, 3), dtype=np.float32)
            w[:, :, 1, 1] = rng.uniform(-a, a, size=(cout, cin))
        else:
            w = rng.uniform(-a, a, size=(cout, cin, 3, 3)).astype(np.float32)
        arrays[f"{name}.w"] = w
        arrays[f"{name}.b"] = np.zeros(cout, dtype=np.float32)
    return ModelParams(arrays, in_channels, classes)


def _as_batch(image):
    if isinstance(image, Field):
        return image.values[None]
    x = np.asarray(image)
    if x.ndim == 3:
        x = x[None]
    return x


def network(p, x: Node) -> Node:
    """Raw logits from parameter nodes ``p`` (name -> Node)."""
    def conv(name, t, relu=True):
        t = ad.op_conv3x3(t, p[f"{name}.w"], p[f"{name}.b"])
        return ad.op_relu(t) if relu else t

    e1 = conv("enc1b", conv("enc1a", x))
    e2 = conv("enc2b", conv("enc2a", ad.op_maxpool2(e1)))
    b = conv("bottb", conv("botta", ad.op_maxpool2(e2)))
    d2 = conv("dec2b", conv("dec2a", ad.op_concat_channels(ad.op_upsample_nearest2(b), e2)))
    d1 = conv("dec1b", conv("dec1a", ad.op_concat_channels(ad.op_upsample_nearest2(d2), e1)))
    return conv("head", d1, relu=False)


def apply_variant(logits: Node, mode: str, variant: LossVariant, classes: int) -> Node:
    """Append the variant's evolution layers. IEL variants only act in training;
    forward layers stay on in both modes."""
    if variant.tag == "fel_heat":
        return ad.op_fel_heat(logits, variant.diffusion)
    if mode != "train":
        return logits
    if variant.tag == "iel_heat":
        return ad.op_iel_heat(logits, variant.diffusion)
    if variant.tag == "curve_iel":
        return ad.op_curve_iel(logits, variant.curve, channel=classes - 1, reference=0)
    return logits


def forward(params, image, mode="eval", variant: LossVariant = None, param_nodes=None) -> Node:
    """Logits for ``image`` ((3, H, W) Field, or (B, 3, H, W) / (3, H, W) array).

    ``param_nodes`` lets callers supply their own leaf nodes to collect gradients.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    variant = variant or LossVariant.plain()
    x = _as_batch(image)
    if x.shape[2] % 4 or x.shape[3] % 4:
        raise ValueError(f"spatial dims must be divisible by 4, got {x.shape[2]}x{x.shape[3]}")
    if x.shape[1] != params.in_channels:
        raise ValueError(f"expected {params.in_channels} input channels, got {x.shape[1]}")
    dtype = params["enc1a.w"].dtype
    nodes = param_nodes if param_nodes is not None else params.nodes(requires_grad=False)
    logits = network(nodes, ad.tensor(x.astype(dtype, copy=False)))
    return apply_variant(logits, mode, variant, params.classes)
