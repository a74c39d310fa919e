"""Deterministic SGD training and evaluation."""
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from ielseg import autodiff as ad
from ielseg.autodiff import LossVariant
from ielseg.data import Dataset, postprocess_predictions
from ielseg.field import Field, LabelMask
from ielseg.metrics import MetricsRecord, summarize
from ielseg.model import ModelParams, forward, init_params

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class DataSpec:
    n_train: int = 200
    n_val: int = 50
    size: int = 64
    classes: int = 2
    seed: int = 7
    window: int = 3
    fraction: float = 0.2


@dataclass(frozen=True)
class ExperimentConfig:
    epochs: int = 30
    lr: float = 0.05
    batch: int = 4
    seed: int = 7
    variant: LossVariant = field(default_factory=LossVariant)
    data: DataSpec = field(default_factory=DataSpec)
    # evaluate the training split every epoch instead of only after the last
    track_train: bool = False

    def __post_init__(self):
        if not self.lr >= 0:
            raise ValueError("lr must be >= 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")

    @property
    def diffusion(self):
        return self.variant.diffusion

    @property
    def curve(self):
        return self.variant.curve

    def resolved(self) -> dict:
        d = asdict(self)
        d["variant"] = {k: v for k, v in asdict(self.variant).items() if v is not None}
        return d


def predict_logits(params: ModelParams, images: np.ndarray, variant: LossVariant = None, chunk: int = 25) -> np.ndarray:
    """Eval-mode logits for a (N, C, H, W) image stack."""
    outs = [forward(params, images[i:i + chunk], "eval", variant).value for i in range(0, len(images), chunk)]
    return np.concatenate(outs)


def evaluate(params: ModelParams, data: Dataset, variant: LossVariant = None, postprocess=None, loss=0.0) -> MetricsRecord:
    """Eval-mode metrics against the clean masks of ``data``.

    ``postprocess=(n, dt)`` smooths logits with forward heat steps before the argmax.
    The noise rate is filled in when ``data`` carries noisy masks.
    """
    if len(data) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    logits = predict_logits(params, data.image_batch(), variant)
    if postprocess is not None:
        n, dt = postprocess
        preds = [postprocess_predictions(Field(l), n, dt) for l in logits]
    else:
        preds = [LabelMask(np.argmax(l, axis=0), data.classes) for l in logits]
    return summarize(preds, data.clean_masks, data.classes, data.noisy_masks, loss)


def batch_loss(params: ModelParams, nodes, images, targets, variant: LossVariant):
    logits = forward(params, images, "train", variant, nodes)
    loss = ad.softmax_cross_entropy(logits, targets)
    if variant.tag == "grad_penalty":
        loss = ad.op_add(loss, ad.grad_penalty_term(logits, variant.lam))
    elif variant.tag == "weight_decay":
        loss = ad.op_add(loss, ad.weight_decay_term(nodes.values(), variant.lam))
    return loss


def dataset_loss(params, data: Dataset, variant: LossVariant, chunk: int = 25) -> float:
    """Mean training-mode loss over ``data`` against its training targets."""
    x = data.image_batch()
    y = data.mask_batch(data.targets)
    total = 0.0
    for i in range(0, len(data), chunk):
        nodes = params.nodes(requires_grad=False)
        total += float(batch_loss(params, nodes, x[i:i + chunk], y[i:i + chunk], variant).value) * len(x[i:i + chunk])
    return total / len(data)


def _row(epoch, split, variant, rec: MetricsRecord):
    return {
        "epoch": epoch, "split": split, "variant": variant.tag,
        "dice": rec.mean_dice, "miou": rec.miou, "noise_rate": rec.noise_rate, "loss": rec.loss,
    }


def train(cfg: ExperimentConfig, train_set: Dataset, val_set: Optional[Dataset] = None, params: Optional[ModelParams] = None):
    """Plain minibatch SGD on the training targets (noisy masks when present).

    Returns ``(params, history)`` where history is a list of CSV-ready rows:
    one ``val`` row per epoch (epoch 0 is the initialisation) and ``train``
    rows after the last epoch, or every epoch with ``cfg.track_train``.
    """
    variant = cfg.variant
    if params is None:
        params = init_params(cfg.seed, train_set.classes, train_set.images[0].channels)
    else:
        params = params.copy()
    x = train_set.image_batch()
    y = train_set.mask_batch(train_set.targets)
    n = len(train_set)
    rng = np.random.default_rng([cfg.seed, 0x5EED])
    history = []

    def record(epoch, loss, final=False):
        if val_set is not None and len(val_set):
            history.append(_row(epoch, "val", variant, evaluate(params, val_set, variant, loss=loss)))
        if final or cfg.track_train:
            history.append(_row(epoch, "train", variant, evaluate(params, train_set, variant, loss=loss)))

    record(0, dataset_loss(params, train_set, variant))
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch):
            idx = np.sort(order[start:start + cfg.batch])
            nodes = params.nodes(requires_grad=True)
            loss = batch_loss(params, nodes, x[idx], y[idx], variant)
            value = float(loss.value)
            if not math.isfinite(value):
                raise TrainingDiverged(f"non-finite loss {value} at epoch {epoch}, batch starting {start}")
            ad.backward(loss)
            lr = params["enc1a.w"].dtype.type(cfg.lr)
            for k, node in nodes.items():
                params.arrays[k] = params.arrays[k] - lr * node.grad
            total += value * len(idx)
        if not params.all_finite():
            raise TrainingDiverged(f"non-finite parameters after epoch {epoch}")
        mean_loss = total / n
        log.info("epoch %d %s loss %.5f", epoch, variant.describe(), mean_loss)
        record(epoch, mean_loss, final=epoch == cfg.epochs)
    return params, history
