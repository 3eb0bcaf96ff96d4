"""Reference ANN training: optimizers, LR schedule, the training loop."""

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import InvalidArgumentError, NumericalError, TrainingDivergedError
from .model import AnnModel, forward_trace, ann_backward, init_model

EVAL_BATCH = 64


@dataclass
class TrainConfig:
    optimizer: str = "adam"          # "adam" | "sgd-momentum"
    learning_rate: float = 1e-3
    epochs: int = 10
    batch_size: int = 32
    seed: int = 0
    lr_decay_epochs: tuple = (0.5, 0.7)   # fractions of total epochs
    lr_decay_factor: float = 0.1          # multiplier applied at each decay point
    momentum: float = 0.9                 # sgd-momentum only
    augment_hflip: bool = False

    def validate(self):
        if self.learning_rate <= 0:
            raise InvalidArgumentError("learning_rate must be > 0")
        if self.epochs < 1:
            raise InvalidArgumentError("epochs must be >= 1")
        if not 0 < self.lr_decay_factor <= 1:
            raise InvalidArgumentError("lr_decay_factor must be in (0, 1]")
        if self.batch_size < 1:
            raise InvalidArgumentError("batch_size must be >= 1")
        if self.optimizer not in ("adam", "sgd-momentum"):
            raise InvalidArgumentError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class EpochRecord:
    epoch: int
    mean_loss: float
    train_accuracy: float
    test_accuracy: float | None


@dataclass
class TrainResult:
    model: AnnModel
    history: list = field(default_factory=list)


class Adam:
    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0

    def step(self, params, grads, lr):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for i, (p, g) in enumerate(zip(params, grads)):
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * g * g
            mhat = self.m[i] / (1 - b1 ** self.t)
            vhat = self.v[i] / (1 - b2 ** self.t)
            p -= lr * mhat / (np.sqrt(vhat) + self.eps)


class MomentumSgd:
    def __init__(self, params, momentum=0.9):
        self.vel = [np.zeros_like(p) for p in params]
        self.momentum = momentum

    def step(self, params, grads, lr):
        for i, (p, g) in enumerate(zip(params, grads)):
            self.vel[i] = self.momentum * self.vel[i] - lr * g
            p += self.vel[i]


def make_optimizer(cfg: TrainConfig, params):
    if cfg.optimizer == "adam":
        return Adam(params)
    return MomentumSgd(params, cfg.momentum)


def lr_at_epoch(cfg, epoch):
    """Step decay: multiply by the factor at each configured fraction."""
    lr = cfg.learning_rate
    for frac in cfg.lr_decay_epochs:
        if epoch >= int(frac * cfg.epochs):
            lr *= cfg.lr_decay_factor
    return lr


def flat_params(model: AnnModel):
    """Weight and bias arrays of every parametric layer, in layer order."""
    out = []
    for i in model.parametric_indices():
        out.append(model.weights[i][0])
        out.append(model.weights[i][1])
    return out


def grads_to_flat(model: AnnModel, grads):
    out = []
    for i in model.parametric_indices():
        out.append(grads[i].d_weight)
        out.append(grads[i].d_bias)
    return out


def evaluate_ann(model: AnnModel, images: np.ndarray, labels: np.ndarray) -> float:
    """Classification accuracy, evaluated in memory-bounded chunks."""
    hits = 0
    for i in range(0, len(images), EVAL_BATCH):
        logits, _, _ = forward_trace(model, images[i:i + EVAL_BATCH])
        hits += int((logits.argmax(1) == labels[i:i + EVAL_BATCH]).sum())
    return hits / len(images)


def one_hot(labels: np.ndarray, class_count: int) -> np.ndarray:
    if labels.min() < 0 or labels.max() >= class_count:
        raise InvalidArgumentError(
            f"labels must lie in [0, {class_count}), got "
            f"{labels.min()}..{labels.max()}"
        )
    return np.eye(class_count)[labels]


def train_ann(train_images, train_labels, arch, cfg: TrainConfig,
              test_images=None, test_labels=None,
              input_shape=None) -> TrainResult:
    """Train the reference CNN from scratch; reproducible given cfg.seed.

    arch is a layer-descriptor list (see model.default_arch).  Dropout is
    active only here; evaluation always runs mask-free.
    """
    cfg.validate()
    if len(train_images) == 0:
        raise InvalidArgumentError("training set is empty")
    if input_shape is None:
        input_shape = train_images.shape[1:]
    rng = np.random.default_rng(cfg.seed)
    model = init_model(arch, input_shape, rng)
    targets_all = one_hot(train_labels, model.class_count)
    params = flat_params(model)
    opt = make_optimizer(cfg, params)
    history = []
    for epoch in range(cfg.epochs):
        lr = lr_at_epoch(cfg, epoch)
        order = rng.permutation(len(train_images))
        losses = []
        for i in range(0, len(order), cfg.batch_size):
            idx = order[i:i + cfg.batch_size]
            batch = train_images[idx]
            if cfg.augment_hflip:
                flip = rng.random(len(idx)) < 0.5
                batch = batch.copy()
                batch[flip] = batch[flip][:, :, :, ::-1]
            try:
                logits, trace, _ = forward_trace(model, batch,
                                                 train_mode=True, rng=rng)
                loss, dz = kernels.softmax_ce(logits, targets_all[idx])
            except NumericalError as e:
                raise TrainingDivergedError(epoch, str(e)) from e
            if not np.isfinite(loss):
                raise TrainingDivergedError(epoch)
            losses.append(loss)
            grads, _ = ann_backward(model, trace, dz)
            opt.step(params, grads_to_flat(model, grads), lr)
        train_acc = evaluate_ann(model, train_images, train_labels)
        test_acc = (evaluate_ann(model, test_images, test_labels)
                    if test_images is not None else None)
        history.append(EpochRecord(epoch, float(np.mean(losses)),
                                   train_acc, test_acc))
    return TrainResult(model, history)
