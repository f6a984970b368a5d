"""
Mini-batch training of the GRU classifier, optionally under a fixed pruning mask
"""
from dataclasses import dataclass, field

import numpy as np

from .gru_service import GruParams, backward_batch, cross_entropy, forward_batch
from ..utils.config_utils import derive_rng
from ..utils.errors import InvariantViolationError, NumericDivergenceError
from ..utils.logging_utils import debug_print


@dataclass
class TrainOptions:
    lr: float = 0.01
    epochs: int = 30
    batch: int = 32
    seed: int = 0
    optimizer: str = "adam"
    clip_norm: float = 5.0
    train_size: int = 1024
    mask: dict = None
    stream: str = "train/shuffle"

    @classmethod
    def from_config(cls, config, **overrides):
        options = cls(lr=config.train.lr, epochs=config.train.epochs, batch=config.train.batch,
                      seed=config.seed, optimizer=config.train.optimizer, clip_norm=config.train.clip_norm,
                      train_size=config.task.train_size)
        for name, value in overrides.items():
            setattr(options, name, value)
        return options


@dataclass
class TrainResult:
    params: GruParams
    loss_curve: list = field(default_factory=list)
    accuracy_curve: list = field(default_factory=list)


class SgdOptimizer:
    """Plain stochastic gradient descent"""

    def __init__(self, lr):
        self.lr = lr

    def tick(self):
        pass

    def step(self, name, value, grad):
        return value - self.lr * grad


class AdamOptimizer:
    """Adam with bias correction; one moment pair per tensor name"""

    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.moments = {}
        self.t = 0

    def tick(self):
        self.t += 1

    def step(self, name, value, grad):
        m, v = self.moments.get(name, (np.zeros_like(value), np.zeros_like(value)))
        m = self.beta1 * m + (1.0 - self.beta1) * grad
        v = self.beta2 * v + (1.0 - self.beta2) * grad * grad
        self.moments[name] = (m, v)
        m_hat = m / (1.0 - self.beta1 ** self.t)
        v_hat = v / (1.0 - self.beta2 ** self.t)
        return value - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def make_optimizer(name, lr):
    if name == "sgd":
        return SgdOptimizer(lr)
    if name == "adam":
        return AdamOptimizer(lr)
    raise InvariantViolationError(f"Unknown optimizer '{name}'", optimizer=name)


def check_mask(params, mask):
    """Masks must be boolean arrays shaped like the tensors they cover"""
    tensors = params.tensors()
    checked = {}
    for name, value in (mask or {}).items():
        if name not in tensors:
            raise InvariantViolationError(f"Mask names unknown tensor '{name}'", tensor=name)
        value = np.asarray(value, dtype=bool)
        if value.shape != tensors[name].shape:
            raise InvariantViolationError(f"Mask for {name} has shape {value.shape}",
                                          tensor=name, expected=list(tensors[name].shape))
        checked[name] = value
    return checked


def apply_mask(params, mask):
    """Zero every masked-out entry in place"""
    for name, keep in mask.items():
        setattr(params, name, np.where(keep, getattr(params, name), 0.0))
    return params


def clip_gradients(grads, clip_norm):
    if not clip_norm or clip_norm <= 0:
        return grads
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.tensors().values()))
    if total > clip_norm:
        scale = clip_norm / total
        return grads.map(lambda name, g: g * scale)
    return grads


def evaluate(params, xs, labels, batch=256):
    """Mean cross-entropy and accuracy over a labelled set"""
    losses, correct = 0.0, 0
    for start in range(0, len(labels), batch):
        logits, _ = forward_batch(params, xs[start:start + batch])
        chunk = labels[start:start + batch]
        losses += cross_entropy(logits, chunk) * len(chunk)
        correct += int(np.sum(np.argmax(logits, axis=1) == chunk))
    return losses / len(labels), correct / len(labels)


class Trainer:
    """Runs epochs of shuffled mini-batch updates.

    penalty, when given, maps (tensor name, current value) to an extra
    gradient term (or None) added after clipping; the ADMM W-update uses it
    for the rho * (W - Z + U) term.
    """

    def __init__(self, options, penalty=None):
        self.options = options
        self.penalty = penalty
        self.rng = derive_rng(options.seed, options.stream)
        self.optimizer = make_optimizer(options.optimizer, options.lr)
        self.epochs_done = 0

    def run(self, params, xs, labels, epochs=None):
        """Train for epochs (default options.epochs); repeated calls continue the same shuffle and optimizer state"""
        options = self.options
        epochs = options.epochs if epochs is None else epochs
        params = params.copy()
        mask = check_mask(params, options.mask)
        result = TrainResult(params=params)
        optimizer = self.optimizer
        count = len(labels)

        for _ in range(max(epochs, 0)):
            epoch = self.epochs_done
            order = self.rng.permutation(count)
            loss_sum, correct = 0.0, 0
            for start in range(0, count, options.batch):
                idx = order[start:start + options.batch]
                batch_xs, batch_labels = xs[idx], labels[idx]
                logits, cache = forward_batch(params, batch_xs)
                loss = cross_entropy(logits, batch_labels)
                if not np.isfinite(loss):
                    raise NumericDivergenceError(f"Loss became non-finite in epoch {epoch}",
                                                 epoch=epoch)
                loss_sum += loss * len(idx)
                correct += int(np.sum(np.argmax(logits, axis=1) == batch_labels))

                grads = clip_gradients(backward_batch(params, batch_xs, batch_labels, logits, cache),
                                       options.clip_norm)
                optimizer.tick()
                grad_tensors = grads.tensors()
                for name, value in params.tensors().items():
                    grad = grad_tensors[name]
                    if self.penalty is not None:
                        extra = self.penalty(name, value)
                        if extra is not None:
                            grad = grad + extra
                    setattr(params, name, optimizer.step(name, value, grad))
                apply_mask(params, mask)

            result.loss_curve.append(loss_sum / count)
            result.accuracy_curve.append(correct / count)
            self.epochs_done += 1
            debug_print(f"epoch {epoch}: loss {result.loss_curve[-1]:.5f} "
                        f"accuracy {result.accuracy_curve[-1]:.4f}")

        return result


def train(params, task, options, data=None):
    """Train on the task's training split; returns (params', per-epoch mean loss)"""
    if data is None:
        xs, labels, _ = task.sample(options.train_size, "train")
    else:
        xs, labels = data
    result = Trainer(options).run(params, xs, labels)
    return result.params, result.loss_curve
