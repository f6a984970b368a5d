"""
GRU classifier: parameters, cell and sequence forward, backpropagation through time

The cell follows the original GRU wiring:

    z  = sigmoid(W_z x + U_z h_prev + b_z)
    r  = sigmoid(W_r x + U_r h_prev + b_r)
    h~ = tanh(W_h x + U_h (r * h_prev) + b_h)
    h  = z * h_prev + (1 - z) * h~

and the classifier reads out logits = readout_W h_T + readout_b, trained
with softmax cross-entropy.
"""
from dataclasses import dataclass

import numpy as np

from ..utils.errors import InvariantViolationError, NumericError

INPUT_MATRICES = ("W_z", "W_r", "W_h")
RECURRENT_MATRICES = ("U_z", "U_r", "U_h")
PRUNABLE_MATRICES = INPUT_MATRICES + RECURRENT_MATRICES
BIASES = ("b_z", "b_r", "b_h")
PARAM_ORDER = PRUNABLE_MATRICES + BIASES + ("readout_W", "readout_b")


@dataclass
class GruParams:
    """All tensors of a single-layer GRU classifier, float64"""

    W_z: np.ndarray
    W_r: np.ndarray
    W_h: np.ndarray
    U_z: np.ndarray
    U_r: np.ndarray
    U_h: np.ndarray
    b_z: np.ndarray
    b_r: np.ndarray
    b_h: np.ndarray
    readout_W: np.ndarray
    readout_b: np.ndarray

    @property
    def input_dim(self):
        return self.W_z.shape[1]

    @property
    def hidden_dim(self):
        return self.W_z.shape[0]

    @property
    def num_classes(self):
        return self.readout_W.shape[0]

    def tensors(self):
        """Tensors keyed by name, in checkpoint order"""
        return {name: getattr(self, name) for name in PARAM_ORDER}

    def copy(self):
        return GruParams(**{name: np.array(value, dtype=np.float64, copy=True)
                            for name, value in self.tensors().items()})

    def map(self, fn):
        """New GruParams with fn applied to every (name, tensor)"""
        return GruParams(**{name: fn(name, value) for name, value in self.tensors().items()})

    def parameter_count(self):
        return sum(value.size for value in self.tensors().values())

    def prunable_count(self):
        return sum(getattr(self, name).size for name in PRUNABLE_MATRICES)

    def expected_shapes(self):
        I, H, C = self.input_dim, self.hidden_dim, self.num_classes
        shapes = {name: (H, I) for name in INPUT_MATRICES}
        shapes.update({name: (H, H) for name in RECURRENT_MATRICES})
        shapes.update({name: (H,) for name in BIASES})
        shapes.update({"readout_W": (C, H), "readout_b": (C,)})
        return shapes

    def validate(self):
        """Raise unless every tensor conforms and is finite"""
        for name, shape in self.expected_shapes().items():
            value = getattr(self, name)
            if value.shape != shape:
                raise InvariantViolationError(f"{name} has shape {value.shape}, expected {shape}",
                                              tensor=name, shape=list(value.shape), expected=list(shape))
            if not np.all(np.isfinite(value)):
                raise NumericError(f"{name} contains non-finite values", tensor=name)
        return self

    @classmethod
    def zeros(cls, input_dim, hidden_dim, num_classes):
        I, H, C = input_dim, hidden_dim, num_classes
        params = {name: np.zeros((H, I)) for name in INPUT_MATRICES}
        params.update({name: np.zeros((H, H)) for name in RECURRENT_MATRICES})
        params.update({name: np.zeros(H) for name in BIASES})
        params.update({"readout_W": np.zeros((C, H)), "readout_b": np.zeros(C)})
        return cls(**params)

    @classmethod
    def initialize(cls, input_dim, hidden_dim, num_classes, rng):
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases"""
        params = cls.zeros(input_dim, hidden_dim, num_classes)
        for name in PARAM_ORDER:
            value = getattr(params, name)
            if value.ndim == 2:
                bound = 1.0 / np.sqrt(value.shape[1])
                setattr(params, name, rng.uniform(-bound, bound, size=value.shape))
        return params


@dataclass
class GruState:
    z: np.ndarray
    r: np.ndarray
    h_tilde: np.ndarray
    h: np.ndarray


def sigmoid(a):
    return np.exp(-np.logaddexp(0.0, -a))


def accumulate_rows(products):
    """Sum each row left to right.

    Sequential accumulation keeps every row's result independent of how
    many rows are evaluated together, which the sparse executor relies on.
    """
    if products.shape[-1] == 0:
        return np.zeros(products.shape[:-1])
    return np.cumsum(products, axis=-1)[..., -1]


def dense_matvec(W, x):
    """W @ x with ascending-column accumulation per row"""
    return accumulate_rows(W * x[np.newaxis, :])


def _check_vector(name, value, length):
    value = np.asarray(value, dtype=np.float64)
    if value.shape != (length,):
        raise InvariantViolationError(f"{name} has shape {value.shape}, expected ({length},)",
                                      tensor=name, shape=list(value.shape))
    if not np.all(np.isfinite(value)):
        raise NumericError(f"{name} contains non-finite values", tensor=name)
    return value


def gru_step(x_t, h_prev, matvec, b_z, b_r, b_h):
    """One GRU step with the six weight products supplied by matvec(name, vector)"""
    z = sigmoid(matvec("W_z", x_t) + matvec("U_z", h_prev) + b_z)
    r = sigmoid(matvec("W_r", x_t) + matvec("U_r", h_prev) + b_r)
    h_tilde = np.tanh(matvec("W_h", x_t) + matvec("U_h", r * h_prev) + b_h)
    h = z * h_prev + (1.0 - z) * h_tilde
    return GruState(z=z, r=r, h_tilde=h_tilde, h=h)


def _dense_products(params):
    return lambda name, vector: dense_matvec(getattr(params, name), vector)


def gru_cell_forward(params, x_t, h_prev):
    """Single GRU step on dense weights"""
    params.validate()
    x_t = _check_vector("x_t", x_t, params.input_dim)
    h_prev = _check_vector("h_prev", h_prev, params.hidden_dim)
    return gru_step(x_t, h_prev, _dense_products(params), params.b_z, params.b_r, params.b_h)


def check_sequence(xs, input_dim):
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim != 2 or xs.shape[0] < 1 or xs.shape[1] != input_dim:
        raise InvariantViolationError(f"Sequence must be a non-empty T x {input_dim} matrix",
                                      shape=list(xs.shape))
    if not np.all(np.isfinite(xs)):
        raise NumericError("Sequence contains non-finite values")
    return xs


def gru_forward_sequence(params, xs, h0):
    """Unroll the cell over xs and read out logits from the last state"""
    params.validate()
    xs = check_sequence(xs, params.input_dim)
    h = _check_vector("h0", h0, params.hidden_dim)

    matvec = _dense_products(params)
    states = []
    for x_t in xs:
        state = gru_step(x_t, h, matvec, params.b_z, params.b_r, params.b_h)
        states.append(state)
        h = state.h
    logits = dense_matvec(params.readout_W, h) + params.readout_b
    return states, logits


def softmax(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(logits, labels):
    """Mean softmax cross-entropy over a batch"""
    shifted = logits - logits.max(axis=-1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=-1))
    picked = shifted[np.arange(len(labels)), labels]
    return float(np.mean(log_norm - picked))


def forward_batch(params, xs, h0=None):
    """Batched forward over xs (B x T x I); returns logits and the cache for BPTT"""
    B, T, _ = xs.shape
    h = np.zeros((B, params.hidden_dim)) if h0 is None else np.array(h0, dtype=np.float64)
    cache = {"h": [h], "z": [], "r": [], "h_tilde": []}
    for t in range(T):
        x_t = xs[:, t, :]
        z = sigmoid(x_t @ params.W_z.T + h @ params.U_z.T + params.b_z)
        r = sigmoid(x_t @ params.W_r.T + h @ params.U_r.T + params.b_r)
        h_tilde = np.tanh(x_t @ params.W_h.T + (r * h) @ params.U_h.T + params.b_h)
        h = z * h + (1.0 - z) * h_tilde
        cache["z"].append(z)
        cache["r"].append(r)
        cache["h_tilde"].append(h_tilde)
        cache["h"].append(h)
    logits = h @ params.readout_W.T + params.readout_b
    return logits, cache


def backward_batch(params, xs, labels, logits, cache):
    """Gradients of the mean cross-entropy with respect to every tensor"""
    B, T, _ = xs.shape
    grads = GruParams.zeros(params.input_dim, params.hidden_dim, params.num_classes)

    d_logits = softmax(logits)
    d_logits[np.arange(B), labels] -= 1.0
    d_logits /= B

    h_last = cache["h"][T]
    grads.readout_W = d_logits.T @ h_last
    grads.readout_b = d_logits.sum(axis=0)
    dh = d_logits @ params.readout_W

    for t in reversed(range(T)):
        x_t = xs[:, t, :]
        h_prev = cache["h"][t]
        z, r, h_tilde = cache["z"][t], cache["r"][t], cache["h_tilde"][t]

        dz = dh * (h_prev - h_tilde)
        d_h_tilde = dh * (1.0 - z)
        dh_prev = dh * z

        da_h = d_h_tilde * (1.0 - h_tilde ** 2)
        grads.W_h += da_h.T @ x_t
        grads.U_h += da_h.T @ (r * h_prev)
        grads.b_h += da_h.sum(axis=0)
        d_rh = da_h @ params.U_h
        dr = d_rh * h_prev
        dh_prev += d_rh * r

        da_r = dr * r * (1.0 - r)
        grads.W_r += da_r.T @ x_t
        grads.U_r += da_r.T @ h_prev
        grads.b_r += da_r.sum(axis=0)
        dh_prev += da_r @ params.U_r

        da_z = dz * z * (1.0 - z)
        grads.W_z += da_z.T @ x_t
        grads.U_z += da_z.T @ h_prev
        grads.b_z += da_z.sum(axis=0)
        dh_prev += da_z @ params.U_z

        dh = dh_prev

    return grads


def sequence_loss(params, xs, h0, label):
    """Cross-entropy of one labelled sequence"""
    logits, _ = forward_batch(params, np.asarray(xs, dtype=np.float64)[np.newaxis], np.asarray(h0)[np.newaxis])
    return cross_entropy(logits, np.array([label]))


def gru_backward(params, xs, h0, label):
    """Backpropagation through time for one labelled sequence"""
    params.validate()
    xs = check_sequence(xs, params.input_dim)
    h0 = _check_vector("h0", h0, params.hidden_dim)
    if not 0 <= int(label) < params.num_classes:
        raise InvariantViolationError(f"label {label} outside [0, {params.num_classes})", label=int(label))

    batch_xs = xs[np.newaxis]
    labels = np.array([int(label)])
    logits, cache = forward_batch(params, batch_xs, h0[np.newaxis])
    return backward_batch(params, batch_xs, labels, logits, cache)
