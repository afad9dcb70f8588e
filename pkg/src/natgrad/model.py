"""Layer-wise feed-forward network engine.

The engine exposes exactly what the curvature machinery needs: per-layer
forward inputs and backpropagated per-sample errors. Biases are folded in
as a constant-1 input column, so cached inputs (and therefore activation
second moments) cover every parameter of a layer.

Gradient convention: errors e_i hold the per-sample derivative of the
per-sample loss with respect to the layer's pre-activation, so the
gradient of the mean loss for layer i is errors_i^T @ inputs_i / m.
"""

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatchError, StaleCacheError

ACTIVATIONS = ("tanh", "relu", "identity")
HEADS = ("gaussian", "categorical")

_batch_tags = itertools.count()


@dataclass
class Layer:
    weight: np.ndarray  # (out, in) with the bias column folded in when bias is set
    activation: str
    bias: bool = True

    @property
    def out_dim(self):
        return self.weight.shape[0]

    @property
    def in_dim(self):
        return self.weight.shape[1] - (1 if self.bias else 0)


@dataclass
class Network:
    layers: list
    head: str = "gaussian"

    @property
    def input_dim(self):
        return self.layers[0].in_dim

    @property
    def output_dim(self):
        return self.layers[-1].out_dim

    @property
    def n_layers(self):
        return len(self.layers)

    def parameter_count(self):
        return sum(layer.weight.size for layer in self.layers)

    def flat_weights(self):
        return np.concatenate([layer.weight.ravel() for layer in self.layers])

    def set_flat_weights(self, vec):
        vec = np.asarray(vec, dtype=np.float64)
        if vec.size != self.parameter_count():
            raise DimensionMismatchError(
                f"expected {self.parameter_count()} parameters, got {vec.size}"
            )
        offset = 0
        for layer in self.layers:
            n = layer.weight.size
            layer.weight = vec[offset: offset + n].reshape(layer.weight.shape).copy()
            offset += n

    def copy(self):
        return Network(
            [Layer(l.weight.copy(), l.activation, l.bias) for l in self.layers],
            self.head,
        )


def init_network(dims, head="gaussian", activations=None, bias=True, rng=None):
    """Random network with dims = [d_in, hidden..., d_out].

    Hidden layers default to tanh, the last layer to identity; weights
    are N(0, 1/fan_in) scaled.
    """
    if head not in HEADS:
        raise ValueError(f"head must be one of {HEADS}")
    if rng is None:
        rng = np.random.default_rng(0)
    n_layers = len(dims) - 1
    if activations is None:
        activations = ["tanh"] * (n_layers - 1) + ["identity"]
    layers = []
    for i in range(n_layers):
        if activations[i] not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activations[i]!r}")
        fan_in = dims[i] + (1 if bias else 0)
        w = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(dims[i + 1], fan_in))
        layers.append(Layer(w, activations[i], bias))
    return Network(layers, head)


@dataclass
class Prediction:
    outputs: np.ndarray  # (m, d_o); probabilities for the categorical head
    head: str
    tag: int = 0


@dataclass
class LayerCache:
    inputs: list  # per layer, (m, in[+1]) including the bias column
    activations: list  # per layer, (m, out) post-activation
    batch_size: int
    tag: int = 0
    errors: list = field(default=None)  # per layer, (m, out); set by backward


def _activate(z, kind):
    if kind == "tanh":
        return np.tanh(z)
    if kind == "relu":
        return np.maximum(z, 0.0)
    return z


def _activation_derivative(a, kind):
    """Derivative of the activation expressed through its own output."""
    if kind == "tanh":
        return 1.0 - a * a
    if kind == "relu":
        return (a > 0.0).astype(np.float64)
    return np.ones_like(a)


def _augment(x, bias):
    if not bias:
        return x
    return np.concatenate([x, np.ones((x.shape[0], 1))], axis=1)


def softmax(z):
    shifted = z - np.max(z, axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=1, keepdims=True)


def forward(net, x):
    """Run the batch through the network, caching every layer input."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != net.input_dim:
        raise DimensionMismatchError(
            f"input has {x.shape[1]} features, network expects {net.input_dim}"
        )
    tag = next(_batch_tags)
    inputs, activations = [], []
    a = x
    for layer in net.layers:
        x_aug = _augment(a, layer.bias)
        inputs.append(x_aug)
        a = _activate(x_aug @ layer.weight.T, layer.activation)
        activations.append(a)
    outputs = softmax(a) if net.head == "categorical" else a
    cache = LayerCache(inputs, activations, x.shape[0], tag)
    return Prediction(outputs, net.head, tag), cache


def one_hot(targets, n_classes):
    targets = np.asarray(targets)
    if targets.ndim == 2:
        if targets.shape[1] != n_classes:
            raise DimensionMismatchError(
                f"one-hot targets have {targets.shape[1]} columns, expected {n_classes}"
            )
        return targets.astype(np.float64)
    idx = targets.astype(int)
    if idx.size and (idx.min() < 0 or idx.max() >= n_classes):
        raise DimensionMismatchError("class index out of range")
    out = np.zeros((idx.shape[0], n_classes))
    out[np.arange(idx.shape[0]), idx] = 1.0
    return out


def loss(pred, y, head=None):
    """Mean negative log-likelihood of the batch.

    Gaussian head (unit noise): mean of 0.5 ||y_hat - y||^2 per sample.
    Categorical head: cross-entropy against one-hot or index targets.
    """
    head = head or pred.head
    m, d_o = pred.outputs.shape
    if head == "gaussian":
        y = np.atleast_2d(np.asarray(y, dtype=np.float64))
        if y.shape != pred.outputs.shape:
            raise DimensionMismatchError(
                f"targets {y.shape} do not match predictions {pred.outputs.shape}"
            )
        diff = pred.outputs - y
        # overflow to inf is the honest answer for diverged weights
        with np.errstate(over="ignore"):
            return float(0.5 * np.sum(diff * diff) / m)
    hot = one_hot(y, d_o)
    if hot.shape[0] != m:
        raise DimensionMismatchError("target batch size mismatch")
    picked = np.sum(pred.outputs * hot, axis=1)
    # a zero probability makes the NLL honestly infinite; the divergence
    # policy upstream turns that into an abort
    with np.errstate(divide="ignore"):
        return float(-np.mean(np.log(picked)))


def _output_delta(pred, targets):
    """Per-sample derivative of the per-sample NLL w.r.t. the final activation."""
    if pred.head == "gaussian":
        y = np.atleast_2d(np.asarray(targets, dtype=np.float64))
        if y.shape != pred.outputs.shape:
            raise DimensionMismatchError(
                f"targets {y.shape} do not match predictions {pred.outputs.shape}"
            )
        return pred.outputs - y
    return pred.outputs - one_hot(targets, pred.outputs.shape[1])


def _backprop(net, cache, delta):
    """Propagate per-sample output deltas down the stack.

    delta is d(objective_b)/d(final activation) per sample; returns
    (per-layer gradients of the batch-mean objective, per-layer errors).
    """
    m = cache.batch_size
    grads = [None] * net.n_layers
    errors = [None] * net.n_layers
    for i in range(net.n_layers - 1, -1, -1):
        layer = net.layers[i]
        e = delta * _activation_derivative(cache.activations[i], layer.activation)
        errors[i] = e
        grads[i] = e.T @ cache.inputs[i] / m
        if i > 0:
            delta = (e @ layer.weight)[:, : layer.in_dim]
    return grads, errors


def backward(net, cache, pred, targets):
    """Backpropagate the batch, returning gradients and a completed cache.

    Gradients equal errors_i^T @ inputs_i / m per layer. The returned
    cache shares the forward inputs and carries the per-sample errors.
    """
    if cache.tag != pred.tag:
        raise StaleCacheError("cache and prediction come from different forward passes")
    targets_rows = np.asarray(targets).shape[0]
    if targets_rows != cache.batch_size:
        raise StaleCacheError(
            f"backward batch of {targets_rows} does not match forward batch "
            f"of {cache.batch_size}"
        )
    grads, errors = _backprop(net, cache, _output_delta(pred, targets))
    done = LayerCache(cache.inputs, cache.activations, cache.batch_size, cache.tag, errors)
    return grads, done


def sample_outputs(pred, head=None, rng=None):
    """Draw outputs from the model's predictive distribution.

    Gaussian head adds unit-variance noise; categorical head samples one
    class per row and returns it one-hot so it can feed backward directly.
    """
    head = head or pred.head
    if rng is None:
        rng = np.random.default_rng(0)
    if head == "gaussian":
        return pred.outputs + rng.standard_normal(pred.outputs.shape)
    m, d_o = pred.outputs.shape
    u = rng.random((m, 1))
    cum = np.cumsum(pred.outputs, axis=1)
    idx = np.minimum(np.sum(u > cum, axis=1), d_o - 1)
    return one_hot(idx, d_o)


def output_jacobian(net, pred, cache):
    """Per-sample Jacobian of the head outputs w.r.t. all parameters.

    Returns a (batch * d_o, n) matrix, rows ordered sample-major. For the
    categorical head the outputs are the predicted probabilities, so each
    seed row carries the softmax Jacobian p_j (e_j - p).
    """
    if cache.tag != pred.tag:
        raise StaleCacheError("cache and prediction come from different forward passes")
    m, d_o = pred.outputs.shape
    n = net.parameter_count()
    jac = np.empty((m * d_o, n))
    eye = np.eye(d_o)
    for j in range(d_o):
        if pred.head == "categorical":
            p = pred.outputs
            delta = p[:, j: j + 1] * (eye[j][None, :] - p)
        else:
            delta = np.broadcast_to(eye[j], (m, d_o)).copy()
        _, errors = _backprop(net, cache, delta)
        rows = np.concatenate(
            [
                (errors[i][:, :, None] * cache.inputs[i][:, None, :]).reshape(m, -1)
                for i in range(net.n_layers)
            ],
            axis=1,
        )
        jac[j::d_o] = rows
    return jac


def flatten_grads(grads):
    return np.concatenate([g.ravel() for g in grads])


def unflatten_like(vec, net):
    out = []
    offset = 0
    for layer in net.layers:
        n = layer.weight.size
        out.append(vec[offset: offset + n].reshape(layer.weight.shape))
        offset += n
    return out


def grad_norm_penalty_grad(net, x, y, rho, epsilon=1e-5):
    """Gradient of the half squared gradient norm, scaled by rho.

    Computes rho * H g through a central-difference Hessian-vector
    product along the normalized gradient: with ghat = g/||g|| and
    eps = epsilon * (1 + ||theta||),
    H g = (grad(theta + eps ghat) - grad(theta - eps ghat)) / (2 eps) * ||g||.
    A zero gradient makes the penalty stationary, so zeros come back.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if rho < 0:
        raise ValueError("rho must be nonnegative")
    pred, cache = forward(net, x)
    grads, _ = backward(net, cache, pred, y)
    g = flatten_grads(grads)
    g_norm = float(np.sqrt(g @ g))
    if rho == 0.0 or g_norm == 0.0:
        return [np.zeros_like(layer.weight) for layer in net.layers]
    theta = net.flat_weights()
    eps = epsilon * (1.0 + float(np.sqrt(theta @ theta)))
    ghat = g / g_norm
    try:
        net.set_flat_weights(theta + eps * ghat)
        pred_p, cache_p = forward(net, x)
        g_plus = flatten_grads(backward(net, cache_p, pred_p, y)[0])
        net.set_flat_weights(theta - eps * ghat)
        pred_m, cache_m = forward(net, x)
        g_minus = flatten_grads(backward(net, cache_m, pred_m, y)[0])
    finally:
        net.set_flat_weights(theta)
    hvp = (g_plus - g_minus) / (2.0 * eps) * g_norm
    return unflatten_like(rho * hvp, net)


def save_network(net, path):
    """Flat text dump: dims, activation names, row-major weights."""
    lines = ["network 1", f"head {net.head}", f"layers {net.n_layers}"]
    for i, layer in enumerate(net.layers):
        lines.append(
            f"layer {i} out {layer.out_dim} in {layer.in_dim} "
            f"activation {layer.activation} bias {int(layer.bias)}"
        )
        for row in layer.weight:
            lines.append(" ".join(f"{v:.17g}" for v in row))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_network(path):
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or lines[0] != "network 1":
        raise ValueError(f"{path} is not a network file")
    head = lines[1].split()[1]
    n_layers = int(lines[2].split()[1])
    pos = 3
    layers = []
    for _ in range(n_layers):
        fields = lines[pos].split()
        out_dim, in_dim = int(fields[3]), int(fields[5])
        activation, bias = fields[7], bool(int(fields[9]))
        pos += 1
        rows = []
        for _ in range(out_dim):
            rows.append([float(v) for v in lines[pos].split()])
            pos += 1
        w = np.array(rows, dtype=np.float64)
        if w.shape != (out_dim, in_dim + (1 if bias else 0)):
            raise ValueError(f"bad weight block shape {w.shape} in {path}")
        layers.append(Layer(w, activation, bias))
    return Network(layers, head)
