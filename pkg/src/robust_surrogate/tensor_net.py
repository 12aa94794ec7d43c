"""Small dense/convolutional networks with exact reverse-mode gradients.

A :class:`Network` is a fixed stack of layers whose parameters live in one
flat float64 vector. :func:`backward` returns the MSE loss together with its
gradient with respect to the parameters *and* the input; the input gradient
is what the attack directions in :mod:`robust_surrogate.adversarial` consume.

Arrays carry a leading batch axis. A single unbatched sample (shape equal to
``net.input_shape``) is accepted everywhere and returned unbatched.
"""

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import NamedTuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import LengthMismatch, ShapeMismatch

LAYER_KINDS = ("dense", "conv2d", "relu", "tanh", "flatten")
ATTACK_METHODS = ("none", "fgsm", "fgnm")
LR_SCHEDULES = ("constant", "cosine")


@dataclass(frozen=True)
class LayerSpec:
    """One layer of the fixed vocabulary.

    ``args`` holds ``(in, out)`` for dense, ``(in_ch, out_ch, k)`` for conv2d
    (stride 1, same padding), ``(h, w, ch)`` for flatten, ``()`` for
    activations.
    """

    kind: str
    args: tuple = ()

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        args = tuple(int(a) for a in self.args)
        object.__setattr__(self, "args", args)
        expected = {"dense": 2, "conv2d": 3, "flatten": 3}.get(self.kind, 0)
        if len(args) != expected:
            raise ValueError(f"{self.kind} takes {expected} arguments, got {args}")
        if any(a <= 0 for a in args):
            raise ValueError(f"{self.kind} dimensions must be positive, got {args}")
        if self.kind == "conv2d" and args[2] % 2 == 0:
            raise ValueError("conv2d kernel size must be odd")

    @property
    def n_params(self):
        if self.kind == "dense":
            n_in, n_out = self.args
            return n_in * n_out + n_out
        if self.kind == "conv2d":
            c, o, k = self.args
            return o * c * k * k + o
        return 0

    def output_shape(self, shape):
        shape = tuple(shape)
        if self.kind == "dense":
            if shape != (self.args[0],):
                raise ShapeMismatch(f"dense expects input ({self.args[0]},), got {shape}")
            return (self.args[1],)
        if self.kind == "conv2d":
            if len(shape) != 3 or shape[0] != self.args[0]:
                raise ShapeMismatch(f"conv2d expects ({self.args[0]}, h, w), got {shape}")
            return (self.args[1],) + shape[1:]
        if self.kind == "flatten":
            h, w, ch = self.args
            if shape != (ch, h, w):
                raise ShapeMismatch(f"flatten expects ({ch}, {h}, {w}), got {shape}")
            return (ch * h * w,)
        return shape

    def to_dict(self):
        return {"kind": self.kind, "args": list(self.args)}


def dense(n_in, n_out):
    return LayerSpec("dense", (n_in, n_out))


def conv2d(in_ch, out_ch, k=3):
    return LayerSpec("conv2d", (in_ch, out_ch, k))


def flatten(h, w, ch):
    return LayerSpec("flatten", (h, w, ch))


def relu():
    return LayerSpec("relu")


def tanh():
    return LayerSpec("tanh")


@dataclass
class Network:
    layers: list
    params: np.ndarray
    input_shape: tuple
    output_shape: tuple = None
    seed: int = None
    offsets: list = field(default=None, repr=False)

    def __post_init__(self):
        self.layers = [l if isinstance(l, LayerSpec) else LayerSpec(**l) for l in self.layers]
        self.input_shape = tuple(int(s) for s in self.input_shape)
        shape = self.input_shape
        offsets = [0]
        for layer in self.layers:
            shape = layer.output_shape(shape)
            offsets.append(offsets[-1] + layer.n_params)
        if self.output_shape is not None and tuple(self.output_shape) != shape:
            raise ShapeMismatch(f"declared output shape {self.output_shape} != composed {shape}")
        self.output_shape = shape
        self.offsets = offsets
        self.params = np.asarray(self.params, dtype=np.float64)
        if self.params.shape != (offsets[-1],):
            raise LengthMismatch(f"expected {offsets[-1]} parameters, got {self.params.shape}")

    @property
    def n_params(self):
        return self.offsets[-1]

    def with_params(self, params):
        return Network(self.layers, np.array(params, dtype=np.float64), self.input_shape, seed=self.seed)

    def layer_params(self, i, params=None):
        """Views ``(weight, bias)`` into ``params`` for layer ``i``.

        Dense weights are ``(in, out)``; conv weights are ``(out, in, k, k)``.
        """
        params = self.params if params is None else params
        layer = self.layers[i]
        chunk = params[self.offsets[i] : self.offsets[i + 1]]
        if layer.kind == "dense":
            n_in, n_out = layer.args
            return chunk[: n_in * n_out].reshape(n_in, n_out), chunk[n_in * n_out :]
        if layer.kind == "conv2d":
            c, o, k = layer.args
            nw = o * c * k * k
            return chunk[:nw].reshape(o, c, k, k), chunk[nw:]
        return None, None

    def fingerprint(self):
        h = hashlib.sha256()
        h.update(json.dumps([l.to_dict() for l in self.layers]).encode())
        h.update(json.dumps(list(self.input_shape)).encode())
        h.update(self.params.astype("<f8").tobytes())
        return h.hexdigest()[:16]


def init_network(layers, input_shape, seed):
    """Glorot-uniform weights, zero biases, reproducible from ``seed``."""
    layers = list(layers)
    probe = Network(layers, np.zeros(sum(l.n_params for l in layers)), input_shape)
    rng = np.random.default_rng(seed)
    params = np.zeros(probe.n_params)
    for i, layer in enumerate(layers):
        if layer.kind == "dense":
            fan_in, fan_out = layer.args
        elif layer.kind == "conv2d":
            c, o, k = layer.args
            fan_in, fan_out = c * k * k, o * k * k
        else:
            continue
        W, _ = probe.layer_params(i, params)
        a = np.sqrt(6.0 / (fan_in + fan_out))
        W[...] = rng.uniform(-a, a, size=W.shape)
    return Network(layers, params, input_shape, seed=seed)


def default_layers(nx=16, conv_channels=0, hidden=512):
    """Desk-scale surrogate: optional conv front end, then a 3-layer MLP.

    Returns ``(layers, input_shape)``.
    """
    n = nx * nx
    layers = []
    if conv_channels:
        layers += [conv2d(1, conv_channels, 3), relu(), flatten(nx, nx, conv_channels)]
        input_shape = (1, nx, nx)
        width_in = conv_channels * n
    else:
        input_shape = (n,)
        width_in = n
    layers += [dense(width_in, hidden), relu(), dense(hidden, hidden), relu(), dense(hidden, n)]
    return layers, input_shape


# -- per-layer kernels -------------------------------------------------------


def _im2col(x, k):
    pad = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(xp, (k, k), axis=(2, 3))  # (B, C, H, W, k, k)
    B, C, H, W = x.shape
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(B * H * W, C * k * k)


def _layer_forward(layer, W, b, x):
    if layer.kind == "dense":
        return x @ W + b, x
    if layer.kind == "conv2d":
        B, C, H, Wd = x.shape
        k = layer.args[2]
        cols = _im2col(x, k)
        out = cols @ W.reshape(W.shape[0], -1).T + b
        return out.reshape(B, H, Wd, -1).transpose(0, 3, 1, 2), (cols, x.shape)
    if layer.kind == "relu":
        return np.maximum(x, 0.0), x > 0
    if layer.kind == "tanh":
        y = np.tanh(x)
        return y, y
    # flatten
    return x.reshape(x.shape[0], -1), x.shape


def _layer_backward(layer, W, cache, dy):
    """Returns ``(dW, db, dx)``; ``dW``/``db`` are None for parameter-free layers."""
    if layer.kind == "dense":
        x = cache
        return x.T @ dy, dy.sum(axis=0), dy @ W.T
    if layer.kind == "conv2d":
        cols, (B, C, H, Wd) = cache
        o, _, k, _ = W.shape
        pad = k // 2
        d2 = dy.transpose(0, 2, 3, 1).reshape(B * H * Wd, o)
        dW = (d2.T @ cols).reshape(W.shape)
        db = d2.sum(axis=0)
        dcols = (d2 @ W.reshape(o, -1)).reshape(B, H, Wd, C, k, k)
        dxp = np.zeros((B, C, H + 2 * pad, Wd + 2 * pad))
        for a in range(k):
            for c in range(k):
                dxp[:, :, a : a + H, c : c + Wd] += dcols[..., a, c].transpose(0, 3, 1, 2)
        return dW, db, dxp[:, :, pad : pad + H, pad : pad + Wd]
    if layer.kind == "relu":
        return None, None, dy * cache
    if layer.kind == "tanh":
        return None, None, dy * (1.0 - cache * cache)
    return None, None, dy.reshape(cache)


def _as_batch(net, x):
    x = np.asarray(x, dtype=np.float64)
    if x.shape == net.input_shape:
        return x[None], True
    if x.shape[1:] != net.input_shape:
        raise ShapeMismatch(f"input shape {x.shape} does not match network input {net.input_shape}")
    return x, False


def _forward_cached(net, xb, params):
    caches = []
    h = xb
    for i, layer in enumerate(net.layers):
        W, b = net.layer_params(i, params)
        h, cache = _layer_forward(layer, W, b, h)
        caches.append(cache)
    return h, caches


def forward(net, x, params=None):
    """Network prediction for one sample or a batch."""
    xb, single = _as_batch(net, x)
    params = net.params if params is None else params
    h = xb
    for i, layer in enumerate(net.layers):
        W, b = net.layer_params(i, params)
        h, _ = _layer_forward(layer, W, b, h)
    return h[0] if single else h


def predict(net, x, batch_size=256):
    """Batched :func:`forward` over a large stack of inputs."""
    xb, single = _as_batch(net, x)
    out = np.concatenate(
        [forward(net, xb[i : i + batch_size]) for i in range(0, xb.shape[0], batch_size)]
    )
    return out[0] if single else out


def mse_loss(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"pred {pred.shape} vs target {target.shape}")
    d = pred - target
    return float(np.mean(d * d))


class Gradients(NamedTuple):
    loss: float
    param_grad: np.ndarray
    input_grad: np.ndarray


def backward(net, x, y, params=None):
    """MSE loss of ``forward(net, x)`` against ``y`` and its exact gradients.

    The loss is the mean over every output entry of the batch, so for a batch
    of ``B`` samples the input gradient of sample ``i`` is ``1/B`` times the
    gradient of that sample's own loss.
    """
    xb, single = _as_batch(net, x)
    y = np.asarray(y, dtype=np.float64)
    yb = y[None] if single else y
    if yb.shape != (xb.shape[0],) + net.output_shape:
        raise ShapeMismatch(f"target shape {y.shape} does not match output {net.output_shape}")
    params = net.params if params is None else params
    pred, caches = _forward_cached(net, xb, params)
    diff = pred - yb
    loss = float(np.mean(diff * diff))
    grad = np.zeros(net.n_params)
    dh = (2.0 / diff.size) * diff
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        W, _ = net.layer_params(i, params)
        dW, db, dh = _layer_backward(layer, W, caches[i], dh)
        if dW is not None:
            gW, gb = net.layer_params(i, grad)
            gW[...] = dW
            gb[...] = db
    return Gradients(loss, grad, dh[0] if single else dh)


# -- optimisation --------------------------------------------------------------


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8

    @classmethod
    def zeros(cls, n, **hyper):
        return cls(np.zeros(n), np.zeros(n), **hyper)


def adam_step(state, params, grad):
    """One bias-corrected Adam update. Returns ``(new_params, new_state)``."""
    params = np.asarray(params, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if not (params.shape == grad.shape == state.m.shape == state.v.shape):
        raise LengthMismatch(
            f"params {params.shape}, grad {grad.shape}, moments {state.m.shape} must agree"
        )
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * (grad * grad)
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    new_params = params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps_adam)
    return new_params, replace(state, m=m, v=v, t=t)


def l2_total_grad(param_grad, params, lam):
    """Gradient of ``J + lam * ||theta||^2``: ``param_grad + 2 lam theta``."""
    param_grad = np.asarray(param_grad, dtype=np.float64)
    params = np.asarray(params, dtype=np.float64)
    if param_grad.shape != params.shape:
        raise LengthMismatch(f"{param_grad.shape} vs {params.shape}")
    if lam == 0:
        return param_grad.copy()
    return param_grad + 2.0 * lam * params


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    epochs: int = 100
    seed: int = 0
    lr: float = 1e-3
    l2_lambda: float = 1e-5
    alpha: float = 0.8
    eps_train: float = 0.1
    attack_method: str = "none"
    # "cosine" anneals the step size from lr to lr * lr_final_frac over the epochs
    lr_schedule: str = "constant"
    lr_final_frac: float = 0.01

    def __post_init__(self):
        object.__setattr__(self, "attack_method", str(self.attack_method).lower())
        if self.attack_method not in ATTACK_METHODS:
            raise ValueError(f"attack_method must be one of {ATTACK_METHODS}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.eps_train < 0 or self.l2_lambda < 0:
            raise ValueError("eps_train and l2_lambda must be >= 0")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        if self.lr_schedule not in LR_SCHEDULES:
            raise ValueError(f"lr_schedule must be one of {LR_SCHEDULES}")
        if not 0.0 <= self.lr_final_frac <= 1.0:
            raise ValueError("lr_final_frac must lie in [0, 1]")

    def epoch_lr(self, epoch):
        """Step size used throughout ``epoch`` (0-based)."""
        if self.lr_schedule == "constant" or self.epochs <= 1:
            return self.lr
        f = self.lr_final_frac
        return self.lr * (f + (1.0 - f) * 0.5 * (1.0 + math.cos(math.pi * epoch / (self.epochs - 1))))

    def to_dict(self):
        return asdict(self)


def _training_arrays(net, data):
    if isinstance(data, tuple):
        X, Y = data
    else:
        X, Y = data.inputs, data.outputs
    n = len(X)
    if n == 0:
        raise ValueError("training data is empty")
    X = np.asarray(X, dtype=np.float64).reshape((n,) + net.input_shape)
    Y = np.asarray(Y, dtype=np.float64).reshape((n,) + net.output_shape)
    return X, Y


def plain_loss_grad(net, x, y, cfg, params):
    g = backward(net, x, y, params)
    return g.loss, g.param_grad


def fit(net, data, cfg, loss_grad=plain_loss_grad):
    """Mini-batch Adam on ``loss_grad`` plus the L2 penalty.

    The returned trace has ``epochs + 1`` entries: the objective on the full
    training set before any update, then the sample-weighted mean of the
    mini-batch objectives within each epoch. The penalty term is excluded.
    """
    X, Y = _training_arrays(net, data)
    n = X.shape[0]
    params = net.params.copy()
    state = AdamState.zeros(net.n_params, lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    trace = [loss_grad(net, X, Y, cfg, params)[0]] if cfg.epochs > 0 else []
    for epoch in range(cfg.epochs):
        state = replace(state, lr=cfg.epoch_lr(epoch))
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss, grad = loss_grad(net, X[idx], Y[idx], cfg, params)
            grad = l2_total_grad(grad, params, cfg.l2_lambda)
            params, state = adam_step(state, params, grad)
            total += loss * len(idx)
        trace.append(total / n)
    return net.with_params(params), np.array(trace)


def train(net, data, cfg):
    """Train ``net``; adversarial training when ``cfg.attack_method != "none"``.

    Returns ``(trained_network, loss_trace)``.
    """
    if cfg.attack_method != "none":
        from .adversarial import adversarial_train

        return adversarial_train(net, data, cfg)
    return fit(net, data, cfg)


# -- persistence -------------------------------------------------------------


def save_network(net, stem, **meta):
    """``<stem>.json`` header plus ``<stem>.bin`` float64 little-endian parameters."""
    stem = str(stem)
    net.params.astype("<f8").tofile(stem + ".bin")
    header = {
        "layers": [l.to_dict() for l in net.layers],
        "input_shape": list(net.input_shape),
        "output_shape": list(net.output_shape),
        "n_params": net.n_params,
        "seed": net.seed,
        "fingerprint": net.fingerprint(),
        "dtype": "float64",
        "byte_order": "little",
    }
    header.update(meta)
    with open(stem + ".json", "w") as fh:
        json.dump(header, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_network(stem):
    """Inverse of :func:`save_network`; returns ``(network, header)``."""
    stem = str(stem)
    with open(stem + ".json") as fh:
        header = json.load(fh)
    params = np.fromfile(stem + ".bin", dtype="<f8").astype(np.float64)
    layers = [LayerSpec(d["kind"], tuple(d["args"])) for d in header["layers"]]
    net = Network(layers, params, tuple(header["input_shape"]), seed=header.get("seed"))
    if net.fingerprint() != header["fingerprint"]:
        raise ValueError(f"{stem}: parameter fingerprint mismatch")
    return net, header
