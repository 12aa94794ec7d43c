"""Central finite-difference oracle for network gradients (independent of backward)."""

import numpy as np

from robust_surrogate.tensor_net import (
    conv2d,
    dense,
    flatten,
    forward,
    init_network,
    relu,
    tanh,
)

STEP = 1e-5


def fd_loss(net, params, x, y):
    d = forward(net, x, params) - y
    return float(np.mean(d * d))


def fd_param_grad(net, x, y, step=STEP):
    p = net.params.copy()
    g = np.zeros_like(p)
    for i in range(p.size):
        old = p[i]
        p[i] = old + step
        up = fd_loss(net, p, x, y)
        p[i] = old - step
        down = fd_loss(net, p, x, y)
        p[i] = old
        g[i] = (up - down) / (2 * step)
    return g


def fd_input_grad(net, x, y, step=STEP):
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat_x = x.reshape(-1)
    flat_g = g.reshape(-1)
    for i in range(flat_x.size):
        old = flat_x[i]
        flat_x[i] = old + step
        up = fd_loss(net, net.params, x, y)
        flat_x[i] = old - step
        down = fd_loss(net, net.params, x, y)
        flat_x[i] = old
        flat_g[i] = (up - down) / (2 * step)
    return g


def max_rel_error(analytic, numeric, floor=1e-8):
    a = np.ravel(analytic)
    f = np.ravel(numeric)
    mask = np.maximum(np.abs(a), np.abs(f)) > floor
    if not mask.any():
        return 0.0
    return float(np.max(np.abs(a[mask] - f[mask]) / np.maximum(np.abs(a[mask]), np.abs(f[mask]))))


def random_case(seed):
    """A small random network touching every layer kind, plus a batch (x, y)."""
    rng = np.random.default_rng(seed)
    c = int(rng.integers(1, 3))
    h = int(rng.integers(3, 5))
    w = int(rng.integers(3, 5))
    o = int(rng.integers(1, 3))
    hidden = int(rng.integers(3, 6))
    out = int(rng.integers(1, 4))
    act = [relu, tanh][seed % 2]
    other = [tanh, relu][seed % 2]
    layers = [
        conv2d(c, o, 3),
        act(),
        flatten(h, w, o),
        dense(o * h * w, hidden),
        other(),
        dense(hidden, out),
    ]
    net = init_network(layers, (c, h, w), seed)
    # non-zero biases so every parameter sees a generic gradient
    net = net.with_params(net.params + 0.1 * rng.normal(size=net.n_params))
    batch = int(rng.integers(1, 4))
    x = rng.normal(size=(batch, c, h, w))
    y = rng.normal(size=(batch, out))
    return net, x, y
