"""Gradient-based input perturbations and adversarial training.

Two attack directions are built from the input gradient ``g`` of the MSE loss:

* FGSM: ``eps * sign(g)``
* FGNM: ``eps * (||sign(g)||_2 / ||g||_2) * g``, i.e. the exact gradient
  direction rescaled to the FGSM L2 norm ``eps * sqrt(nnz(g))``.

Adversarial training minimises ``alpha * J(x) + (1 - alpha) * J(x + delta(x))``
with ``delta`` recomputed from the current parameters at every mini-batch and
held constant when differentiating with respect to the parameters.
"""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ShapeMismatch, ZeroGradient
from .tensor_net import _as_batch, backward, fit, plain_loss_grad

ZERO_GRAD_NORM = 1e-30
METHODS = ("fgsm", "fgnm")


@dataclass(frozen=True)
class AttackConfig:
    method: str = "fgnm"
    eps: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "method", str(self.method).lower())
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if not self.eps > 0:
            raise ValueError("eps must be > 0")


@dataclass(frozen=True)
class Perturbation:
    """Additive input perturbation and where it came from.

    ``zero_gradient`` flags samples whose input gradient vanished; their
    ``delta`` is zero.
    """

    delta: np.ndarray
    method: str
    eps: float
    source: str = None
    zero_gradient: np.ndarray = None

    def norms(self):
        d = np.asarray(self.delta)
        if d.ndim <= 1:
            return float(np.linalg.norm(d))
        return np.linalg.norm(d.reshape(d.shape[0], -1), axis=1)


def _per_sample(g):
    g = np.asarray(g, dtype=np.float64)
    return g.reshape(1, -1) if g.ndim <= 1 else g.reshape(g.shape[0], -1)


def fgsm_from_grad(g, eps):
    """``eps * sign(g)`` elementwise."""
    g = np.asarray(g, dtype=np.float64)
    return eps * np.sign(g)


def fgnm_from_grad(g, eps, skip_zero=False):
    """Gradient-direction perturbation with the FGSM L2 norm, per sample.

    ``g`` is one gradient (any shape, treated as a single sample when 1-d) or
    a batch with the sample axis first. Returns ``(delta, zero_mask)``.
    Samples with ``||g|| < 1e-30`` raise :class:`ZeroGradient` unless
    ``skip_zero`` is set, in which case their delta is zero.
    """
    g = np.asarray(g, dtype=np.float64)
    flat = _per_sample(g)
    norm = np.linalg.norm(flat, axis=1)
    zero = norm < ZERO_GRAD_NORM
    if zero.any() and not skip_zero:
        raise ZeroGradient(f"{int(zero.sum())} sample(s) have a vanishing input gradient")
    nnz = np.count_nonzero(flat, axis=1)
    scale = np.where(zero, 0.0, eps * np.sqrt(nnz) / np.where(zero, 1.0, norm))
    delta = (scale[:, None] * flat).reshape(g.shape)
    return delta, (zero if g.ndim > 1 else zero[:1])


def _batch_input_grad(net, x, y, params=None):
    """Per-sample input gradients in batch form, plus whether ``x`` was unbatched."""
    xb, single = _as_batch(net, x)
    yb = np.asarray(y, dtype=np.float64).reshape((xb.shape[0],) + net.output_shape)
    # backward averages over the batch; undo it so each row is that sample's own gradient
    return backward(net, xb, yb, params).input_grad * xb.shape[0], single


def fgsm_direction(net, x, y, eps):
    """FGSM perturbation for one sample or a batch."""
    g, single = _batch_input_grad(net, x, y)
    zero = np.linalg.norm(_per_sample(g), axis=1) < ZERO_GRAD_NORM
    delta = fgsm_from_grad(g, eps)
    return Perturbation(delta[0] if single else delta, "fgsm", eps, net.fingerprint(), zero)


def fgnm_direction(net, x, y, eps, skip_zero=False):
    """FGNM perturbation for one sample or a batch.

    Raises :class:`ZeroGradient` when a sample's gradient vanishes, unless
    ``skip_zero`` is set (the sample then gets a zero delta and is flagged).
    """
    g, single = _batch_input_grad(net, x, y)
    delta, zero = _fgnm_batch(g, eps, skip_zero)
    return Perturbation(delta[0] if single else delta, "fgnm", eps, net.fingerprint(), zero)


def _fgnm_batch(g, eps, skip_zero):
    flat = g.reshape(g.shape[0], -1)
    delta, zero = fgnm_from_grad(flat, eps, skip_zero)
    return delta.reshape(g.shape), zero


def attack_direction(net, x, y, cfg, skip_zero=True):
    if cfg.method == "fgsm":
        return fgsm_direction(net, x, y, cfg.eps)
    return fgnm_direction(net, x, y, cfg.eps, skip_zero=skip_zero)


def perturb(x, p):
    """``x + delta`` without clipping."""
    x = np.asarray(x, dtype=np.float64)
    delta = p.delta if isinstance(p, Perturbation) else np.asarray(p, dtype=np.float64)
    if x.shape != delta.shape:
        raise ShapeMismatch(f"input {x.shape} vs perturbation {delta.shape}")
    return x + delta


class LossGrad(NamedTuple):
    loss: float
    param_grad: np.ndarray


def adversarial_loss_grad(net, x, y, cfg, params=None):
    """Mixed clean/perturbed loss and its parameter gradient.

    ``delta`` comes from the input gradient at the current ``params`` using
    ``cfg.attack_method`` at ``cfg.eps_train`` and is treated as a constant.
    With ``alpha == 1``, ``eps_train == 0`` or no attack method the result is
    exactly the plain loss and gradient.
    """
    if cfg.alpha == 1.0 or cfg.eps_train == 0.0 or cfg.attack_method == "none":
        return LossGrad(*plain_loss_grad(net, x, y, cfg, params))
    xb, _ = _as_batch(net, x)
    yb = np.asarray(y, dtype=np.float64).reshape((xb.shape[0],) + net.output_shape)
    clean = backward(net, xb, yb, params)
    g = clean.input_grad
    if cfg.attack_method == "fgsm":
        delta = fgsm_from_grad(g, cfg.eps_train)
    else:
        delta, _ = _fgnm_batch(g, cfg.eps_train, skip_zero=True)
    adv = backward(net, xb + delta, yb, params)
    a = cfg.alpha
    return LossGrad(a * clean.loss + (1.0 - a) * adv.loss, a * clean.param_grad + (1.0 - a) * adv.param_grad)


def adversarial_train(net, data, cfg):
    """Mini-batch Adam on the mixed loss plus L2 penalty; see :func:`tensor_net.fit`."""
    return fit(net, data, cfg, loss_grad=adversarial_loss_grad)
