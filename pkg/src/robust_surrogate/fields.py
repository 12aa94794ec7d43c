"""Log-normal Gaussian-process random fields on the unit square.

The simulator's random input is a modulus field ``E = exp(g)`` where ``g`` is a
zero-mean Gaussian process with squared-exponential covariance

    k(s, s') = sigma2 * exp(-|s - s'|^2 / (2 * length^2))

sampled on a regular ``nx x nx`` grid through a dense Cholesky factor.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import NotPositiveDefinite

FIELD_KINDS = ("log_modulus", "modulus", "solution")


@dataclass(frozen=True)
class GridSpec:
    """Regular grid on [0, 1]^2 with ``nx`` points per side (boundary included)."""

    nx: int

    def __post_init__(self):
        if int(self.nx) != self.nx or self.nx < 3:
            raise ValueError(f"nx must be an integer >= 3, got {self.nx!r}")

    @property
    def n(self):
        return self.nx * self.nx

    @property
    def spacing(self):
        return 1.0 / (self.nx - 1)

    def coords(self):
        """1-d node coordinates ``s_i = i / (nx - 1)``."""
        return np.arange(self.nx) / (self.nx - 1)

    def points(self):
        """All grid points as an ``(nx*nx, 2)`` array in row-major order.

        Row index is the y coordinate, column index the x coordinate.
        """
        s = self.coords()
        yy, xx = np.meshgrid(s, s, indexing="ij")
        return np.column_stack([xx.ravel(), yy.ravel()])


@dataclass(frozen=True)
class KernelParams:
    sigma2: float = 1.0
    length: float = 0.5
    jitter: float = None

    def __post_init__(self):
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be > 0")
        if not self.length > 0:
            raise ValueError("length must be > 0")
        if self.jitter is None:
            object.__setattr__(self, "jitter", 1e-10 * self.sigma2)
        if self.jitter < 0:
            raise ValueError("jitter must be >= 0")

    def to_dict(self):
        return {"sigma2": self.sigma2, "length": self.length, "jitter": self.jitter}


@dataclass(frozen=True)
class GridField:
    """A scalar field on the grid, tagged with what it represents."""

    values: np.ndarray
    kind: str

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise ValueError(f"field values must be square 2-d, got shape {values.shape}")
        if self.kind not in FIELD_KINDS:
            raise ValueError(f"unknown field kind {self.kind!r}")
        if self.kind == "modulus" and not np.all(values > 0):
            raise ValueError("modulus fields must be strictly positive")
        if self.kind == "solution":
            edge = np.concatenate([values[0], values[-1], values[:, 0], values[:, -1]])
            if np.any(edge != 0):
                raise ValueError("solution fields must vanish on the boundary")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def nx(self):
        return self.values.shape[0]


@dataclass(frozen=True)
class CholeskyFactor:
    lower: np.ndarray
    source_params: KernelParams
    jitter_used: float = field(default=0.0)

    @property
    def n(self):
        return self.lower.shape[0]


def build_covariance(grid, params):
    """Dense squared-exponential covariance between all grid points.

    Parameters
    ----------
    grid : GridSpec
    params : KernelParams

    Returns
    -------
    K : ndarray, shape (nx*nx, nx*nx)
        Symmetric, with ``K[i, i] == sigma2`` exactly.
    """
    pts = grid.points()
    diff = pts[:, None, :] - pts[None, :, :]
    r2 = np.einsum("ijk,ijk->ij", diff, diff)
    K = params.sigma2 * np.exp(-r2 / (2.0 * params.length**2))
    # exact symmetry regardless of einsum rounding order
    K = 0.5 * (K + K.T)
    np.fill_diagonal(K, params.sigma2)
    return K


def cholesky_with_jitter(K, jitter=0.0, max_retries=10, params=None):
    """Lower Cholesky factor of ``K + jitter*I``, escalating jitter on failure.

    Each failed attempt doubles the jitter (a zero jitter is first raised to
    ``1e-10`` times the mean diagonal). After ``max_retries`` doublings
    :class:`NotPositiveDefinite` is raised.
    """
    K = np.asarray(K, dtype=np.float64)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise ValueError(f"K must be square, got shape {K.shape}")
    eye = np.eye(K.shape[0])
    current = float(jitter)
    for attempt in range(max_retries + 1):
        try:
            L = np.linalg.cholesky(K + current * eye)
        except np.linalg.LinAlgError:
            L = None
        if L is not None and np.all(np.diag(L) > 0) and np.all(np.isfinite(L)):
            return CholeskyFactor(lower=L, source_params=params, jitter_used=current)
        if current > 0:
            current *= 2.0
        else:
            current = 1e-10 * max(float(np.mean(np.diag(K))), np.finfo(float).tiny)
    raise NotPositiveDefinite(
        f"Cholesky failed after {max_retries} retries (last jitter {current:.3e})"
    )


def factor_for(grid, params):
    """Covariance plus factor for a grid, with the kernel's default jitter."""
    K = build_covariance(grid, params)
    return cholesky_with_jitter(K, params.jitter, params=params)


def sample_log_field(factor, rng):
    """Draw one zero-mean log-modulus field ``L @ z``, ``z ~ N(0, I)``.

    ``rng`` is a :class:`numpy.random.Generator` or anything accepted by
    :func:`numpy.random.default_rng`.
    """
    rng = np.random.default_rng(rng)
    n = factor.n
    nx = int(round(np.sqrt(n)))
    if nx * nx != n:
        raise ValueError(f"factor dimension {n} is not a square grid")
    z = rng.standard_normal(n)
    return GridField(values=(factor.lower @ z).reshape(nx, nx), kind="log_modulus")


def exp_field(f):
    """Modulus field from a log-modulus field."""
    if f.kind != "log_modulus":
        raise ValueError(f"expected a log_modulus field, got {f.kind!r}")
    return GridField(values=np.exp(f.values), kind="modulus")
