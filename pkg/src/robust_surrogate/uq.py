"""Robustness and uncertainty-quantification statistics.

Per-sample squared errors, output moments and their Frobenius relative
errors, Gaussian KDE with Silverman's bandwidth, the one-sided Mann-Whitney U
test, matched-norm random perturbations, the Monte Carlo density experiment
comparing random and adversarial directions, and an SE-tercile LDA projection.
"""

import csv
import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.special import ndtr

from .adversarial import AttackConfig, fgnm_direction, fgsm_direction
from .errors import (
    DegenerateClasses,
    DegenerateSample,
    EmptyGroup,
    EmptyInput,
    ShapeMismatch,
    ZeroReference,
)
from .simulator import simulate_batch
from .tensor_net import predict

_trapezoid = getattr(np, "trapezoid", None) or np.trapz


def _stack(arrays):
    if isinstance(arrays, np.ndarray):
        return arrays.astype(np.float64, copy=False)
    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
    if not arrays:
        return np.empty((0,))
    shape = arrays[0].shape
    if any(a.shape != shape for a in arrays):
        raise ShapeMismatch("all arrays must share one shape")
    return np.stack(arrays)


# -- squared errors and moments --------------------------------------------------


@dataclass(frozen=True)
class SampleErrors:
    """Per-sample squared errors and their natural logs.

    ``log_se`` covers only the strictly positive entries; ``n_zero`` counts the
    exact zeros that were left out.
    """

    se: np.ndarray
    log_se: np.ndarray
    n_zero: int


def per_sample_se(pred, truth):
    """``se[i] = mean((pred[i] - truth[i])**2)`` over every output entry."""
    pred = _stack(pred)
    truth = _stack(truth)
    if pred.shape != truth.shape:
        raise ShapeMismatch(f"pred {pred.shape} vs truth {truth.shape}")
    if pred.ndim == 0 or pred.shape[0] == 0:
        return SampleErrors(np.empty(0), np.empty(0), 0)
    d = (pred - truth).reshape(pred.shape[0], -1)
    se = np.mean(d * d, axis=1)
    positive = se > 0
    return SampleErrors(se, np.log(se[positive]), int(np.count_nonzero(~positive)))


@dataclass(frozen=True)
class MomentArrays:
    m1: np.ndarray
    m2: np.ndarray

    @property
    def variance(self):
        return self.m2 - self.m1 * self.m1


def moments(outputs):
    """Elementwise first and raw second moments across samples."""
    y = _stack(outputs)
    if y.ndim == 0 or y.shape[0] == 0:
        raise EmptyInput("moments need at least one output")
    return MomentArrays(np.mean(y, axis=0), np.mean(y * y, axis=0))


def relative_error(m_model, m_sim):
    """``||m_model - m_sim||_F / ||m_sim||_F``."""
    m_model = np.asarray(m_model, dtype=np.float64)
    m_sim = np.asarray(m_sim, dtype=np.float64)
    if m_model.shape != m_sim.shape:
        raise ShapeMismatch(f"{m_model.shape} vs {m_sim.shape}")
    ref = np.linalg.norm(m_sim.ravel())
    if ref == 0:
        raise ZeroReference("reference moment array has zero norm")
    return float(np.linalg.norm((m_model - m_sim).ravel()) / ref)


# -- kernel density estimation -------------------------------------------------


@dataclass(frozen=True)
class DensityCurve:
    grid: np.ndarray
    density: np.ndarray
    bandwidth: float
    n: int

    def integral(self):
        return float(_trapezoid(self.density, self.grid))

    def mean(self):
        """Mean of the estimated distribution (the sample mean, by construction)."""
        w = self.density / self.integral()
        return float(_trapezoid(w * self.grid, self.grid))

    def to_csv(self, path):
        write_csv(path, ["grid", "density"], zip(self.grid, self.density))


def silverman_bandwidth(samples):
    """Silverman's rule ``0.9 * min(sd, IQR/1.34) * n**(-1/5)``.

    When the IQR is zero but the sample is not constant, the standard
    deviation alone is used. The result is floored at ``1e-12``.
    """
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size < 2:
        raise DegenerateSample("need at least two samples")
    sd = float(np.std(x, ddof=1))
    if sd == 0.0:
        raise DegenerateSample("all samples are equal")
    q75, q25 = np.percentile(x, [75, 25])
    spread = min(sd, (q75 - q25) / 1.34) or sd
    return max(0.9 * spread * x.size ** (-0.2), 1e-12)


def kde(samples, grid, h):
    """Gaussian KDE ``(1/(n h)) sum phi((t - x_i)/h)`` evaluated on ``grid``."""
    if not h > 0:
        raise ValueError("bandwidth must be > 0")
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size == 0:
        raise EmptyInput("kde needs at least one sample")
    grid = np.asarray(grid, dtype=np.float64).ravel()
    density = np.zeros_like(grid)
    norm = 1.0 / (x.size * h * math.sqrt(2.0 * math.pi))
    # chunk over samples to bound memory at len(grid) * 2048
    for start in range(0, x.size, 2048):
        u = (grid[:, None] - x[None, start : start + 2048]) / h
        density += np.exp(-0.5 * u * u).sum(axis=1)
    return DensityCurve(grid, density * norm, float(h), int(x.size))


def density_grid(sample_sets, bandwidths, n_min=512, n_max=20001):
    """Common abscissae covering every sample set to ``+-10 (sd + h)`` and beyond its extremes.

    The step is at most a quarter of the smallest bandwidth (capped at
    ``n_max`` points) so trapezoidal integrals of each curve are accurate.
    """
    lo, hi = np.inf, -np.inf
    for x, h in zip(sample_sets, bandwidths):
        x = np.asarray(x, dtype=np.float64)
        sd = float(np.std(x, ddof=1)) if x.size > 1 else 0.0
        lo = min(lo, x.mean() - 10 * (sd + h), x.min() - 8 * h)
        hi = max(hi, x.mean() + 10 * (sd + h), x.max() + 8 * h)
    n = int(min(max(n_min, math.ceil((hi - lo) / (min(bandwidths) / 4.0)) + 1), n_max))
    return np.linspace(lo, hi, n)


def kde_curves(sample_sets, bandwidths=None, grid=None):
    """Silverman-bandwidth KDE curves for several sample sets on one grid."""
    sample_sets = [np.asarray(x, dtype=np.float64).ravel() for x in sample_sets]
    if bandwidths is None:
        bandwidths = [silverman_bandwidth(x) for x in sample_sets]
    if grid is None:
        grid = density_grid(sample_sets, bandwidths)
    return [kde(x, grid, h) for x, h in zip(sample_sets, bandwidths)]


# -- Mann-Whitney U ------------------------------------------------------------


@dataclass(frozen=True)
class RankTestResult:
    """One-sided ("greater") Mann-Whitney result for group a versus group b."""

    u_statistic: float
    p_value: float
    n1: int
    n2: int
    method: str
    alternative: str = "greater"

    @property
    def u_complement(self):
        return self.n1 * self.n2 - self.u_statistic

    def to_row(self):
        return [self.u_statistic, self.p_value, self.n1, self.n2, self.method, self.alternative]


RANK_TEST_HEADER = ["u_statistic", "p_value", "n1", "n2", "method", "alternative"]


def midranks(values):
    """1-based ranks with ties sharing the mean of their positions."""
    v = np.asarray(values, dtype=np.float64)
    order = np.argsort(v, kind="mergesort")
    sv = v[order]
    ranks = np.empty(v.size)
    i = 0
    while i < v.size:
        j = i
        while j + 1 < v.size and sv[j + 1] == sv[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def u_null_counts(n1, n2):
    """Number of rank assignments giving each ``U = 0 .. n1*n2`` (no ties).

    Uses the recurrence ``c(n1, n2, u) = c(n1-1, n2, u-n2) + c(n1, n2-1, u)``,
    which counts the same arrangements as enumerating every subset of ranks.
    """
    # table[j][u] for the current n1 row, j = 0..n2
    prev = [[1] for _ in range(n2 + 1)]  # n1 = 0: only U = 0
    for a in range(1, n1 + 1):
        cur = [[1]]  # n2 = 0: only U = 0
        for b in range(1, n2 + 1):
            size = a * b + 1
            row = [0] * size
            for u, c in enumerate(cur[b - 1]):
                row[u] += c
            for u, c in enumerate(prev[b]):
                row[u + b] += c
            cur.append(row)
        prev = cur
    return prev[n2]


def exact_u_sf(u, n1, n2):
    """``P(U >= u)`` under the null, tie-free, by exact counting."""
    counts = u_null_counts(n1, n2)
    total = math.comb(n1 + n2, n1)
    k = int(math.ceil(u - 1e-9))
    return sum(counts[max(k, 0) :]) / total


def enumerate_u_sf(u, n1, n2):
    """Brute-force ``P(U >= u)`` over every choice of ranks for group a."""
    n = n1 + n2
    hits = 0
    total = 0
    offset = n1 * (n1 + 1) / 2
    for ranks in itertools.combinations(range(1, n + 1), n1):
        total += 1
        if sum(ranks) - offset >= u - 1e-9:
            hits += 1
    return hits / total


def mann_whitney_u(group_a, group_b, method="auto"):
    """One-sided Mann-Whitney U test that ``group_a`` tends to exceed ``group_b``.

    ``U_a`` counts pairs with ``a > b`` (ties count one half). With
    ``method="auto"`` the exact null distribution is used when both groups have
    at most 8 values and there are no ties; otherwise a normal approximation
    with tie-corrected variance and a 0.5 continuity correction.
    """
    a = np.asarray(group_a, dtype=np.float64).ravel()
    b = np.asarray(group_b, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise EmptyGroup("both groups must be nonempty")
    n1, n2 = a.size, b.size
    pooled = np.concatenate([a, b])
    ranks = midranks(pooled)
    u_a = float(ranks[:n1].sum() - n1 * (n1 + 1) / 2.0)
    ties = np.unique(pooled).size < pooled.size
    if method == "auto":
        method = "exact" if (n1 <= 8 and n2 <= 8 and not ties) else "normal_approx"
    if method == "exact":
        if ties:
            raise ValueError("exact distribution requires tie-free data")
        p = exact_u_sf(u_a, n1, n2)
    elif method == "normal_approx":
        n = n1 + n2
        _, counts = np.unique(pooled, return_counts=True)
        tie_term = float(np.sum(counts.astype(float) ** 3 - counts)) / (n * (n - 1)) if n > 1 else 0.0
        var = n1 * n2 / 12.0 * ((n + 1) - tie_term)
        if var <= 0:
            p = 1.0
        else:
            z = (u_a - n1 * n2 / 2.0 - 0.5) / math.sqrt(var)
            p = float(ndtr(-z))
    else:
        raise ValueError(f"unknown method {method!r}")
    return RankTestResult(u_a, min(max(p, 0.0), 1.0), n1, n2, method)


# -- perturbation experiments ----------------------------------------------------


def random_perturb_matched_norm(x, reference, rng):
    """``x + eta`` with ``eta`` uniform in direction and ``||eta|| = ||delta_ref||``.

    Works per sample when ``x`` is a batch. ``reference`` is a
    :class:`~robust_surrogate.adversarial.Perturbation` or a bare delta array
    shaped like ``x``.
    """
    x = np.asarray(x, dtype=np.float64)
    delta = np.asarray(getattr(reference, "delta", reference), dtype=np.float64)
    if delta.shape != x.shape:
        raise ShapeMismatch(f"input {x.shape} vs reference {delta.shape}")
    rng = np.random.default_rng(rng)
    single = x.ndim == 1
    flat_d = delta.reshape(1, -1) if single else delta.reshape(delta.shape[0], -1)
    target = np.linalg.norm(flat_d, axis=1)
    if np.any(target == 0):
        raise ZeroReference("reference perturbation has zero norm")
    z = rng.standard_normal(flat_d.shape)
    eta = z * (target / np.linalg.norm(z, axis=1))[:, None]
    return x + eta.reshape(x.shape)


def _flat_inputs(net, fields):
    return np.asarray(fields, dtype=np.float64).reshape((len(fields),) + net.input_shape)


def model_se(net, inputs, truth):
    """Per-sample SE of the surrogate against simulator outputs (both ``(n, nx, nx)``)."""
    pred = predict(net, _flat_inputs(net, inputs)).reshape(np.shape(truth))
    return per_sample_se(pred, truth)


def mc_density_experiment(
    net,
    sim_cfg,
    test,
    cfg,
    n_points=50,
    n_dirs=100,
    seed=0,
):
    """Log-SE densities under random, FGNM and FGSM perturbations of equal norm.

    ``n_points`` test inputs are drawn at random. Each gets ``n_dirs`` random
    perturbations with the L2 norm of its FGNM perturbation at ``cfg.eps``,
    plus the FGNM and FGSM perturbations themselves. Every perturbed input is
    relabelled by the simulator; the surrogate's log(SE) values feed three
    KDE curves on a shared grid.

    Returns a dict with ``f_rand``, ``f_fgnm``, ``f_fgsm`` (DensityCurve),
    the raw ``log_se_*`` arrays, ``clean_log_se``, the chosen test ``index``
    and the ``kept`` mask over it. Points whose input gradient vanishes are
    dropped (``n_zero_gradient``); exactly zero SE values are left out of the
    logs and counted in ``n_zero_se``.
    """
    if not isinstance(cfg, AttackConfig):
        cfg = AttackConfig(*cfg)
    if len(test) < n_points:
        raise ValueError(f"test subset has {len(test)} samples, need {n_points}")
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0,)))
    index = np.sort(rng.choice(len(test), size=n_points, replace=False))
    nx = test.nx
    X = _flat_inputs(net, test.inputs[index])
    Y = test.outputs[index].reshape((n_points,) + net.output_shape)

    p_fgnm = fgnm_direction(net, X, Y, cfg.eps, skip_zero=True)
    p_fgsm = fgsm_direction(net, X, Y, cfg.eps)
    keep = ~np.asarray(p_fgnm.zero_gradient)
    zero_se = 0

    rand_inputs = []
    for i in np.flatnonzero(keep):
        stream = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1, int(index[i]))))
        ref = np.broadcast_to(p_fgnm.delta[i], (n_dirs,) + p_fgnm.delta[i].shape)
        base = np.broadcast_to(X[i], ref.shape)
        rand_inputs.append(random_perturb_matched_norm(base, ref, stream))
    rand_inputs = np.concatenate(rand_inputs) if rand_inputs else np.empty((0,) + X.shape[1:])

    def relabel(inputs):
        fields = inputs.reshape(-1, nx, nx)
        return fields, simulate_batch(fields, sim_cfg)

    out = {}
    for name, inputs in (
        ("rand", rand_inputs),
        ("fgnm", (X + p_fgnm.delta)[keep]),
        ("fgsm", (X + p_fgsm.delta)[keep]),
    ):
        fields, truth = relabel(inputs)
        errs = model_se(net, fields, truth)
        zero_se += errs.n_zero
        out["log_se_" + name] = errs.log_se
    clean = model_se(net, test.inputs[index[keep]], test.outputs[index[keep]])
    out["clean_log_se"] = clean.log_se
    curves = kde_curves([out["log_se_rand"], out["log_se_fgnm"], out["log_se_fgsm"]])
    out.update(f_rand=curves[0], f_fgnm=curves[1], f_fgsm=curves[2])
    out["index"] = index
    out["kept"] = keep
    out["n_zero_gradient"] = int(np.count_nonzero(~keep))
    out["n_zero_se"] = zero_se
    return out


# -- LDA projection --------------------------------------------------------------


def se_terciles(se):
    """Class labels 0/1/2 for the low/middle/high thirds of ``se``."""
    se = np.asarray(getattr(se, "se", se), dtype=np.float64).ravel()
    labels = np.empty(se.size, dtype=int)
    for c, part in enumerate(np.array_split(np.argsort(se, kind="mergesort"), 3)):
        labels[part] = c
    return labels


def _fix_signs(vectors):
    # largest-magnitude entry of every column made positive, for reproducible output
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def lda_project(features, se=None, labels=None, max_pca=50):
    """2-d LDA coordinates with SE-tercile classes.

    Features are centred and reduced by PCA to ``min(50, n - 3)`` components,
    then projected on the top two generalized eigenvectors of
    ``(S_W + gamma I, S_B)`` with ``gamma = 1e-6 * trace(S_W) / dim``. Scatter
    matrices are normalised by the sample count. ``labels`` may be passed
    directly instead of ``se``.

    Returns
    -------
    coords : ndarray, shape (n, 2)
    """
    X = np.asarray(features, dtype=np.float64)
    X = X.reshape(X.shape[0], -1)
    n = X.shape[0]
    if labels is None:
        if se is None:
            raise ValueError("either se or labels is required")
        labels = se_terciles(se)
    labels = np.asarray(labels)
    classes = np.unique(labels)
    if classes.size < 3 or any(np.count_nonzero(labels == c) < 3 for c in classes):
        raise DegenerateClasses("LDA needs three classes with at least 3 samples each")

    Xc = X - X.mean(axis=0)
    k = max(1, min(max_pca, n - 3, X.shape[1]))
    _, _, Vt = np.linalg.svd(Xc, full_matrices=False)
    basis = _fix_signs(Vt[:k].T)
    Z = Xc @ basis

    dim = Z.shape[1]
    mu = Z.mean(axis=0)
    S_W = np.zeros((dim, dim))
    S_B = np.zeros((dim, dim))
    for c in classes:
        Zc = Z[labels == c]
        mc = Zc.mean(axis=0)
        D = Zc - mc
        S_W += D.T @ D
        S_B += Zc.shape[0] * np.outer(mc - mu, mc - mu)
    S_W /= n
    S_B /= n
    gamma = 1e-6 * np.trace(S_W) / dim
    evals, evecs = linalg.eigh(S_B, S_W + gamma * np.eye(dim))
    top = _fix_signs(evecs[:, np.argsort(evals)[::-1][: min(2, dim)]])
    coords = Z @ top
    if coords.shape[1] < 2:
        coords = np.column_stack([coords, np.zeros(n)])
    return coords


# -- tabular output ------------------------------------------------------------


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, header, rows):
    """Comma-separated file with one header row; floats written round-trip exact."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def moments_to_csv(m, path):
    nx = m.m1.shape[-1] if m.m1.ndim > 1 else m.m1.size
    rows = []
    for flat, (a, b) in enumerate(zip(m.m1.ravel(), m.m2.ravel())):
        rows.append([flat // nx, flat % nx, a, b])
    write_csv(path, ["row", "col", "m1", "m2"], rows)
