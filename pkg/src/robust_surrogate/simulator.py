"""Ground-truth simulator: variable-coefficient elliptic solve on the unit square.

Solves ``-div(E grad u) = f`` with ``u = 0`` on the boundary using the 5-point
flux-form finite-difference scheme (face coefficients are arithmetic means of
the adjacent nodal values) and Jacobi-preconditioned conjugate gradients.
"""

import json
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import SolverDiverged
from .fields import GridField, GridSpec, KernelParams, exp_field, factor_for, sample_log_field


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-10
    max_iter: int = None
    load: float = 1.0

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be > 0")
        if self.max_iter is not None and self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")

    def iteration_cap(self, n):
        return self.max_iter if self.max_iter is not None else 10 * n

    def to_dict(self):
        return asdict(self)


def assemble_operator(E):
    """Sparse SPD matrix of the flux-form discretization on interior nodes.

    Parameters
    ----------
    E : ndarray, shape (nx, nx)
        Strictly positive nodal coefficient, boundary nodes included.

    Returns
    -------
    A : scipy.sparse.csr_matrix, shape ((nx-2)**2, (nx-2)**2)
    """
    E = np.asarray(E, dtype=np.float64)
    nx = E.shape[0]
    m = nx - 2
    h2 = (1.0 / (nx - 1)) ** 2
    # face coefficients between node (i, j) and its east / north neighbour
    east = 0.5 * (E[:, :-1] + E[:, 1:])  # (nx, nx-1): face (i, j)-(i, j+1)
    north = 0.5 * (E[:-1, :] + E[1:, :])  # (nx-1, nx): face (i, j)-(i+1, j)

    ii, jj = np.meshgrid(np.arange(1, nx - 1), np.arange(1, nx - 1), indexing="ij")
    ii = ii.ravel()
    jj = jj.ravel()
    idx = (ii - 1) * m + (jj - 1)

    a_w = east[ii, jj - 1]
    a_e = east[ii, jj]
    a_s = north[ii - 1, jj]
    a_n = north[ii, jj]
    diag = (a_w + a_e + a_s + a_n) / h2

    rows = [idx]
    cols = [idx]
    vals = [diag]
    for coeff, di, dj in ((a_w, 0, -1), (a_e, 0, 1), (a_s, -1, 0), (a_n, 1, 0)):
        ni = ii + di
        nj = jj + dj
        inner = (ni >= 1) & (ni <= nx - 2) & (nj >= 1) & (nj <= nx - 2)
        rows.append(idx[inner])
        cols.append((ni[inner] - 1) * m + (nj[inner] - 1))
        vals.append(-coeff[inner] / h2)
    A = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(m * m, m * m)
    )
    return A


def pcg(A, b, tol, max_iter, x0=None):
    """Jacobi-preconditioned conjugate gradients for SPD ``A``.

    Stops once ``||b - A x|| <= tol * ||b||``. Returns ``(x, iterations, relres)``.
    Raises :class:`SolverDiverged` if ``max_iter`` is reached first.
    """
    b = np.asarray(b, dtype=np.float64)
    bnorm = np.linalg.norm(b)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=np.float64)
    if bnorm == 0.0:
        return np.zeros_like(b), 0, 0.0
    inv_diag = 1.0 / A.diagonal()
    r = b - A @ x
    z = inv_diag * r
    p = z.copy()
    rz = r @ z
    relres = np.linalg.norm(r) / bnorm
    k = 0
    while relres > tol:
        if k >= max_iter:
            raise SolverDiverged(
                f"CG did not reach tol={tol:.1e} in {max_iter} iterations (relres {relres:.3e})",
                iterations=k,
                residual=relres,
            )
        Ap = A @ p
        alpha = rz / (p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        k += 1
        relres = np.linalg.norm(r) / bnorm
        z = inv_diag * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, k, relres


def solve_elliptic(E, cfg=SolverConfig()):
    """Solve ``-div(E grad u) = load`` with clamped boundary.

    Parameters
    ----------
    E : GridField
        Modulus field (``kind="modulus"``); a bare positive array is accepted too.
    cfg : SolverConfig

    Returns
    -------
    GridField
        Solution with ``kind="solution"`` and zero boundary values.
    """
    values = E.values if isinstance(E, GridField) else np.asarray(E, dtype=np.float64)
    if values.ndim != 2 or values.shape[0] != values.shape[1] or values.shape[0] < 3:
        raise ValueError(f"E must be a square grid with nx >= 3, got shape {values.shape}")
    if not np.all(values > 0):
        raise ValueError("E must be strictly positive")
    nx = values.shape[0]
    m = nx - 2
    u = np.zeros((nx, nx))
    if cfg.load != 0.0:
        A = assemble_operator(values)
        b = np.full(m * m, float(cfg.load))
        x, _, _ = pcg(A, b, cfg.tol, cfg.iteration_cap(m * m))
        u[1:-1, 1:-1] = x.reshape(m, m)
    return GridField(values=u, kind="solution")


def relative_residual(E, u, load):
    """``||b - A u|| / ||b||`` of a stored solution against its coefficient field."""
    A = assemble_operator(E)
    interior = np.asarray(u)[1:-1, 1:-1].ravel()
    b = np.full(interior.size, float(load))
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return float(np.linalg.norm(A @ interior))
    return float(np.linalg.norm(b - A @ interior) / bnorm)


def simulate(log_field, cfg=SolverConfig()):
    """Query the simulator: ``solve_elliptic(exp(log_field))``.

    Accepts a ``log_modulus`` :class:`GridField` or a bare square array (e.g. a
    perturbed network input reshaped to the grid).
    """
    if not isinstance(log_field, GridField):
        log_field = GridField(values=log_field, kind="log_modulus")
    return solve_elliptic(exp_field(log_field), cfg)


def simulate_batch(log_fields, cfg=SolverConfig(), first_index=0):
    """Simulate a stack of log fields ``(n, nx, nx)``; errors carry the sample index."""
    log_fields = np.asarray(log_fields, dtype=np.float64)
    out = np.empty_like(log_fields)
    for i, g in enumerate(log_fields):
        try:
            out[i] = simulate(g, cfg).values
        except SolverDiverged as exc:
            exc.sample_index = first_index + i
            raise
    return out


@dataclass
class LabeledDataset:
    """Paired log-modulus inputs and solution outputs, stacked as ``(n, nx, nx)``."""

    inputs: np.ndarray
    outputs: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.outputs = np.asarray(self.outputs, dtype=np.float64)
        if self.inputs.shape != self.outputs.shape or self.inputs.ndim != 3:
            raise ValueError(
                f"inputs {self.inputs.shape} and outputs {self.outputs.shape} must be equal (n, nx, nx)"
            )

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def nx(self):
        return self.inputs.shape[1]

    def subset(self, index, **meta):
        index = np.asarray(index)
        return LabeledDataset(
            self.inputs[index].copy(), self.outputs[index].copy(), {**self.meta, **meta}
        )


def sample_streams(seed, n, offset=0):
    """Independent per-sample generators derived from ``seed`` and the sample index."""
    return [np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(offset + i,))) for i in range(n)]


def generate_dataset(n, grid=GridSpec(16), kp=KernelParams(), cfg=SolverConfig(), seed=0, offset=0):
    """Draw ``n`` i.i.d. (log field, solution) pairs reproducibly from ``seed``.

    Sample ``i`` uses its own stream keyed by ``(seed, offset + i)``, so any
    prefix or index range is stable regardless of ``n``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    factor = factor_for(grid, kp)
    inputs = np.empty((n, grid.nx, grid.nx))
    for i, rng in enumerate(sample_streams(seed, n, offset)):
        inputs[i] = sample_log_field(factor, rng).values
    outputs = simulate_batch(inputs, cfg, first_index=offset)
    meta = {
        "nx": grid.nx,
        "seed": seed,
        "offset": offset,
        "kernel": kp.to_dict(),
        "solver": cfg.to_dict(),
        "n_samples": n,
    }
    return LabeledDataset(inputs, outputs, meta)


def save_dataset(dataset, stem):
    """Write ``<stem>.json`` metadata and ``<stem>.bin`` float64 little-endian payload.

    Payload order: sample-major, then input field before output field, each
    field row-major.
    """
    stem = str(stem)
    payload = np.stack([dataset.inputs, dataset.outputs], axis=1)
    payload.astype("<f8").tofile(stem + ".bin")
    meta = dict(dataset.meta)
    meta.update(
        {
            "nx": dataset.nx,
            "n_samples": len(dataset),
            "dtype": "float64",
            "byte_order": "little",
            "layout": "sample, [input, output], row, col",
        }
    )
    with open(stem + ".json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_dataset(stem):
    stem = str(stem)
    with open(stem + ".json") as fh:
        meta = json.load(fh)
    nx = meta["nx"]
    n = meta["n_samples"]
    raw = np.fromfile(stem + ".bin", dtype="<f8")
    if raw.size != n * 2 * nx * nx:
        raise ValueError(f"{stem}.bin holds {raw.size} values, expected {n * 2 * nx * nx}")
    raw = raw.reshape(n, 2, nx, nx).astype(np.float64)
    return LabeledDataset(raw[:, 0].copy(), raw[:, 1].copy(), meta)

