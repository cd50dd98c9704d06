"""Regularized thin-plate-spline interpolation of reduced coefficients."""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from scipy.spatial.distance import cdist, pdist

from .errors import (
    DimensionMismatch,
    DuplicateCenter,
    IllConditioned,
    InsufficientCenters,
    InvalidInput,
    ParseError,
)
from .pod import PODBasis, project_field

log = logging.getLogger(__name__)

MODES = ("ParamTime", "CoefExtrapolation")
COND_LIMIT = 1e14
DUPLICATE_TOL = 1e-12


def kernel(r):
    """xi(r) = r^2 log(1 + r)."""
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise InvalidInput("kernel argument must be nonnegative")
    out = r * r * np.log1p(r)
    return float(out) if out.ndim == 0 else out


@dataclass
class TrainingTable:
    centers: np.ndarray  # (n, d)
    targets: np.ndarray  # (n, m)

    def __post_init__(self):
        self.centers = np.atleast_2d(np.asarray(self.centers, dtype=float))
        self.targets = np.asarray(self.targets, dtype=float)
        if self.targets.ndim == 1:
            self.targets = self.targets[:, None]
        if self.centers.shape[0] != self.targets.shape[0]:
            raise DimensionMismatch("one target row per center is required")


@dataclass
class RBFModel:
    mode: str
    centers: np.ndarray  # raw (unscaled) centers, (n, d)
    weights: np.ndarray  # (n, m)
    lo: np.ndarray  # per-coordinate offset of the [0, 1] normalization
    scale: np.ndarray  # per-coordinate range
    lam: float = 0.0
    cond: float = float("nan")

    @property
    def dim(self):
        return self.centers.shape[1]

    @property
    def n_out(self):
        return self.weights.shape[1]

    def normalize(self, x):
        return (np.asarray(x, dtype=float) - self.lo) / self.scale

    def in_range(self, z, tol=1e-9):
        y = self.normalize(z)
        return bool(np.all(y >= -tol) and np.all(y <= 1 + tol))

    def __call__(self, z):
        return rbf_eval(self, z)


def kernel_matrix(points):
    """Symmetric A_ij = xi(|x_i - x_j|) with zero diagonal."""
    P = np.atleast_2d(np.asarray(points, dtype=float))
    return kernel(cdist(P, P))


def _normalization(X, normalize):
    if not normalize:
        return np.zeros(X.shape[1]), np.ones(X.shape[1])
    lo, hi = X.min(axis=0), X.max(axis=0)
    rng = hi - lo
    return lo, np.where(rng > 0, rng, 1.0)


def rbf_fit(table: TrainingTable, lam=0.0, mode="ParamTime", normalize=True):
    """Solve (A + lam I) W = Y with A_ij = xi(|x_i - x_j|) by LU with partial pivoting."""
    if mode not in MODES:
        raise InvalidInput(f"unknown RBF mode {mode!r}")
    if lam < 0:
        raise InvalidInput("ridge parameter must be nonnegative")
    X = table.centers
    n = X.shape[0]
    if n < 2:
        raise InsufficientCenters(f"{n} center(s); at least 2 are needed")
    lo, scale = _normalization(X, normalize)
    Z = (X - lo) / scale
    d = pdist(Z)
    if d.min() <= DUPLICATE_TOL:
        raise DuplicateCenter(f"two centers closer than {DUPLICATE_TOL} after scaling")
    A = kernel_matrix(Z) + lam * np.eye(n)
    lu, piv = sla.lu_factor(A, check_finite=False)
    rcond = sla.lapack.dgecon(lu, np.abs(A).sum(axis=0).max(), norm="1")[0]
    cond = 1.0 / rcond if rcond > 0 else np.inf
    log.info("RBF fit: %d centers, %d outputs, condition estimate %.3e", n, table.targets.shape[1], cond)
    if lam == 0 and not cond <= COND_LIMIT:
        raise IllConditioned(f"interpolation matrix condition {cond:.3e} exceeds {COND_LIMIT:.0e}; "
                             "use a positive ridge parameter")
    W = sla.lu_solve((lu, piv), table.targets, check_finite=False)
    return RBFModel(mode, X.copy(), W, lo, scale, float(lam), float(cond))


def rbf_eval(model: RBFModel, z):
    """Interpolated outputs at one query (d,) or a batch (q, d)."""
    z = np.asarray(z, dtype=float)
    single = z.ndim == 1
    Q = np.atleast_2d(z)
    if Q.shape[1] != model.dim:
        raise DimensionMismatch(f"query has dimension {Q.shape[1]}, model expects {model.dim}")
    Phi = kernel(cdist(model.normalize(Q), model.normalize(model.centers)))
    out = Phi @ model.weights
    return out[0] if single else out


def build_training_param_time(snapshots, times, params, basis: PODBasis):
    """Centers (t, mu) with targets the projections of each snapshot on ``basis``."""
    S = np.asarray(snapshots, dtype=float)
    times, params = np.asarray(times, dtype=float), np.asarray(params, dtype=float)
    if not (S.shape[1] == len(times) == len(params)):
        raise DimensionMismatch("snapshot, time and parameter counts differ")
    X = np.column_stack([times, params])
    if len({tuple(x) for x in X.tolist()}) != len(X):
        raise DuplicateCenter("repeated (t, mu) pair in the training set")
    return TrainingTable(X, project_field(S, basis).T)


def build_training_coef(ut_snapshots, basis_ut: PODBasis, targets):
    """Centers are the predicted-velocity projections; ``targets`` one row per snapshot."""
    S = np.asarray(ut_snapshots, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if S.shape[1] != targets.shape[0]:
        raise DimensionMismatch(f"{S.shape[1]} snapshots but {targets.shape[0]} target rows")
    X = project_field(S, basis_ut).T
    if len(X) > 1 and pdist(X).min() <= DUPLICATE_TOL:
        raise DuplicateCenter("two predicted-velocity snapshots have identical coefficients")
    return TrainingTable(X, targets)


_MAGIC = b"RBFMDL01"


def save_model(path, model: RBFModel):
    n, d = model.centers.shape
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<BIII", MODES.index(model.mode), n, d, model.n_out))
        for arr in (model.lo, model.scale, model.centers, model.weights):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        fh.write(struct.pack("<dd", model.lam, model.cond))


def load_model(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != _MAGIC:
        raise ParseError(f"{path}: not an RBF model file")
    try:
        mode, n, d, m = struct.unpack_from("<BIII", raw, 8)
        off = 8 + struct.calcsize("<BIII")
        parts = []
        for count, shape in ((d, (d,)), (d, (d,)), (n * d, (n, d)), (n * m, (n, m))):
            parts.append(np.frombuffer(raw, "<f8", count, off).reshape(shape).copy())
            off += 8 * count
        lam, cond = struct.unpack_from("<dd", raw, off)
        if off + 16 != len(raw):
            raise ParseError(f"{path}: unexpected trailing data")
    except (struct.error, ValueError, IndexError) as exc:
        raise ParseError(f"{path}: corrupt RBF model ({exc})") from None
    lo, scale, centers, weights = parts
    return RBFModel(MODES[mode], centers, weights, lo, scale, lam, cond)
