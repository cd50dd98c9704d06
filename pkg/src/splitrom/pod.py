"""Proper orthogonal decomposition by the method of snapshots."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, InvalidInput, ParseError, RankExceeded
from .fom import BASIS_ID_OFFSET, FIELD_IDS, read_snapshot_file, write_snapshot_file

RANK_CUTOFF = 1e-12
JACOBI_MAX_N = 128  # "auto" switches to LAPACK above this size


@dataclass(frozen=True)
class InnerProduct:
    kind: str  # "L2" or "H1"
    gram: object  # sparse SPD matrix

    def __post_init__(self):
        if self.kind not in ("L2", "H1"):
            raise InvalidInput(f"unknown inner product {self.kind!r}")

    def __call__(self, a, b):
        return a.T @ (self.gram @ b)


@dataclass
class PODBasis:
    modes: np.ndarray  # (ndof, r), orthonormal in ``ip``
    eigenvalues: np.ndarray  # all correlation eigenvalues, descending
    ip: InnerProduct
    field: str = ""

    @property
    def r(self):
        return self.modes.shape[1]

    @property
    def rank(self):
        return numerical_rank(self.eigenvalues)

    def truncate(self, r):
        if r > self.r:
            raise RankExceeded(f"basis has {self.r} modes, {r} requested")
        return PODBasis(self.modes[:, :r].copy(), self.eigenvalues, self.ip, self.field)

    def project(self, field):
        return project_field(field, self)

    def reconstruct(self, coefs):
        return self.modes @ coefs

    def orthonormality_error(self):
        return float(np.abs(self.ip(self.modes, self.modes) - np.eye(self.r)).max()) if self.r else 0.0


def build_correlation(snapshots, ip: InnerProduct):
    """Snapshot correlation matrix K_ij = (s_i, s_j) in the given inner product."""
    S = np.atleast_2d(np.asarray(snapshots, dtype=float))
    if S.shape[1] < 1:
        raise DimensionMismatch("need at least one snapshot")
    if ip.gram.shape[0] != S.shape[0]:
        raise DimensionMismatch(f"Gram matrix is {ip.gram.shape}, snapshots have {S.shape[0]} dofs")
    K = S.T @ (ip.gram @ S)
    return 0.5 * (K + K.T)


def _round_robin(n):
    """Rounds of disjoint index pairs covering every pair once (n even)."""
    players = list(range(n))
    rounds = []
    for _ in range(n - 1):
        half = n // 2
        rounds.append((np.array(players[:half]), np.array(players[n - 1:half - 1:-1])))
        players = [players[0], players[-1], *players[1:-1]]
    return rounds


def _jacobi(K, tol=1e-14, max_sweeps=60):
    n = K.shape[0]
    m = n + (n % 2)
    A = np.zeros((m, m))
    A[:n, :n] = K
    V = np.eye(m)
    target = tol * np.linalg.norm(K)
    rounds = _round_robin(m)
    for _ in range(max_sweeps):
        if np.linalg.norm(A - np.diag(np.diag(A))) <= target:
            break
        for p, q in rounds:
            apq = A[p, q]
            app, aqq = A[p, p], A[q, q]
            active = np.abs(apq) > 1e-300
            tau = np.where(active, (aqq - app) / (2.0 * np.where(active, apq, 1.0)), 0.0)
            t = np.where(tau >= 0, 1.0, -1.0) / (np.abs(tau) + np.hypot(1.0, tau))
            t = np.where(active, t, 0.0)
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = t * c
            Ap, Aq = A[p].copy(), A[q].copy()
            A[p] = c[:, None] * Ap - s[:, None] * Aq
            A[q] = s[:, None] * Ap + c[:, None] * Aq
            Ap, Aq = A[:, p].copy(), A[:, q].copy()
            A[:, p] = Ap * c - Aq * s
            A[:, q] = Ap * s + Aq * c
            Vp, Vq = V[:, p].copy(), V[:, q].copy()
            V[:, p] = Vp * c - Vq * s
            V[:, q] = Vp * s + Vq * c
    else:
        raise InvalidInput("Jacobi iteration did not converge")
    return np.diag(A)[:n].copy(), V[:n, :n].copy()


def eig_sym(K, method="auto", sym_tol=1e-10):
    """Eigenvalues (descending) and orthonormal eigenvectors of a symmetric matrix.

    ``method`` is "jacobi" (parallel-ordered cyclic Jacobi rotations),
    "lapack" (numpy.linalg.eigh) or "auto" (Jacobi up to JACOBI_MAX_N).
    Each eigenvector is signed so its largest-magnitude entry is positive.
    """
    K = np.asarray(K, dtype=float)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise InvalidInput("eig_sym needs a square matrix")
    scale = np.abs(K).max() if K.size else 0.0
    if K.size and np.abs(K - K.T).max() > sym_tol * max(scale, 1e-300):
        raise InvalidInput("matrix is not symmetric")
    if method == "auto":
        method = "jacobi" if K.shape[0] <= JACOBI_MAX_N else "lapack"
    if method == "jacobi":
        w, V = _jacobi(0.5 * (K + K.T))
    elif method == "lapack":
        w, V = np.linalg.eigh(0.5 * (K + K.T))
    else:
        raise InvalidInput(f"unknown eigen-solver {method!r}")
    order = np.argsort(-w, kind="stable")
    w, V = w[order], V[:, order]
    if V.size:
        lead = np.argmax(np.abs(V) - 1e-12 * np.arange(V.shape[0])[:, None], axis=0)
        V = V * np.sign(V[lead, np.arange(V.shape[1])])
    return w, V


def numerical_rank(eigenvalues, cutoff=RANK_CUTOFF):
    lam = np.asarray(eigenvalues)
    if lam.size == 0 or lam[0] <= 0:
        return 0
    return int(np.sum(lam > cutoff * lam[0]))


def _orthonormalize(modes, gram):
    """Classical Gram-Schmidt with reorthogonalization in the ``gram`` inner product."""
    Q = modes.copy()
    for j in range(Q.shape[1]):
        for _ in range(2):
            Gq = gram @ Q[:, j]
            Q[:, j] -= Q[:, :j] @ (Q[:, :j].T @ Gq)
        Q[:, j] /= np.sqrt(Q[:, j] @ (gram @ Q[:, j]))
    return Q


def build_modes(snapshots, eig, ip: InnerProduct, r, field="", orthonormalize=True):
    """Modes ``S a_i / sqrt(lambda_i)`` for the leading ``r`` eigenpairs.

    A Gram-Schmidt pass in ``ip`` removes the loss of orthogonality that
    small eigenvalues cause in finite precision; it does not change the
    spanned spaces.
    """
    lam, vecs = eig
    S = np.atleast_2d(np.asarray(snapshots, dtype=float))
    rank = numerical_rank(lam)
    if r > rank:
        raise RankExceeded(f"{r} modes requested, numerical rank is {rank}")
    modes = S @ (vecs[:, :r] / np.sqrt(lam[:r]))
    if orthonormalize and r:
        modes = _orthonormalize(modes, ip.gram)
    return PODBasis(modes, np.asarray(lam, dtype=float), ip, field)


def pod(snapshots, ip: InnerProduct, r=None, field="", method="auto"):
    """Correlation, eigendecomposition and modes in one call; ``r=None`` keeps the numerical rank."""
    lam, vecs = eig_sym(build_correlation(snapshots, ip), method)
    if r is None:
        r = numerical_rank(lam)
    return build_modes(snapshots, (lam, vecs), ip, r, field)


def energy_ratio(eigenvalues, r):
    """Percentage of the eigenvalue sum captured by the first ``r`` eigenvalues."""
    lam = np.clip(np.asarray(eigenvalues, dtype=float), 0.0, None)
    if r > lam.size:
        raise RankExceeded(f"r = {r} exceeds the {lam.size} eigenvalues")
    # sequential prefix sums keep the curve monotone in floating point
    partial = np.cumsum(lam)
    if partial.size == 0 or partial[-1] == 0:
        return 100.0
    return float(min(100.0, 100.0 * partial[r - 1] / partial[-1])) if r else 0.0


def modes_for_energy(eigenvalues, percent):
    """Smallest r whose energy ratio reaches ``percent``."""
    lam = np.clip(np.asarray(eigenvalues, dtype=float), 0.0, None)
    curve = 100.0 * np.cumsum(lam) / lam.sum()
    return int(np.searchsorted(curve, percent - 1e-12) + 1)


def project_field(field, basis: PODBasis):
    """Coefficients (field, mode_i) in the basis inner product."""
    f = np.asarray(field, dtype=float)
    if f.shape[0] != basis.modes.shape[0]:
        raise DimensionMismatch(f"field has {f.shape[0]} dofs, basis {basis.modes.shape[0]}")
    return basis.modes.T @ (basis.ip.gram @ f)


_IP_CODES = {"L2": 0.0, "H1": 1.0}


def save_basis(path, basis: PODBasis):
    """Store in the snapshot container: columns are modes, the parameter slot holds the
    inner-product code (0 = L2, 1 = H1) and all eigenvalues are appended."""
    fid = BASIS_ID_OFFSET + FIELD_IDS[basis.field]
    write_snapshot_file(path, fid, basis.modes, np.arange(1, basis.r + 1, dtype=float),
                        _IP_CODES[basis.ip.kind], basis.eigenvalues)


def load_basis(path, gram):
    fid, _, code, modes, lam = read_snapshot_file(path)
    names = {BASIS_ID_OFFSET + v: k for k, v in FIELD_IDS.items()}
    if fid not in names:
        raise ParseError(f"{path}: field id {fid} is not a basis")
    kind = {v: k for k, v in _IP_CODES.items()}.get(code)
    if kind is None:
        raise ParseError(f"{path}: unknown inner-product code {code}")
    return PODBasis(modes, lam, InnerProduct(kind, gram), names[fid])
