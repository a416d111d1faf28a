"""Dense and banded symmetric linear algebra.

Factorizations are delegated to LAPACK through :mod:`scipy.linalg`
(``potrf`` for dense input, ``pbtrf`` when the matrix is banded with
bandwidth at most two).  The wrappers add the pivot tolerance used to tell a
genuinely singular Gram matrix apart from round-off, plus the spectral
helpers used by the convergence verifiers.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse

from .errors import DimensionMismatch, NoConvergence, NotPositiveDefinite

#: Matrices up to this dimension get exact eigen/singular value decompositions.
EXACT_LIMIT = 64
#: A pivot at or below ``PIVOT_RTOL * max(diag)`` counts as a failure.
PIVOT_RTOL = 1e-12
#: Largest bandwidth routed to the banded factorization.
MAX_BANDED = 2


def as_dense(m):
    """Return ``m`` as a 2-D float ndarray (sparse input is densified)."""
    if scipy.sparse.issparse(m):
        m = m.toarray()
    m = np.asarray(m, dtype=float)
    if m.ndim != 2:
        raise DimensionMismatch(f"expected a 2-D matrix, got shape {m.shape}")
    return m


@dataclass(frozen=True)
class SymmetricFactorization:
    """Cholesky factor of a symmetric positive-definite matrix.

    ``factor`` holds the dense lower-triangular factor when ``bandwidth`` is
    None, otherwise the lower factor in LAPACK banded storage of shape
    ``(bandwidth + 1, dimension)``.  The identity matrix is recognised and
    stored without a payload so that solves return the right-hand side
    untouched.
    """

    dimension: int
    bandwidth: int | None
    factor: np.ndarray | None
    identity: bool = False

    def reconstruct(self):
        """Rebuild the factored matrix (used for round-trip checks)."""
        n = self.dimension
        if self.identity:
            return np.eye(n)
        if self.bandwidth is None:
            return self.factor @ self.factor.T
        low = np.zeros((n, n))
        for offset in range(self.bandwidth + 1):
            idx = np.arange(n - offset)
            low[idx + offset, idx] = self.factor[offset, : n - offset]
        return low @ low.T


def bandwidth(m):
    """Largest ``|i - j|`` over the nonzero entries of a square matrix."""
    rows, cols = np.nonzero(m)
    if rows.size == 0:
        return 0
    return int(np.max(np.abs(rows - cols)))


def _check_symmetric(m):
    if m.shape[0] != m.shape[1]:
        raise DimensionMismatch(f"matrix must be square, got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    scale = np.max(np.abs(m)) if m.size else 0.0
    if np.max(np.abs(m - m.T)) > 1e-12 * max(scale, 1.0):
        raise ValueError("matrix is not symmetric")


def _pivot_failure(pivots, scale):
    bad = np.flatnonzero(pivots <= PIVOT_RTOL * scale)
    if bad.size:
        i = int(bad[0])
        raise NotPositiveDefinite(
            f"pivot {i} is {pivots[i]:.3e}, not positive definite", pivot_index=i
        )


def _diag_scale(diag):
    scale = float(np.max(diag)) if diag.size else 0.0
    if scale <= 0.0:
        raise NotPositiveDefinite("largest diagonal entry is not positive", 0)
    return scale


def _factorize_banded(diagonal, n, bw):
    # diagonal(k) returns the k-th diagonal of the matrix.
    scale = _diag_scale(diagonal(0))
    ab = np.zeros((bw + 1, n))
    for offset in range(bw + 1):
        ab[offset, : n - offset] = diagonal(-offset)
    try:
        cb = scipy.linalg.cholesky_banded(ab, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(f"banded factorization failed: {exc}") from None
    _pivot_failure(cb[0] ** 2, scale)
    return SymmetricFactorization(n, bw, cb)


def factorize_spd(m):
    """Factor a symmetric positive-definite matrix.

    Raises :class:`NotPositiveDefinite` when a pivot is non-positive or below
    ``PIVOT_RTOL`` times the largest diagonal entry.  Sparse input with
    bandwidth at most ``MAX_BANDED`` goes straight to banded storage.
    """
    if scipy.sparse.issparse(m):
        # Banded sparse input never has to be densified.
        m = scipy.sparse.csr_matrix(m, dtype=float)
        coo = m.tocoo()
        bw = int(np.max(np.abs(coo.row - coo.col))) if coo.nnz else 0
        if bw <= MAX_BANDED and m.shape[0] == m.shape[1]:
            if not np.all(np.isfinite(coo.data)):
                raise ValueError("matrix has non-finite entries")
            if abs(m - m.T).max() > 1e-12 * max(abs(m).max(), 1.0):
                raise ValueError("matrix is not symmetric")
            return _factorize_banded(m.diagonal, m.shape[0], bw)
    m = as_dense(m)
    _check_symmetric(m)
    n = m.shape[0]
    if np.array_equal(m, np.eye(n)):
        return SymmetricFactorization(n, 0, None, identity=True)

    bw = bandwidth(m)
    if bw <= MAX_BANDED:
        return _factorize_banded(lambda k: np.diagonal(m, k), n, bw)
    scale = _diag_scale(np.diag(m))
    try:
        low = scipy.linalg.cholesky(m, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(f"factorization failed: {exc}") from None
    _pivot_failure(np.diag(low) ** 2, scale)
    return SymmetricFactorization(n, None, low)


def solve_factored(f, r):
    """Solve ``m x = r`` given ``f = factorize_spd(m)``.

    ``r`` may be a vector or a matrix whose columns are separate right-hand
    sides.
    """
    r = np.asarray(r, dtype=float)
    if r.shape[0] != f.dimension:
        raise DimensionMismatch(
            f"right-hand side has length {r.shape[0]}, factor has dimension {f.dimension}"
        )
    if f.identity:
        return r.copy()
    if f.bandwidth is None:
        return scipy.linalg.cho_solve((f.factor, True), r, check_finite=False)
    return scipy.linalg.cho_solve_banded((f.factor, True), r, check_finite=False)


def frobenius_norm(m):
    if scipy.sparse.issparse(m):
        return float(np.sqrt(m.multiply(m).sum()))
    m = np.asarray(m, dtype=float)
    return float(np.sqrt(np.sum(m * m)))


def _unit_start(n, seed):
    v = np.random.default_rng(seed).standard_normal(n)
    return v / np.linalg.norm(v)


def spectral_norm(m, tol=1e-10, *, method="auto", max_iter=10_000, seed=0):
    """Largest singular value of ``m``.

    ``method="power"`` runs power iteration on ``m.T @ m`` until the relative
    change of the estimate drops below ``tol``; ``"exact"`` uses an SVD.
    ``"auto"`` picks the SVD for matrices no larger than ``EXACT_LIMIT``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if method == "auto":
        method = "exact" if max(np.shape(m)) <= EXACT_LIMIT else "power"
    if method == "exact":
        return float(np.linalg.norm(as_dense(m), 2))
    if method != "power":
        raise ValueError(f"unknown method {method!r}")

    v = _unit_start(np.shape(m)[1], seed)
    est = 0.0
    for _ in range(max_iter):
        w = m.T @ (m @ v)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        new = float(np.sqrt(nw))
        v = w / nw
        if abs(new - est) <= tol * new:
            return new
        est = new
    raise NoConvergence(f"power iteration did not converge in {max_iter} iterations")


@dataclass(frozen=True)
class SpectralEstimate:
    lambda_max: float
    lambda_min: float
    iterations_used: int
    converged: bool


def _rayleigh_iteration(apply, n, tol, max_iter, seed):
    # Power iteration on a symmetric operator; returns the dominant Rayleigh quotient.
    v = _unit_start(n, seed)
    est = None
    for it in range(1, max_iter + 1):
        w = apply(v)
        q = float(v @ w)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0, it, True
        v = w / nw
        if est is not None and abs(q - est) <= tol * abs(q):
            return q, it, True
        est = q
    return est, max_iter, False


def spectral_estimate(m, tol=1e-10, *, max_iter=20_000, seed=0):
    """Extreme eigenvalues of a symmetric positive-definite matrix.

    Small matrices use ``eigvalsh``.  Larger ones use power iteration for the
    top eigenvalue and inverse iteration (against one Cholesky factor) for the
    bottom one.
    """
    m = as_dense(m)
    _check_symmetric(m)
    n = m.shape[0]
    if n <= EXACT_LIMIT:
        w = np.linalg.eigvalsh(m)
        if w[0] <= 0:
            raise NotPositiveDefinite(f"smallest eigenvalue {w[0]:.3e} is not positive")
        return SpectralEstimate(float(w[-1]), float(w[0]), 0, True)

    f = factorize_spd(m)
    top, it_top, ok_top = _rayleigh_iteration(lambda v: m @ v, n, tol, max_iter, seed)
    inv, it_bot, ok_bot = _rayleigh_iteration(
        lambda v: solve_factored(f, v), n, tol, max_iter, seed + 1
    )
    return SpectralEstimate(top, 1.0 / inv, it_top + it_bot, ok_top and ok_bot)


def condition_number(m, tol=1e-10, *, seed=0):
    """Ratio of the extreme eigenvalues of an SPD matrix."""
    est = spectral_estimate(m, tol, seed=seed)
    if not est.converged:
        raise NoConvergence(
            f"eigenvalue iteration did not converge after {est.iterations_used} steps"
        )
    return est.lambda_max / est.lambda_min
