"""Basis-function families and design matrices.

Four families are provided: plain monomials, polynomials orthonormal with
respect to an empirical sample set, piecewise-constant look-up tables and
memory-tapped combinations of an inner family.  LUT-based families produce
``scipy.sparse`` CSR design matrices (one nonzero per tap and row); the
polynomial families produce dense arrays.
"""

import numpy as np
import scipy.sparse

from .errors import DegenerateSamples, DimensionMismatch, EmptyBatch, UnsupportedFamily


class Basis:
    """Common interface: ``size`` functions on the interval ``[lo, hi]``."""

    kind = "abstract"
    size: int
    lo: float
    hi: float

    #: Samples needed before / after the current one (non-zero only with taps).
    lead = 0
    lag = 0

    def values(self, x):
        """Matrix of basis values, one row per point of ``x``."""
        raise NotImplementedError

    def derivatives(self, z):
        raise UnsupportedFamily(f"{self.kind} basis has no derivative rows")

    def design(self, stream, lead=0, n=None):
        """Design matrix for samples ``stream[lead:lead + n]``.

        Memoryless families ignore the surrounding context.
        """
        stream = np.asarray(stream, dtype=float)
        if n is None:
            n = stream.shape[0] - lead
        return self.values(stream[lead : lead + n])

    @property
    def window(self):
        """Length of the input window seen by one output sample."""
        return self.lead + self.lag + 1


class Monomial(Basis):
    """``1, x, x**2, ...`` up to degree ``size - 1``."""

    kind = "monomial"

    def __init__(self, size, lo=0.0, hi=1.0):
        if size < 1:
            raise ValueError("size must be at least 1")
        self.size, self.lo, self.hi = int(size), float(lo), float(hi)

    def values(self, x):
        x = np.asarray(x, dtype=float).reshape(-1)
        return x[:, None] ** np.arange(self.size)

    def derivatives(self, z):
        z = np.asarray(z, dtype=float).reshape(-1)
        powers = np.arange(self.size)
        out = np.zeros((z.size, self.size))
        out[:, 1:] = powers[1:] * z[:, None] ** (powers[1:] - 1)
        return out


class OrthogonalPoly(Basis):
    """Polynomials orthonormal under the empirical inner product of a sample set.

    Built by Arnoldi-style Gram-Schmidt (two passes) on the sequence
    ``t * p_j`` with ``t = (x - center) / scale``.  This spans the same spaces
    as the monomials but stays orthogonal to machine precision far past the
    degree where orthogonalising raw monomials breaks down.  Evaluation reuses
    the stored recurrence ``hess``; ``coefficients`` exposes the equivalent
    lower-triangular table in powers of ``t``.
    """

    kind = "orthogonal"

    def __init__(self, center, scale, hess, lo, hi):
        self.center = float(center)
        self.scale = float(scale)
        self.hess = np.asarray(hess, dtype=float)
        self.size = self.hess.shape[0]
        self.lo, self.hi = float(lo), float(hi)

    @classmethod
    def fit(cls, samples, max_degree, lo=None, hi=None):
        samples = np.asarray(samples, dtype=float).reshape(-1)
        if max_degree < 0:
            raise ValueError("max_degree must be non-negative")
        if samples.size < 100 * max(max_degree, 1):
            raise ValueError(
                f"need at least {100 * max(max_degree, 1)} samples, got {samples.size}"
            )
        size = max_degree + 1
        center = float(np.mean(samples))
        scale = float(np.std(samples))
        if size > 1 and not scale > 0:
            raise DegenerateSamples("all samples are equal; moment matrix is singular")
        scale = scale if scale > 0 else 1.0
        t = (samples - center) / scale

        q = np.empty((samples.size, size))
        q[:, 0] = 1.0
        hess = np.zeros((size, max(size - 1, 0)))
        for j in range(1, size):
            v = t * q[:, j - 1]
            ref = np.sqrt(np.mean(v * v))
            for _ in range(2):
                h = q[:, :j].T @ v / samples.size
                v -= q[:, :j] @ h
                hess[:j, j - 1] += h
            nrm = np.sqrt(np.mean(v * v))
            if not nrm > 1e-10 * ref:
                raise DegenerateSamples(
                    f"samples support fewer than {size} distinct points"
                )
            hess[j, j - 1] = nrm
            q[:, j] = v / nrm
        lo = float(samples.min()) if lo is None else lo
        hi = float(samples.max()) if hi is None else hi
        return cls(center, scale, hess, lo, hi)

    def _recur(self, x, derivative=False):
        t = (np.asarray(x, dtype=float).reshape(-1) - self.center) / self.scale
        # Rows are functions here so each recurrence step reads contiguous memory.
        p = np.empty((self.size, t.size))
        dp = np.zeros((self.size, t.size))
        p[0] = 1.0
        for j in range(1, self.size):
            h = self.hess[:j, j - 1]
            np.multiply(t, p[j - 1], out=p[j])
            p[j] -= h @ p[:j]
            p[j] /= self.hess[j, j - 1]
            if derivative:
                dp[j] = (p[j - 1] + t * dp[j - 1] - h @ dp[:j]) / self.hess[j, j - 1]
        return p.T, dp.T / self.scale

    def values(self, x):
        return self._recur(x)[0]

    def derivatives(self, z):
        return self._recur(z, derivative=True)[1]

    @property
    def coefficients(self):
        """Row ``j`` holds the coefficients of ``p_j`` in ``1, t, t**2, ...``."""
        c = np.zeros((self.size, self.size))
        c[0, 0] = 1.0
        for j in range(1, self.size):
            shifted = np.roll(c[j - 1], 1)
            shifted[0] = 0.0
            c[j] = (shifted - self.hess[:j, j - 1] @ c[:j]) / self.hess[j, j - 1]
        return c


class PiecewiseConstant(Basis):
    """Indicator functions of ``size`` uniform bins on ``[lo, hi]``.

    Bins are right-closed, ``[X_{j-1}, X_j]``, so a point on an interior edge
    belongs to the bin on its left.  Points outside the domain are clamped.
    """

    kind = "lut"

    def __init__(self, size, lo=0.0, hi=1.0):
        if size < 1:
            raise ValueError("size must be at least 1")
        if not hi > lo:
            raise ValueError("need hi > lo")
        self.size, self.lo, self.hi = int(size), float(lo), float(hi)
        self.edges = np.linspace(self.lo, self.hi, self.size + 1)

    def bin_index(self, x):
        x = np.clip(np.asarray(x, dtype=float).reshape(-1), self.lo, self.hi)
        idx = np.searchsorted(self.edges, x, side="left") - 1
        return np.clip(idx, 0, self.size - 1)

    def values(self, x, weights=None):
        idx = self.bin_index(x)
        data = np.ones(idx.size) if weights is None else np.asarray(weights, float)
        return scipy.sparse.csr_matrix(
            (data, (np.arange(idx.size), idx)), shape=(idx.size, self.size)
        )


class MemoryTapped(Basis):
    """Copies of an inner family evaluated at time-shifted samples.

    Column block ``i`` belongs to tap offset ``offsets[i]`` and is evaluated at
    ``x[n - offsets[i]]``.  With ``gain=True`` each block is additionally
    multiplied by that same sample, giving the gain-LUT form
    ``sum_t x[n-t] * Phi_t(x[n-t])``; ``gain=False`` is the plain shifted basis.
    """

    kind = "tapped"

    def __init__(self, inner, offsets=(-2, -1, 0, 1, 2), gain=True):
        if not offsets:
            raise ValueError("need at least one tap")
        if len(set(offsets)) != len(offsets):
            raise ValueError("tap offsets must be distinct")
        self.inner = inner
        self.offsets = tuple(int(t) for t in offsets)
        self.gain = bool(gain)
        self.size = len(self.offsets) * inner.size
        self.lo, self.hi = inner.lo, inner.hi
        self.lead = max(0, max(self.offsets))
        self.lag = max(0, -min(self.offsets))

    @property
    def taps(self):
        return len(self.offsets)

    def design(self, stream, lead=None, n=None):
        stream = np.asarray(stream, dtype=float)
        lead = self.lead if lead is None else lead
        if n is None:
            n = stream.shape[0] - lead - self.lag
        if lead < self.lead or lead + n + self.lag > stream.shape[0]:
            raise DimensionMismatch("stream lacks the context samples required by the taps")
        blocks = []
        for t in self.offsets:
            xt = stream[lead - t : lead - t + n]
            if isinstance(self.inner, PiecewiseConstant):
                blocks.append(self.inner.values(xt, weights=xt if self.gain else None))
            else:
                v = self.inner.values(xt)
                blocks.append(v * xt[:, None] if self.gain else v)
        if scipy.sparse.issparse(blocks[0]):
            return scipy.sparse.hstack(blocks, format="csr")
        return np.hstack(blocks)

    def values(self, windows):
        """Rows for an array of windows, each of length ``self.window``."""
        windows = np.atleast_2d(np.asarray(windows, dtype=float))
        if windows.shape[1] != self.window:
            raise DimensionMismatch(f"windows must have length {self.window}")
        rows = [self.design(w, self.lead, 1) for w in windows]
        if scipy.sparse.issparse(rows[0]):
            return scipy.sparse.vstack(rows, format="csr")
        return np.vstack(rows)


def eval_design_matrix(basis, batch):
    """Design matrix ``[phi_j(x_i)]`` for a :class:`~psgm.sampling.SampleBatch`."""
    if batch.n == 0:
        raise EmptyBatch("batch has no samples")
    if basis.lead > batch.lead or basis.lag > batch.lag:
        raise DimensionMismatch(
            f"basis needs lead={basis.lead}, lag={basis.lag}; batch provides "
            f"lead={batch.lead}, lag={batch.lag}"
        )
    return basis.design(batch.inputs, batch.lead, batch.n)


def eval_function(basis, u, x):
    """Value of ``Phi(x) . u`` at a point (or a window, for tapped bases)."""
    u = np.asarray(u, dtype=float)
    if u.shape != (basis.size,):
        raise DimensionMismatch(f"coefficient vector must have length {basis.size}")
    if isinstance(basis, MemoryTapped):
        return float((basis.values(np.asarray(x, dtype=float)[None, :]) @ u)[0])
    out = np.asarray(basis.values(np.atleast_1d(x)) @ u)
    return float(out[0]) if np.ndim(x) == 0 else out


def build_orthogonal_polys(samples, max_degree, lo=None, hi=None):
    """Orthonormal polynomials of degree ``0 .. max_degree`` for a sample set."""
    return OrthogonalPoly.fit(samples, max_degree, lo, hi)


def derivative_rows(basis, points):
    """Matrix ``[phi_j'(z_i)]`` for polynomial families."""
    if not isinstance(basis, (Monomial, OrthogonalPoly)):
        raise UnsupportedFamily(f"derivatives are undefined for {basis.kind} bases")
    return basis.derivatives(points)


def constraint_points(max_sample, hi=1.0, count=8):
    """``count`` equally spaced points in the half-open interval ``(max_sample, hi]``."""
    if not hi > max_sample:
        return np.full(count, float(hi))
    return max_sample + (hi - max_sample) * np.arange(1, count + 1) / count
