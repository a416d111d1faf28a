"""Constraint operators, preconditioner assembly and admissibility checks."""

from dataclasses import dataclass

import numpy as np

from . import numerics
from .basis import derivative_rows
from .errors import DimensionMismatch, NotAdmissible, SingularB

IDENTITY, DIAG, FULL = "identity", "diag", "full"
B_CHOICES = (IDENTITY, DIAG, FULL)


@dataclass(frozen=True)
class ConstraintOperator:
    """Soft-constraint operator ``D`` and its weight ``gamma``.

    ``kind`` is ``"first_difference"``, ``"derivative"`` or ``"none"``.
    """

    kind: str
    matrix: np.ndarray | None
    gamma: float = 0.0

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")

    @property
    def size(self):
        return None if self.matrix is None else self.matrix.shape[1]


def first_difference_operator(size):
    """``(size - 1) x size`` matrix with rows ``(-1, 1)`` on adjacent columns."""
    if size < 2:
        raise ValueError("first differences need at least two coefficients")
    d = np.zeros((size - 1, size))
    i = np.arange(size - 1)
    d[i, i] = -1.0
    d[i, i + 1] = 1.0
    return d


def first_difference(size, gamma=0.0):
    return ConstraintOperator("first_difference", first_difference_operator(size), gamma)


def derivative_constraint(basis, points, gamma=0.0):
    """Derivative rows at fixed points.

    The points must not change between steps when the operator feeds a
    preconditioner, since ``B + gamma C`` is factored once per run.
    """
    return ConstraintOperator("derivative", derivative_rows(basis, points), gamma)


def no_constraint():
    return ConstraintOperator("none", None, 0.0)


def constraint_gram(op, block_count=1):
    """Block-diagonal ``C`` with ``block_count`` copies of ``D^T D``."""
    if op.matrix is None:
        raise ValueError("constraint operator has no matrix")
    dtd = op.matrix.T @ op.matrix
    if block_count == 1:
        return dtd
    return np.kron(np.eye(block_count), dtd)


@dataclass(frozen=True)
class PreconditionerSpec:
    b: str = IDENTITY
    constraint: ConstraintOperator = no_constraint()
    block_count: int = 1

    def __post_init__(self):
        if self.b not in B_CHOICES:
            raise ValueError(f"b must be one of {B_CHOICES}, got {self.b!r}")
        if self.block_count < 1:
            raise ValueError("block_count must be at least 1")


@dataclass(frozen=True)
class RelativePDReport:
    admissible: bool
    min_quotient: float
    witness: np.ndarray | None
    mode: str

    def to_dict(self):
        return {
            "admissible": self.admissible,
            "min_quotient": self.min_quotient,
            "witness": None if self.witness is None else self.witness.tolist(),
            "mode": self.mode,
        }


@dataclass(frozen=True)
class PreconditionerFactor:
    """``B + gamma C`` factored once, with ``d = ||(B + gamma C)^{-1}||_F``."""

    spec: PreconditionerSpec
    gamma: float
    matrix: np.ndarray
    factor: numerics.SymmetricFactorization
    d: float
    admissibility: RelativePDReport | None = None

    @property
    def size(self):
        return self.factor.dimension

    @property
    def is_identity(self):
        return self.factor.identity

    def solve(self, r):
        return numerics.solve_factored(self.factor, r)

    def inverse(self):
        return self.solve(np.eye(self.size))


def b_matrix(spec, a_ref=None, size=None):
    if spec.b == IDENTITY:
        if size is None:
            size = a_ref.shape[0] if a_ref is not None else None
        if size is None:
            raise ValueError("identity preconditioner needs a size")
        return np.eye(size)
    if a_ref is None:
        raise ValueError(f"b={spec.b!r} needs a reference Gram matrix")
    a_ref = numerics.as_dense(a_ref)
    return np.diag(np.diag(a_ref)) if spec.b == DIAG else a_ref.copy()


def preconditioner_matrix(spec, gamma=None, a_ref=None, size=None):
    """Dense ``B + gamma C``."""
    gamma = spec.constraint.gamma if gamma is None else gamma
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    if size is None and spec.constraint.matrix is not None:
        size = spec.constraint.size * spec.block_count
    b = b_matrix(spec, a_ref, size)
    if spec.constraint.matrix is None or gamma == 0:
        return b
    c = constraint_gram(spec.constraint, spec.block_count)
    if c.shape != b.shape:
        raise DimensionMismatch(f"C is {c.shape} but B is {b.shape}")
    return b + gamma * c


def assemble_preconditioner(spec, gamma=None, a_ref=None, size=None):
    """Factor ``B + gamma C`` once and compute ``d``.

    When ``a_ref`` is given, the relative positive-definiteness of the
    assembled preconditioner with respect to it is recorded as well.
    """
    gamma = spec.constraint.gamma if gamma is None else float(gamma)
    mat = preconditioner_matrix(spec, gamma, a_ref, size)
    factor = numerics.factorize_spd(mat)
    # d from M unit-vector solves against the factor; no explicit inverse.
    d = numerics.frobenius_norm(numerics.solve_factored(factor, np.eye(factor.dimension)))
    report = None
    if a_ref is not None:
        report = check_relative_pd(mat, a_ref)
    return PreconditionerFactor(spec, gamma, mat, factor, d, report)


def _solver(b):
    b = numerics.as_dense(b)
    if b.shape[0] != b.shape[1]:
        raise DimensionMismatch("B must be square")
    if not np.all(np.isfinite(b)) or np.linalg.cond(b) > 1e14:
        raise SingularB("B is singular to working precision")
    try:
        f = numerics.factorize_spd(b)
        return lambda r: numerics.solve_factored(f, r)
    except (numerics.NotPositiveDefinite, ValueError):
        return lambda r: np.linalg.solve(b, r)


def _canonical_sign(x):
    x = x / np.linalg.norm(x)
    return -x if x[np.argmax(np.abs(x))] < 0 else x


def check_relative_pd(b, a, mode="auto", *, samples=10_000, refine=50, seed=0):
    """Minimum of ``x^T B^{-1} A x`` over unit vectors ``x``.

    ``mode="exact"`` takes the smallest eigenvalue of the symmetric part of
    ``B^{-1} A``; ``"sampled"`` minimises over random unit vectors and then
    refines the best one by Rayleigh-Ritz on a Krylov space of the symmetric
    part with at most ``refine`` vectors.
    ``"auto"`` is exact up to ``numerics.EXACT_LIMIT``.
    """
    a = numerics.as_dense(a)
    solve = _solver(b)
    n = a.shape[0]
    if mode == "auto":
        mode = "exact" if n <= numerics.EXACT_LIMIT else "sampled"

    if mode == "exact":
        m = solve(a)
        w, v = np.linalg.eigh((m + m.T) / 2)
        q, x = float(w[0]), _canonical_sign(v[:, 0])
        if q <= 0:
            # Report the quotient at the witness itself.
            q = float(x @ m @ x)
        return RelativePDReport(q > 0, q, x if q <= 0 else None, "exact")
    if mode != "sampled":
        raise ValueError(f"unknown mode {mode!r}")

    def sym(x):
        return 0.5 * (solve(a @ x) + a @ solve(x))

    rng = np.random.default_rng(seed)
    xs = rng.standard_normal((n, samples))
    xs /= np.linalg.norm(xs, axis=0)
    quotients = np.einsum("ij,ij->j", xs, sym(xs))
    x = xs[:, int(np.argmin(quotients))]
    # Refine with Rayleigh-Ritz on a Krylov space grown from the best sample.
    basis = [x]
    for _ in range(min(refine, n) - 1):
        w = sym(basis[-1])
        for _ in range(2):
            w = w - np.column_stack(basis) @ (np.column_stack(basis).T @ w)
        nw = np.linalg.norm(w)
        if nw <= 1e-12:
            break
        basis.append(w / nw)
    k = np.column_stack(basis)
    ritz, vecs = np.linalg.eigh(k.T @ sym(k))
    x = k @ vecs[:, 0]
    x /= np.linalg.norm(x)
    q = min(float(x @ sym(x)), float(np.min(quotients)))
    return RelativePDReport(q > 0, q, _canonical_sign(x) if q <= 0 else None, "sampled")


@dataclass(frozen=True)
class Lemma1Params:
    lambda_min: float
    lambda_max: float
    tau: float
    lam: float
    mu0: float
    gamma0: float
    gammas: tuple
    branch: str

    @property
    def contraction(self):
        """``1 - mu0 * lam``, the per-step factor at ``mu = mu0``."""
        return 1.0 - self.mu0 * self.lam

    def to_dict(self):
        return {k: getattr(self, k) for k in
                ("lambda_min", "lambda_max", "tau", "lam", "mu0", "gamma0", "branch")} | {
            "gammas": list(self.gammas), "contraction": self.contraction}


def step_parameters(lambda_min, lambda_max):
    """``tau``, ``lambda`` and ``mu0`` from the extreme quotients.

    Returns ``(tau, lam, mu0, branch)``.  ``tau < 1`` cannot occur in exact
    arithmetic (the minimum quotient never exceeds the operator norm), so
    values within 1e-9 of one are treated as one.
    """
    tau = lambda_max / lambda_min
    if 1 - 1e-9 < tau < 1:
        tau = 1.0
    if tau >= 1:
        s = np.sqrt(max(0.0, 1 - tau**-2))
        lam = lambda_max * (1 - s) * tau
        return tau, lam, 1 / (tau * lambda_max), "tau>=1"
    lam = lambda_max / 2
    return tau, lam, 8 * (2 - tau) / (3 * tau * lambda_max), "tau<1"


def _quotient_extremes(a, pmat):
    solve = _solver(pmat)
    n = a.shape[0]
    if n <= numerics.EXACT_LIMIT:
        m = solve(a)
        qmin = float(np.linalg.eigvalsh((m + m.T) / 2)[0])
        return qmin, float(np.linalg.norm(m, 2))
    qmin = check_relative_pd(pmat, a, "sampled").min_quotient
    m = solve(a)
    return qmin, numerics.spectral_norm(m)


def lemma1_params(a, b, c=None, gamma0=0.0, *, gammas=None, grid=11, halvings=20):
    """Contraction parameters for ``I - mu (B + gamma C)^{-1} A`` over a gamma range.

    With ``gammas=None`` the range ``[0, gamma0]`` is sampled on ``grid``
    points and ``gamma0`` is halved (up to ``halvings`` times) until every
    grid point is admissible.  An explicit ``gammas`` list is used as is.
    """
    a = numerics.as_dense(a)
    b = numerics.as_dense(b)
    c = np.zeros_like(a) if c is None else numerics.as_dense(c)

    def scan(gs):
        lo, hi = np.inf, 0.0
        for g in gs:
            qmin, norm = _quotient_extremes(a, b + g * c)
            if qmin <= 0:
                return None, qmin
            lo, hi = min(lo, qmin), max(hi, norm)
        return (lo, hi), None

    if gammas is not None:
        gs = tuple(float(g) for g in gammas)
        ext, bad = scan(gs)
        if ext is None:
            raise NotAdmissible(f"min quotient {bad:.3e} <= 0 on the gamma grid", bad)
    else:
        for _ in range(halvings + 1):
            gs = tuple(np.linspace(0.0, gamma0, grid)) if gamma0 > 0 else (0.0,)
            ext, bad = scan(gs)
            if ext is not None:
                break
            if gamma0 == 0:
                break
            gamma0 /= 2
        if ext is None:
            raise NotAdmissible(f"min quotient {bad:.3e} <= 0; shrink gamma0", bad)
    lo, hi = ext
    tau, lam, mu0, branch = step_parameters(lo, hi)
    return Lemma1Params(lo, hi, tau, lam, mu0, max(gs), gs, branch)
