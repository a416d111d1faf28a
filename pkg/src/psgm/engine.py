"""The preconditioned stochastic gradient iteration and run orchestration."""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse

from . import numerics
from .basis import eval_design_matrix
from .errors import DimensionMismatch, NonFiniteUpdate, NotAdmissible
from .regularization import assemble_preconditioner, constraint_gram
from .sampling import draw_batch, observe

#: Above this many coefficients the batch Gram is only applied, never formed.
MATERIALIZE_LIMIT = 512


@dataclass(frozen=True)
class Constant:
    mu: float
    kind = "constant"

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError("step size must be positive")

    def value(self, k):
        return self.mu

    # Summability flags used when checking the mean-square convergence hypotheses.
    diverges = True
    square_summable = False


@dataclass(frozen=True)
class InverseDecay:
    """``mu_k = 1 / (lambda0 (k - 1) + 1 / mu_hat0)``."""

    lambda0: float
    mu_hat0: float
    kind = "inverse_decay"
    diverges = True
    square_summable = True

    def __post_init__(self):
        if not (self.lambda0 > 0 and self.mu_hat0 > 0):
            raise ValueError("lambda0 and mu_hat0 must be positive")

    def value(self, k):
        return 1.0 / (self.lambda0 * (k - 1) + 1.0 / self.mu_hat0)


@dataclass(frozen=True)
class SwitchAt:
    """Constant ``mu0`` up to step ``switch``, then ``1 / (k - switch)``."""

    mu0: float
    switch: int
    kind = "switch"
    diverges = True
    square_summable = True

    def __post_init__(self):
        if not self.mu0 > 0 or self.switch < 0:
            raise ValueError("need mu0 > 0 and switch >= 0")

    def value(self, k):
        return self.mu0 if k <= self.switch else 1.0 / (k - self.switch)


def schedule_value(schedule, k):
    if k < 1:
        raise ValueError("steps are numbered from 1")
    return schedule.value(k)


@dataclass(frozen=True)
class IterationState:
    k: int
    u: np.ndarray


@dataclass(frozen=True)
class BatchStatistics:
    """Batch Gram ``A_k``, moment ``b^k`` and residual ``r^k = y - Phi u_prev``.

    ``gram`` is an explicit matrix, a callable applying ``A_k``, or None (then
    products are formed from ``design``).  ``scale`` is ``1/N`` in the
    normalised convention and 1 otherwise.
    """

    gram: object
    moment: np.ndarray
    residual: np.ndarray
    design: object = None
    scale: float = 1.0

    @property
    def size(self):
        return self.moment.shape[0]

    def apply_gram(self, u):
        if self.gram is None:
            return self.scale * (self.design.T @ (self.design @ u))
        if callable(self.gram):
            return self.gram(u)
        return self.gram @ u

    def gradient(self, u):
        """``b^k - A_k u``."""
        return self.moment - self.apply_gram(u)


def batch_statistics(design, y, u_prev, normalized=True, materialize=None):
    y = np.asarray(y, dtype=float)
    u_prev = np.asarray(u_prev, dtype=float)
    n, m = design.shape
    if y.shape != (n,) or u_prev.shape != (m,):
        raise DimensionMismatch(
            f"design is {design.shape}, outputs {y.shape}, coefficients {u_prev.shape}"
        )
    scale = 1.0 / n if normalized else 1.0
    if materialize is None:
        materialize = m <= MATERIALIZE_LIMIT
    gram = None
    if materialize:
        gram = design.T @ design * scale
        if scipy.sparse.issparse(gram):
            gram = gram.toarray()
        gram = np.asarray(gram)
    moment = np.asarray(design.T @ y).reshape(-1) * scale
    residual = y - np.asarray(design @ u_prev).reshape(-1)
    return BatchStatistics(gram, moment, residual, design, scale)


def psgm_step(state, stats, precond, mu):
    """``u^k = u^{k-1} + mu (B + gamma C)^{-1} (b^k - A_k u^{k-1})``."""
    if not mu > 0:
        raise ValueError("step size must be positive")
    if stats.size != state.u.shape[0] or precond.size != state.u.shape[0]:
        raise DimensionMismatch("state, statistics and preconditioner sizes differ")
    # Overflow is reported as NonFiniteUpdate below rather than as a warning.
    with np.errstate(over="ignore", invalid="ignore"):
        u = state.u + mu * precond.solve(stats.gradient(state.u))
    if not np.all(np.isfinite(u)):
        raise NonFiniteUpdate(f"non-finite coefficients at step {state.k + 1}")
    return IterationState(state.k + 1, u)


def batch_least_squares(stats, constraint=None, gamma=0.0, u_prev=None, block_count=1):
    """Full per-batch solve ``u_prev + (A_k + gamma C)^{-1} (b^k - A_k u_prev)``."""
    m = stats.size
    u_prev = np.zeros(m) if u_prev is None else np.asarray(u_prev, dtype=float)
    gram = stats.gram if isinstance(stats.gram, np.ndarray) else (
        stats.apply_gram(np.eye(m)))
    mat = np.array(gram, dtype=float)
    if constraint is not None and constraint.matrix is not None and gamma > 0:
        mat = mat + gamma * constraint_gram(constraint, block_count)
    f = numerics.factorize_spd(mat)
    return u_prev + numerics.solve_factored(f, stats.gradient(u_prev))


@dataclass(frozen=True)
class EvaluationSet:
    """Fixed held-out samples for the error-in-dB metric."""

    design: object
    outputs: np.ndarray

    @classmethod
    def draw(cls, process, target, basis, n, seed):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xE7A1]))
        inputs, outputs = observe(process, target, rng, n, basis.lead, basis.lag)
        return cls(basis.design(inputs, basis.lead, n), np.asarray(outputs))

    def error_db(self, u):
        # A diverging iterate yields inf dB instead of a warning.
        with np.errstate(over="ignore", invalid="ignore"):
            e = self.outputs - np.asarray(self.design @ u).reshape(-1)
            return float(10 * np.log10(np.sum(e * e) / np.sum(self.outputs**2)))


@dataclass(frozen=True)
class StepRecord:
    k: int
    mu: float
    residual_norm: float
    relative_error: float = math.nan
    error_db: float = math.nan


@dataclass
class RunTrace:
    records: list = field(default_factory=list)
    final: IterationState | None = None
    warnings: list = field(default_factory=list)
    precond: object = None
    totals: tuple | None = None

    def column(self, name):
        return np.array([getattr(r, name) for r in self.records])


@dataclass(frozen=True)
class RunConfig:
    process: object
    target: object
    basis: object
    preconditioner: object
    schedule: object
    n: int
    steps: int
    seed: int = 0
    oracle: object = None
    a_ref: object = None
    u0: object = None
    evaluation: EvaluationSet | None = None
    normalized: bool = True
    allow_inadmissible: bool = False
    accumulate: bool = False


def _reference_gram(config):
    if config.a_ref is not None:
        return numerics.as_dense(config.a_ref)
    if config.oracle is not None:
        return config.oracle.A
    return None


def prepare_preconditioner(config):
    """Assemble the run's preconditioner and enforce admissibility."""
    a_ref = _reference_gram(config)
    precond = assemble_preconditioner(config.preconditioner, a_ref=a_ref,
                                      size=config.basis.size)
    warnings = []
    report = precond.admissibility
    if report is not None and not report.admissible:
        msg = f"preconditioner not admissible (min quotient {report.min_quotient:.3e})"
        if not config.allow_inadmissible:
            raise NotAdmissible(msg, report.min_quotient, report.witness)
        warnings.append(msg)
    return precond, warnings


def run(config):
    """Run the iteration for ``config.steps`` batches and record a trace.

    Errors raised by a step propagate with the partial trace attached as the
    exception's ``trace`` attribute.
    """
    precond, warnings = prepare_preconditioner(config)
    basis = config.basis
    process = replace(config.process, seed=config.seed)
    u = np.zeros(basis.size) if config.u0 is None else np.array(config.u0, dtype=float)
    state = IterationState(0, u)
    trace = RunTrace(final=state, warnings=warnings, precond=precond)
    if config.accumulate:
        trace.totals = (np.zeros((basis.size, basis.size)), np.zeros(basis.size), 0)

    for k in range(1, config.steps + 1):
        try:
            batch = draw_batch(process, config.target, config.n, k, basis.lead, basis.lag)
            design = eval_design_matrix(basis, batch)
            stats = batch_statistics(design, batch.outputs, state.u, config.normalized)
            mu = schedule_value(config.schedule, k)
            state = psgm_step(state, stats, precond, mu)
        except Exception as exc:
            exc.trace = trace
            raise
        if config.accumulate:
            g, b, cnt = trace.totals
            gram = design.T @ design
            g += gram.toarray() if scipy.sparse.issparse(gram) else gram
            b += np.asarray(design.T @ batch.outputs).reshape(-1)
            trace.totals = (g, b, cnt + batch.n)
        rel = math.nan
        if config.oracle is not None:
            rel = config.oracle.relative_error(state.u)
        edb = math.nan if config.evaluation is None else config.evaluation.error_db(state.u)
        trace.records.append(
            StepRecord(k, mu, float(np.linalg.norm(stats.residual)), rel, edb)
        )
        trace.final = state
    return trace


def geometric_checkpoints(steps):
    """``1, 2, 5, 10, 20, 50, ...`` up to and including ``steps``."""
    out, decade = [], 1
    while decade <= steps:
        out.extend(c * decade for c in (1, 2, 5) if c * decade <= steps)
        decade *= 10
    if not out or out[-1] != steps:
        out.append(steps)
    return out


REPLICA_CHUNK = 64


def _run_chunk(config, precond, replicas, checkpoints, rng):
    basis, target = config.basis, config.target
    m, n = basis.size, config.n
    u = np.zeros((replicas, m)) if config.u0 is None else np.tile(config.u0, (replicas, 1))
    scale = 1.0 / n if config.normalized else 1.0
    wanted = set(checkpoints)
    out = {}
    for k in range(1, max(checkpoints) + 1):
        x, y = observe(config.process, target, rng, n, shape=(replicas,))
        phi = basis.values(x.reshape(-1)).reshape(replicas, n, m)
        resid = y - np.matmul(phi, u[:, :, None])[:, :, 0]
        grad = np.matmul(resid[:, None, :], phi)[:, 0, :] * scale
        u = u + schedule_value(config.schedule, k) * precond.solve(grad.T).T
        if not np.all(np.isfinite(u)):
            raise NonFiniteUpdate(f"non-finite coefficients at step {k}")
        if k in wanted:
            out[k] = u.copy()
    return out


def run_replicas(config, replicas, checkpoints, threads=1, precond=None):
    """Independent replicas of a run, returning ``{k: U}`` with one row per replica.

    Replicas are processed in fixed chunks of ``REPLICA_CHUNK``, each with its
    own ``SeedSequence([seed, chunk])`` generator, so the result does not
    depend on ``threads``.  Only memoryless bases and targets are vectorised.
    """
    if config.basis.lead or config.basis.lag or config.target.halfwidth:
        raise NotImplementedError("replica ensembles need a memoryless basis and target")
    if precond is None:
        precond, _ = prepare_preconditioner(config)
    checkpoints = sorted(set(int(c) for c in checkpoints))
    sizes = [min(REPLICA_CHUNK, replicas - i) for i in range(0, replicas, REPLICA_CHUNK)]

    def job(i):
        rng = np.random.default_rng(np.random.SeedSequence([int(config.seed), i, 0x5E9]))
        return _run_chunk(config, precond, sizes[i], checkpoints, rng)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(job, range(len(sizes))))
    else:
        parts = [job(i) for i in range(len(sizes))]
    return {k: np.vstack([p[k] for p in parts]) for k in checkpoints}
