"""Best-approximation oracles, covariance diagnostics and convergence verifiers."""

import itertools
from dataclasses import dataclass, field

import numpy as np
import scipy.integrate
import scipy.sparse

from . import numerics
from .engine import Constant, RunConfig, run, run_replicas, schedule_value
from .errors import DimensionMismatch, NotAdmissible, ZeroOracle
from .regularization import (
    FULL,
    PreconditionerSpec,
    b_matrix,
    check_relative_pd,
    constraint_gram,
    first_difference_operator,
    lemma1_params,
    preconditioner_matrix,
)
from .sampling import Discrete, FixedDesign, GaussianMixture, Uniform, observe


@dataclass(frozen=True)
class OracleSolution:
    """Large-sample (or exact) solution of ``A u = b``.

    ``se`` holds per-coordinate standard errors of ``u_hat`` (zeros for
    quadrature oracles).
    """

    u_hat: np.ndarray
    A: np.ndarray
    b: np.ndarray
    sample_count: int
    se: np.ndarray | None = None

    def relative_error(self, u):
        return error_metrics(u, self)["relative_error"]


def error_metrics(u, oracle):
    u = np.asarray(u, dtype=float)
    if u.shape != oracle.u_hat.shape:
        raise DimensionMismatch("coefficient vector and oracle differ in length")
    ref = np.linalg.norm(oracle.u_hat)
    if ref == 0:
        raise ZeroOracle("oracle solution is zero; relative error undefined")
    e = float(np.linalg.norm(u - oracle.u_hat))
    return {"e_norm": e, "relative_error": e / ref}


def _solve_oracle(a, b):
    f = numerics.factorize_spd(a)
    return numerics.solve_factored(f, b)


def _chunk_sums(process, target, basis, n, rng):
    inputs, outputs = observe(process, target, rng, n, basis.lead, basis.lag)
    phi = basis.design(inputs, basis.lead, n)
    gram = phi.T @ phi
    if scipy.sparse.issparse(gram):
        gram = gram.toarray()
    return np.asarray(gram), np.asarray(phi.T @ outputs).reshape(-1)


def sample_moments(process, target, basis, sample_count, seed=None, chunk=100_000):
    """Streaming averages of ``Phi^T Phi`` and ``Phi^T y``.

    Returns ``(A, b, count, partial)`` where ``partial`` lists the per-chunk
    solutions of ``A u = b`` (chunks whose Gram is singular are skipped).
    """
    seed = process.seed if seed is None else seed
    m = basis.size
    a_sum, b_sum = np.zeros((m, m)), np.zeros(m)
    partial = []
    done, i = 0, 0
    while done < sample_count:
        n = min(chunk, sample_count - done)
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x0AC1E, i]))
        g, b = _chunk_sums(process, target, basis, n, rng)
        a_sum += g
        b_sum += b
        try:
            partial.append(_solve_oracle(g / n, b / n))
        except numerics.NotPositiveDefinite:
            pass
        done += n
        i += 1
    return a_sum / done, b_sum / done, done, partial


def oracle_best_approx(process, target, basis, sample_count=1_000_000, seed=None,
                       chunk=100_000):
    """Monte Carlo ``A``, ``b`` and ``u_hat`` accumulated chunk by chunk.

    Standard errors come from the spread of per-chunk solutions (batch means).
    """
    if sample_count < 10_000:
        raise ValueError("oracle needs at least 10^4 samples")
    a, b, done, partial = sample_moments(process, target, basis, sample_count, seed, chunk)
    u_hat = _solve_oracle(a, b)
    se = None
    if len(partial) >= 2:
        se = np.std(partial, axis=0, ddof=1) / np.sqrt(len(partial))
    return OracleSolution(u_hat, a, b, done, se)


def _expectation(process, func, width):
    """``E[func(X)]`` for a memoryless process with known law (vector-valued)."""
    if isinstance(process, (Discrete, FixedDesign)):
        pts = np.asarray(process.points, float)
        if isinstance(process, Discrete) and process.weights is not None:
            w = np.asarray(process.weights, float)
        else:
            w = np.full(pts.size, 1.0 / pts.size)
        return sum(wi * func(np.array([p]))[0] for wi, p in zip(w, pts))
    opts = dict(epsabs=1e-14, epsrel=1e-12, limit=400)
    if isinstance(process, Uniform):
        val, _ = scipy.integrate.quad_vec(lambda x: func(np.array([x]))[0],
                                          process.lo, process.hi, **opts)
        return val / (process.hi - process.lo)
    if isinstance(process, GaussianMixture):
        total = np.zeros(width)
        mass = 0.0
        for w, mu, sd in zip(process.weights, process.means, process.sigmas):
            lo, hi = max(process.lo, mu - 12 * sd), min(process.hi, mu + 12 * sd)
            if hi <= lo:
                continue
            dens = lambda x, w=w, mu=mu, sd=sd: w * np.exp(-0.5 * ((x - mu) / sd) ** 2) / (
                sd * np.sqrt(2 * np.pi))
            val, _ = scipy.integrate.quad_vec(
                lambda x: dens(x) * func(np.array([x]))[0], lo, hi, points=(mu,), **opts)
            total += val
            mass += scipy.integrate.quad(dens, lo, hi, points=(mu,), epsabs=1e-14,
                                         epsrel=1e-12, limit=400)[0]
        return total / mass
    raise NotImplementedError(f"no quadrature rule for {process.kind} processes")


def quadrature_best_approx(process, target, basis):
    """Exact-to-quadrature oracle for memoryless, noiseless scenarios."""
    if basis.lead or basis.lag or target.halfwidth:
        raise NotImplementedError("quadrature oracle needs a memoryless basis and target")
    m = basis.size

    def integrand(x):
        phi = np.asarray(basis.values(x))
        if scipy.sparse.issparse(phi):
            phi = phi.toarray()
        y = target.noiseless(x)
        return np.hstack([np.einsum("si,sj->sij", phi, phi).reshape(len(x), -1),
                          phi * y[:, None]])

    val = _expectation(process, integrand, m * m + m)
    a = val[: m * m].reshape(m, m)
    a = (a + a.T) / 2
    b = val[m * m :]
    return OracleSolution(_solve_oracle(a, b), a, b, 0, np.zeros(m))


@dataclass(frozen=True)
class CovarianceDiagnostics:
    """Frobenius norms of the batch-statistic covariances (the sigma-squared values)."""

    sigma_theta_theta: float
    sigma_omega_omega: float
    sigma_theta_omega: float
    n: int
    replicas: int
    se: dict = field(default_factory=dict)


def _batch_moments(process, target, basis, n, replicas, rng):
    m = basis.size
    if not (basis.lead or basis.lag or target.halfwidth):
        x, y = observe(process, target, rng, n, shape=(replicas,))
        phi = basis.values(x.reshape(-1))
        if scipy.sparse.issparse(phi):
            phi = phi.toarray()
        phi = np.asarray(phi).reshape(replicas, n, m)
        a_k = np.matmul(phi.transpose(0, 2, 1), phi) / n
        b_k = np.matmul(y[:, None, :], phi)[:, 0, :] / n
        return a_k, b_k
    a_k, b_k = np.empty((replicas, m, m)), np.empty((replicas, m))
    for r in range(replicas):
        g, b = _chunk_sums(process, target, basis, n, rng)
        a_k[r], b_k[r] = g / n, b / n
    return a_k, b_k


def estimate_covariances(process, target, basis, n, replicas, oracle=None, seed=0,
                         groups=10):
    """Monte Carlo estimates of the three covariance norms for batch size ``n``.

    Deviations are measured from the oracle's ``A`` and ``b`` when given,
    otherwise from the replica means.
    """
    if replicas < 100:
        raise ValueError("covariance estimates need at least 100 replicas")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xC0F]))
    a_k, b_k = _batch_moments(process, target, basis, n, replicas, rng)
    a = oracle.A if oracle is not None else a_k.mean(axis=0)
    b = oracle.b if oracle is not None else b_k.mean(axis=0)
    theta = b_k - b
    omega = (a_k - a).transpose(0, 2, 1).reshape(replicas, -1)  # column-stacked vec

    def norms(t, o):
        r = t.shape[0]
        return np.array([
            numerics.frobenius_norm(t.T @ t / r),
            numerics.frobenius_norm(o.T @ o / r),
            numerics.frobenius_norm(o.T @ t / r),
        ])

    est = norms(theta, omega)
    parts = np.array([norms(t, o) for t, o in zip(np.array_split(theta, groups),
                                                   np.array_split(omega, groups))])
    se = parts.std(axis=0, ddof=1) / np.sqrt(groups)
    return CovarianceDiagnostics(*est, n=n, replicas=replicas,
                                 se=dict(zip(("theta_theta", "omega_omega", "theta_omega"),
                                             se.tolist())))


@dataclass
class LemmaReport:
    lemma: str
    trials: int
    max_violation: float
    tolerance: float
    details: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    @property
    def passed(self):
        return bool(self.max_violation <= self.tolerance)

    def to_dict(self):
        return {
            "lemma": self.lemma,
            "passed": self.passed,
            "trials": self.trials,
            "max_violation": self.max_violation,
            "tolerance": self.tolerance,
            "notes": list(self.notes),
            "details": self.details,
        }


def verify_lemma1(a, b, c=None, gammas=(0.0,), mu_fractions=(1.0, 0.5), tol=1e-9):
    """Check ``||I - mu (B + gamma C)^{-1} A||_2 <= |1 - mu lambda|`` on a grid."""
    a = numerics.as_dense(a)
    b = numerics.as_dense(b)
    c = np.zeros_like(a) if c is None else numerics.as_dense(c)
    params = lemma1_params(a, b, c, gammas=gammas)
    worst, details = -np.inf, []
    eye = np.eye(a.shape[0])
    for g in params.gammas:
        m = np.linalg.solve(b + g * c, a)
        for frac in mu_fractions:
            mu = frac * params.mu0
            lhs = numerics.spectral_norm(eye - mu * m)
            rhs = abs(1 - mu * params.lam)
            worst = max(worst, lhs - rhs)
            details.append({"gamma": g, "mu": mu, "lhs": lhs, "rhs": rhs})
    report = LemmaReport("lemma1", len(details), float(worst), tol, details)
    report.notes.append(params.to_dict())
    return report


LEMMA3_FAMILIES = ("gaussian", "uniform", "exponential")


def _lemma3_draws(family, dim, draws, rng):
    shape = (draws, dim, dim)
    if family == "gaussian":
        mp, mq = rng.standard_normal((2, dim, dim))
        p = mp + rng.standard_normal(shape)
        q = mq + rng.standard_normal(shape)
        v = 1.0 + rng.standard_normal((draws, dim))
        w = rng.standard_normal((draws, dim)) - 0.5
    elif family == "uniform":
        # Q built from P: the pair is dependent, as the lemma allows.
        p = rng.uniform(-1, 2, shape)
        q = p.transpose(0, 2, 1) + 0.5 * rng.uniform(-1, 1, shape)
        v = rng.uniform(0, 1, (draws, dim))
        w = v + 0.3 * rng.uniform(-1, 1, (draws, dim))
    elif family == "exponential":
        p = rng.exponential(1.0, shape)
        q = p
        v = rng.exponential(1.0, (draws, dim))
        w = v
    elif family == "deterministic":
        p = q = np.broadcast_to(np.eye(dim), shape)
        v = w = np.broadcast_to(np.eye(dim)[0], (draws, dim))
    else:
        raise ValueError(f"unknown family {family!r}")
    return p, q, v, w


def _norm_of_mean(samples):
    """Frobenius norm of a sample mean and its linearised standard error."""
    s = samples.reshape(samples.shape[0], -1)
    mean = s.mean(axis=0)
    nrm = float(np.linalg.norm(mean))
    if nrm == 0 or s.shape[0] < 2:
        return nrm, 0.0
    se_entries = s.std(axis=0, ddof=1) / np.sqrt(s.shape[0])
    return nrm, float(np.sqrt(np.sum((mean / nrm) ** 2 * se_entries**2)))


def lemma3_trial(family, dim=4, draws=100_000, seed=0):
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x1E3]))
    p, q, v, w = _lemma3_draws(family, dim, draws, rng)
    pv = np.einsum("sij,sj->si", p, v)
    qw = np.einsum("sij,si->sj", q, w)  # row vector w^T Q
    lhs, se_l = _norm_of_mean(np.einsum("si,sj->sij", pv, qw))
    vw, se_vw = _norm_of_mean(np.einsum("si,sj->sij", v, w))
    vp = p.transpose(0, 2, 1).reshape(draws, -1)
    vq = q.transpose(0, 2, 1).reshape(draws, -1)
    pq, se_pq = _norm_of_mean(np.einsum("si,sj->sij", vp, vq))
    rhs = vw * pq
    se_r = float(np.hypot(pq * se_vw, vw * se_pq))
    se = float(np.hypot(se_l, se_r))
    return {"family": family, "lhs": lhs, "rhs": rhs, "se": se,
            "violation": lhs - rhs - 3 * se}


def verify_lemma3(dim=4, families=LEMMA3_FAMILIES, draws=100_000, seed=0):
    """Monte Carlo check of ``||E(P v w^T Q)||_F <= ||E(v w^T)||_F ||E(vec P vec Q^T)||_F``."""
    details = [lemma3_trial(f, dim, draws, seed + i) for i, f in enumerate(families)]
    worst = max(d["violation"] for d in details)
    return LemmaReport("lemma3", len(details), float(worst), 0.0, details)


@dataclass(frozen=True)
class ReplicaStats:
    """Cross-replica error statistics at one checkpoint."""

    k: int
    mean_error: np.ndarray
    se: np.ndarray
    second_moment_norm: float
    second_moment_se: float

    @property
    def mean_norm(self):
        return float(np.linalg.norm(self.mean_error))

    @property
    def combined_se(self):
        return float(np.sqrt(np.sum(self.se**2)))


def replica_statistics(config, replicas, checkpoints, oracle=None, threads=1,
                       bootstrap=200, seed=0):
    """Run ``replicas`` independent copies and summarise ``e^k = u^k - u_hat``."""
    oracle = config.oracle if oracle is None else oracle
    traj = run_replicas(config, replicas, checkpoints, threads=threads)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xB007]))
    boot_idx = rng.integers(0, replicas, size=(bootstrap, replicas))
    out = []
    for k in sorted(traj):
        e = traj[k] - oracle.u_hat
        outer = np.einsum("ri,rj->rij", e, e)
        second = numerics.frobenius_norm(outer.mean(axis=0))
        boots = [numerics.frobenius_norm(outer[idx].mean(axis=0)) for idx in boot_idx]
        boot_se = float(np.std(boots, ddof=1)) if bootstrap > 1 else float("nan")
        out.append(ReplicaStats(k, e.mean(axis=0), e.std(axis=0, ddof=1) / np.sqrt(replicas),
                                second, boot_se))
    return out


def verify_theorem1_mean(config, replicas, checkpoints, oracle=None, threads=1,
                         stats=None, mode="decrease", se_factor=4.0):
    """Replica-averaged mean error.

    ``mode="fast"`` asserts ``||mean(e^k)|| <= se_factor`` combined standard
    errors at every checkpoint (the zero-mean case); ``"decrease"`` asserts the
    checkpoint mean norms decrease strictly.
    """
    if replicas < 1000 and stats is None:
        raise ValueError("mean verification needs at least 1000 replicas")
    stats = stats or replica_statistics(config, replicas, checkpoints, oracle, threads)
    details = [{"k": s.k, "mean_norm": s.mean_norm, "combined_se": s.combined_se}
               for s in stats]
    if mode == "fast":
        worst = max(s.mean_norm - se_factor * s.combined_se for s in stats)
        tol = 0.0
    elif mode == "decrease":
        norms = [s.mean_norm for s in stats]
        worst = max((b - a for a, b in zip(norms, norms[1:])), default=-np.inf)
        # Strict decrease: a zero change already fails.
        tol = -np.finfo(float).tiny
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return LemmaReport("theorem1", len(stats), float(worst), tol, details)


def mean_square_bound(schedule, steps, lambda0, delta_sq, d, e0_second):
    """Right-hand side of the mean-square bound for ``k = 1 .. steps``.

    Evaluated by the recursion ``R_k = (1 - mu_k lambda0)^2 R_{k-1} + mu_k^2 delta^2 d^2``
    starting from ``R_0 = ||E(e^0 e^0T)||_F``.
    """
    out = np.empty(steps + 1)
    out[0] = e0_second
    for k in range(1, steps + 1):
        mu = schedule_value(schedule, k)
        out[k] = (1 - mu * lambda0) ** 2 * out[k - 1] + mu**2 * delta_sq * d**2
    return out


def mean_square_bound_direct(schedule, k, lambda0, delta_sq, d, e0_second):
    """Same bound written as the explicit product/sum (independent evaluation)."""
    mus = np.array([schedule_value(schedule, j) for j in range(1, k + 1)])
    l = (1 - mus * lambda0) ** 2
    first = e0_second * np.prod(l)
    total = 0.0
    for j in range(1, k + 1):
        prod = 1.0
        for i in range(2, j + 1):
            prod *= l[k - i + 1]  # l_{k-i+2}, zero-based
        total += prod * mus[k - j] ** 2  # mu_{k-j+1}
    return first + delta_sq * d**2 * total


@dataclass(frozen=True)
class VarianceConstants:
    lambda0: float
    mu_hat0: float
    mu_hat0_with_d: float
    delta_sq: float
    d: float
    params: object

    def to_dict(self):
        return {"lambda0": self.lambda0, "mu_hat0": self.mu_hat0,
                "mu_hat0_with_d": self.mu_hat0_with_d, "delta_sq": self.delta_sq,
                "d": self.d, "lemma1": self.params.to_dict()}


def variance_constants(spec, oracle, cov, u0=None, precond_d=None):
    """Constants of the mean-square bound from Lemma-1 parameters and covariances.

    ``mu_hat0`` follows the printed formula (no ``d``); ``mu_hat0_with_d`` keeps
    the ``d**2`` factor carried by the contraction coefficient.
    """
    a = oracle.A
    m = a.shape[0]
    b = b_matrix(spec, a, m)
    c = None
    if spec.constraint.matrix is not None:
        c = constraint_gram(spec.constraint, spec.block_count)
    params = lemma1_params(a, b, c, gammas=(spec.constraint.gamma,))
    lam = params.lam
    if precond_d is None:
        pm = preconditioner_matrix(spec, None, a, m)
        precond_d = numerics.frobenius_norm(np.linalg.inv(pm))
    u_norm = float(np.linalg.norm(oracle.u_hat))
    e0 = (np.zeros(m) if u0 is None else np.asarray(u0, float)) - oracle.u_hat
    s_tt, s_oo, s_to = cov.sigma_theta_theta, cov.sigma_omega_omega, cov.sigma_theta_omega
    delta_sq = (s_tt + 2 * s_to * u_norm + s_oo * u_norm**2
                + 2 * (s_oo * u_norm + s_to) * float(np.linalg.norm(e0)))
    mu_hat0 = min(4 * lam / (3 * lam**2 + 4 * s_oo), params.mu0)
    mu_hat0_d = min(4 * lam / (3 * lam**2 + 4 * s_oo * precond_d**2), params.mu0)
    return VarianceConstants(lam / 2, mu_hat0, mu_hat0_d, delta_sq, precond_d, params)


def variance_bound_check(config, cov, replicas, checkpoints, oracle=None, threads=1,
                         stats=None, constants=None):
    """Empirical ``||E(e^k e^kT)||_F`` against the analytic bound at checkpoints."""
    oracle = config.oracle if oracle is None else oracle
    constants = constants or variance_constants(config.preconditioner, oracle, cov, config.u0)
    stats = stats or replica_statistics(config, replicas, checkpoints, oracle, threads)
    e0 = (np.zeros(oracle.u_hat.size) if config.u0 is None
          else np.asarray(config.u0, float)) - oracle.u_hat
    steps = max(s.k for s in stats)
    bound = mean_square_bound(config.schedule, steps, constants.lambda0, constants.delta_sq,
                              constants.d, float(e0 @ e0))
    details, worst = [], -np.inf
    for s in stats:
        v = s.second_moment_norm - bound[s.k] - 3 * s.second_moment_se
        worst = max(worst, v)
        details.append({"k": s.k, "empirical": s.second_moment_norm,
                        "bootstrap_se": s.second_moment_se, "bound": float(bound[s.k])})
    sched = config.schedule
    mu_max = max(schedule_value(sched, k) for k in range(1, min(steps, 5000) + 1))
    report = LemmaReport("variance", len(stats), float(worst), 0.0, details)
    report.notes.append({
        "sum_mu_diverges": bool(sched.diverges),
        "sum_mu_sq_finite": bool(sched.square_summable),
        "theorem2_hypotheses": bool(sched.diverges and sched.square_summable),
        "mu_max": mu_max,
        "mu_within_mu_hat0": bool(mu_max <= constants.mu_hat0 * (1 + 1e-12)),
        "mu_within_mu_hat0_with_d": bool(mu_max <= constants.mu_hat0_with_d * (1 + 1e-12)),
        **constants.to_dict(),
    })
    return report


def theorem2_flags(schedule):
    return {"sum_mu_diverges": bool(schedule.diverges),
            "sum_mu_sq_finite": bool(schedule.square_summable),
            "theorem2_hypotheses": bool(schedule.diverges and schedule.square_summable)}


# --- exhaustive second-moment recursion -------------------------------------------


def _enumerate_batches(process, n):
    pts = np.asarray(process.points, float)
    w = (np.full(pts.size, 1.0 / pts.size) if process.weights is None
         else np.asarray(process.weights, float))
    for combo in itertools.product(range(pts.size), repeat=n):
        yield pts[list(combo)], float(np.prod(w[list(combo)]))


def second_moment_recursion(process, target, basis, n, precond_matrix, mu, u0=None,
                            steps=2):
    """Exhaustive check of the one-step second-moment recursion.

    For a finite-support process every batch can be enumerated, so
    ``E(e^k e^kT)`` is computed exactly, both directly from the iteration and
    term by term from ``E(e^{k-1} e^{k-1 T})`` and the batch deviations.
    The cross terms are evaluated with the signs that follow from
    ``e^k = (I - mu Psi (A + Omega)) e^{k-1} + mu Psi (theta - Omega u_hat)``
    and, for comparison, with the opposite signs.
    """
    batches = []
    for x, p in _enumerate_batches(process, n):
        phi = np.asarray(basis.values(x))
        y = target.noiseless(x)
        batches.append((phi.T @ phi / n, phi.T @ y / n, p))
    a = sum(p * g for g, _, p in batches)
    b = sum(p * v for _, v, p in batches)
    u_hat = np.linalg.solve(a, b)
    psi = np.linalg.inv(precond_matrix)
    m = a.shape[0]
    eye = np.eye(m)
    u0 = np.zeros(m) if u0 is None else np.asarray(u0, float)

    # Distribution of e^{k-1}: list of (vector, probability).
    dist = [(u0 - u_hat, 1.0)]
    results = []
    for k in range(1, steps + 1):
        new = []
        for e, pe in dist:
            for g, v, pb in batches:
                u = e + u_hat
                u_next = u + mu * psi @ (v - g @ u)
                new.append((u_next - u_hat, pe * pb))
        direct = sum(p * np.outer(e, e) for e, p in new)

        second_prev = sum(p * np.outer(e, e) for e, p in dist)
        lin = eye - mu * psi @ a
        t1 = lin @ second_prev @ lin.T
        t2 = t3 = t4 = t5 = t6 = t7 = np.zeros((m, m))
        for e, pe in dist:
            for g, v, pb in batches:
                p = pe * pb
                om, th = g - a, v - b
                eta = th - om @ u_hat
                t2 = t2 + p * np.outer(eta, eta)
                t3 = t3 + p * om @ np.outer(e, e) @ om
                t4 = t4 + p * om @ np.outer(e, th)
                t5 = t5 + p * om @ np.outer(e, u_hat) @ om
                t6 = t6 + p * np.outer(th, e) @ om
                t7 = t7 + p * om @ np.outer(u_hat, e) @ om
        q = mu**2
        wrap = lambda t: psi @ t @ psi
        base = t1 + q * wrap(t2) + q * wrap(t3)
        derived = base + q * wrap(-t4 + t5 - t6 + t7)
        flipped = base + q * wrap(t4 - t5 + t6 - t7)
        results.append({
            "k": k,
            "direct": direct,
            "recursion": derived,
            "recursion_flipped_cross_terms": flipped,
            "max_abs_diff": float(np.max(np.abs(direct - derived))),
            "max_abs_diff_flipped": float(np.max(np.abs(direct - flipped))),
            "cross_term_norms": {
                "omega_e_theta": numerics.frobenius_norm(t4),
                "omega_e_e_omega": numerics.frobenius_norm(t3),
                "omega_uhat_e_omega": numerics.frobenius_norm(t7),
            },
        })
        dist = new
    return {"A": a, "b": b, "u_hat": u_hat, "steps": results}


def cross_term_bounds(process, target, basis, n, u0=None):
    """Check the Cauchy-Schwarz bounds on the cross terms at the first step.

    With ``e^0`` deterministic, ``E(Omega e theta^T)``,
    ``E(Omega e e^T Omega)`` and ``E(Omega u_hat e^T Omega)`` are bounded by the
    corresponding covariance norms times norms of ``e^0`` and ``u_hat``.
    """
    batches = []
    for x, p in _enumerate_batches(process, n):
        phi = np.asarray(basis.values(x))
        batches.append((phi.T @ phi / n, phi.T @ target.noiseless(x) / n, p))
    a = sum(p * g for g, _, p in batches)
    b = sum(p * v for _, v, p in batches)
    u_hat = np.linalg.solve(a, b)
    m = a.shape[0]
    e = (np.zeros(m) if u0 is None else np.asarray(u0, float)) - u_hat
    vec = lambda o: o.T.reshape(-1)
    fro = numerics.frobenius_norm
    s_oo = fro(sum(p * np.outer(vec(g - a), vec(g - a)) for g, _, p in batches))
    s_ot = fro(sum(p * np.outer(vec(g - a), v - b) for g, v, p in batches))
    lhs_76 = fro(sum(p * (g - a) @ np.outer(e, v - b) for g, v, p in batches))
    lhs_77 = fro(sum(p * (g - a) @ np.outer(e, e) @ (g - a) for g, _, p in batches))
    lhs_78 = fro(sum(p * (g - a) @ np.outer(u_hat, e) @ (g - a) for g, _, p in batches))
    en = float(np.linalg.norm(e))
    return [
        {"term": "omega_e_theta", "lhs": lhs_76, "rhs": s_ot * en},
        {"term": "omega_e_e_omega", "lhs": lhs_77, "rhs": s_oo * en**2},
        {"term": "omega_uhat_e_omega", "lhs": lhs_78,
         "rhs": s_oo * float(np.linalg.norm(u_hat)) * en},
    ]


def counterexample_report():
    """Relative positive-definiteness check on the classic failing pair."""
    a = np.array([[1.0, 2.0], [2.0, 5.0]])
    b = np.array([[2.0, 1.0], [1.0, 1.0]])
    rep = check_relative_pd(b, a, "exact")
    report = LemmaReport("counterexample", 1, abs(rep.min_quotient + 1.0), 1e-12,
                         [rep.to_dict()])
    if rep.admissible:
        report.max_violation = np.inf
    return report


def admissible_or_raise(b, a):
    rep = check_relative_pd(b, a)
    if not rep.admissible:
        raise NotAdmissible(f"min quotient {rep.min_quotient:.3e}", rep.min_quotient,
                            rep.witness)
    return rep


# --- suites over random instances and the B = A fast path ---------------------------


def random_spd(dim, rng, spread=2.0):
    """Random SPD matrix with eigenvalues log-uniform over ``10**[-spread/2, spread/2]``."""
    q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    w = 10.0 ** rng.uniform(-spread / 2, spread / 2, dim)
    a = (q * w) @ q.T
    return (a + a.T) / 2


def verify_lemma1_random(trials=100, max_dim=20, gammas=(0.0, 0.02), seed=0,
                         mu_fractions=(1.0, 0.5), tol=1e-9):
    """Lemma-1 contraction bound on random SPD instances.

    Each trial draws ``A`` with ``2 <= M <= max_dim``, alternates ``B = I`` and
    ``B = diag(A)`` and uses the first-difference Gram as ``C``.  Instances
    whose preconditioner is not relatively positive definite on the whole
    gamma grid are redrawn and counted under ``notes``.
    """
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x1E1]))
    details, worst, redrawn = [], -np.inf, 0
    while len(details) < trials:
        dim = int(rng.integers(2, max_dim + 1))
        a = random_spd(dim, rng)
        use_diag = len(details) % 2 == 1
        b = np.diag(np.diag(a)) if use_diag else np.eye(dim)
        d = first_difference_operator(dim)
        try:
            rep = verify_lemma1(a, b, d.T @ d, gammas, mu_fractions, tol)
        except NotAdmissible:
            redrawn += 1
            continue
        worst = max(worst, rep.max_violation)
        details.append({"dim": dim, "b": "diag" if use_diag else "identity",
                        "max_violation": rep.max_violation, **rep.notes[0]})
    report = LemmaReport("lemma1", trials, float(worst), tol, details)
    report.notes.append({"redrawn_inadmissible": redrawn})
    return report


def fast_path_check(process, target, basis, replicas=10_000, n=1000, seed=0,
                    se_factor=4.0, threads=1):
    """``B = A``, ``gamma = 0``, ``mu = 1``: one step is unbiased for ``u_hat``.

    Returns a report whose violation is ``||mean(e^1)|| - se_factor * SE``
    with ``SE`` the combined standard error of the replica mean.
    """
    oracle = quadrature_best_approx(process, target, basis)
    cfg = RunConfig(process, target, basis, PreconditionerSpec(FULL), Constant(1.0),
                    n=n, steps=1, seed=seed, oracle=oracle)
    stats = replica_statistics(cfg, replicas, [1], oracle, threads, bootstrap=0)
    s = stats[0]
    report = LemmaReport("fast_path", replicas, s.mean_norm - se_factor * s.combined_se,
                         0.0, [{"k": 1, "mean_norm": s.mean_norm,
                                "combined_se": s.combined_se}])
    return report


def deterministic_fast_path(points, target, basis):
    """With every batch equal to ``points`` one ``B = A``, ``mu = 1`` step lands on ``u_hat``.

    Returns ``||u^1 - u_hat||_inf``.
    """
    process = FixedDesign(tuple(points))
    oracle = quadrature_best_approx(process, target, basis)
    cfg = RunConfig(process, target, basis, PreconditionerSpec(FULL), Constant(1.0),
                    n=len(points), steps=1, oracle=oracle)
    trace = run(cfg)
    return float(np.max(np.abs(trace.final.u - oracle.u_hat)))
