import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from psgm import numerics, regularization as reg
from psgm.basis import Monomial
from psgm.errors import NotAdmissible, NotPositiveDefinite, SingularB
from psgm.regularization import DIAG, FULL, IDENTITY, PreconditionerSpec

COUNTER_A = np.array([[1.0, 2.0], [2.0, 5.0]])
COUNTER_B = np.array([[2.0, 1.0], [1.0, 1.0]])


def random_spd(seed, n):
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((n, n + 2))
    return g @ g.T / n + 0.05 * np.eye(n)


class TestConstraints:
    def test_first_difference_m3(self):
        assert np.array_equal(reg.first_difference_operator(3), [[-1, 1, 0], [0, -1, 1]])

    def test_applies_to_ramp(self):
        assert np.array_equal(reg.first_difference_operator(3) @ [1, 2, 3], [1, 1])

    @settings(max_examples=50, deadline=None)
    @given(st.integers(2, 40), st.floats(-1e6, 1e6))
    def test_annihilates_constants(self, m, c):
        assert np.all(reg.first_difference_operator(m) @ np.full(m, c) == 0)

    def test_too_small(self):
        with pytest.raises(ValueError):
            reg.first_difference_operator(1)

    def test_gram_single_block(self):
        c = reg.constraint_gram(reg.first_difference(2))
        assert np.array_equal(c, [[1, -1], [-1, 1]])

    def test_gram_two_blocks(self):
        d = reg.first_difference_operator(3)
        block = d.T @ d
        expected = np.zeros((6, 6))
        expected[:3, :3] = block
        expected[3:, 3:] = block
        assert np.array_equal(reg.constraint_gram(reg.first_difference(3), 2), expected)
        assert np.array_equal(block, [[1, -1, 0], [-1, 2, -1], [0, -1, 1]])

    @settings(max_examples=50, deadline=None)
    @given(st.integers(2, 12), st.integers(1, 4), st.integers(0, 2**32 - 1))
    def test_gram_psd_and_blockwise_kernel(self, m, blocks, seed):
        c = reg.constraint_gram(reg.first_difference(m), blocks)
        assert np.allclose(c, c.T)
        assert np.linalg.eigvalsh(c)[0] >= -1e-12
        levels = np.random.default_rng(seed).standard_normal(blocks)
        x = np.repeat(levels, m)
        assert x @ c @ x == pytest.approx(0.0, abs=1e-9)

    def test_derivative_constraint_kernel(self):
        op = reg.derivative_constraint(Monomial(3), [0.2, 0.9], gamma=0.1)
        c = reg.constraint_gram(op)
        # Constant functions have zero derivative everywhere.
        assert np.array_equal(c @ [1.0, 0, 0], [0, 0, 0])
        assert op.gamma == 0.1

    def test_negative_gamma(self):
        with pytest.raises(ValueError):
            reg.first_difference(3, gamma=-0.1)


class TestAssemble:
    def test_identity(self):
        p = reg.assemble_preconditioner(PreconditionerSpec(IDENTITY), 0.0, size=5)
        assert p.is_identity
        assert p.d == pytest.approx(np.sqrt(5))
        r = np.arange(5.0)
        assert np.array_equal(p.solve(r), r)

    def test_zero_diagonal_fails_then_constraint_repairs(self):
        a = np.diag([0.5, 0.0, 0.3, 0.2])
        with pytest.raises(NotPositiveDefinite):
            reg.assemble_preconditioner(PreconditionerSpec(DIAG), 0.0, a_ref=a)
        spec = PreconditionerSpec(DIAG, reg.first_difference(4, 0.02))
        p = reg.assemble_preconditioner(spec, a_ref=a)
        assert p.factor.bandwidth == 1
        assert p.d > 0

    def test_full_needs_reference(self):
        with pytest.raises(ValueError):
            reg.assemble_preconditioner(PreconditionerSpec(FULL), 0.0, size=3)

    @pytest.mark.parametrize("seed", range(20))
    def test_solve_matches_dense(self, seed):
        rng = np.random.default_rng(seed)
        m = int(rng.integers(2, 51))
        a = random_spd(seed, m)
        b = [IDENTITY, DIAG, FULL][seed % 3]
        spec = PreconditionerSpec(b, reg.first_difference(m, 0.02))
        p = reg.assemble_preconditioner(spec, a_ref=a)
        dense = reg.b_matrix(spec, a, m) + 0.02 * reg.constraint_gram(spec.constraint)
        r = rng.standard_normal(m)
        ref = np.linalg.solve(dense, r)
        assert np.linalg.norm(p.solve(r) - ref) <= 1e-8 * np.linalg.norm(ref)
        assert p.d == pytest.approx(np.linalg.norm(np.linalg.inv(dense)), rel=1e-8)

    def test_block_spec_dimension(self):
        spec = PreconditionerSpec(IDENTITY, reg.first_difference(4, 0.5), block_count=3)
        p = reg.assemble_preconditioner(spec)
        assert p.size == 12
        assert p.factor.bandwidth == 1


class TestRelativePD:
    def test_b_equals_a(self):
        a = random_spd(0, 6)
        r = reg.check_relative_pd(a, a)
        assert r.admissible and r.min_quotient == pytest.approx(1.0, abs=1e-10)

    def test_identity_gives_lambda_min(self):
        a = random_spd(1, 6)
        r = reg.check_relative_pd(np.eye(6), a)
        assert r.min_quotient == pytest.approx(np.linalg.eigvalsh(a)[0], rel=1e-10)

    def test_counterexample(self):
        r = reg.check_relative_pd(COUNTER_B, COUNTER_A)
        assert not r.admissible
        assert r.min_quotient == pytest.approx(-1.0, abs=1e-12)
        assert np.allclose(r.witness, [1.0, 0.0])
        assert r.witness @ np.linalg.solve(COUNTER_B, COUNTER_A) @ r.witness == pytest.approx(-1)

    def test_sampled_mode_finds_counterexample(self):
        r = reg.check_relative_pd(COUNTER_B, COUNTER_A, mode="sampled")
        assert not r.admissible
        assert r.min_quotient == pytest.approx(-1.0, abs=1e-6)
        assert r.mode == "sampled"

    def test_sampled_agrees_with_exact(self):
        a = random_spd(2, 10)
        b = np.diag(np.diag(a)) + 0.1 * reg.constraint_gram(reg.first_difference(10))
        exact = reg.check_relative_pd(b, a, "exact").min_quotient
        sampled = reg.check_relative_pd(b, a, "sampled").min_quotient
        assert sampled >= exact - 1e-12
        assert sampled == pytest.approx(exact, rel=1e-6)

    def test_singular_b(self):
        with pytest.raises(SingularB):
            reg.check_relative_pd(np.zeros((2, 2)), COUNTER_A)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(2, 12))
    def test_b_equals_a_property(self, seed, m):
        a = random_spd(seed, m)
        assert reg.check_relative_pd(a, a).min_quotient == pytest.approx(1.0, abs=1e-10)


class TestStepParameters:
    def test_b_equals_a(self):
        a = random_spd(3, 4)
        p = reg.lemma1_params(a, a, gammas=[0.0])
        assert (p.lambda_min, p.lambda_max, p.tau) == pytest.approx((1, 1, 1))
        assert p.lam == pytest.approx(1.0) and p.mu0 == pytest.approx(1.0)
        # sqrt(1 - tau**-2) turns round-off in tau into ~1e-8.
        assert p.contraction == pytest.approx(0.0, abs=1e-6)

    def test_identity_uses_condition_number(self):
        a = random_spd(4, 5)
        p = reg.lemma1_params(a, np.eye(5), gammas=[0.0])
        kappa = numerics.condition_number(a)
        assert p.tau == pytest.approx(kappa, rel=1e-10)
        assert p.contraction == pytest.approx(np.sqrt(1 - kappa**-2), rel=1e-10)

    def test_diagonal_case_by_hand(self):
        p = reg.lemma1_params(np.diag([4.0, 1.0]), np.eye(2), gammas=[0.0])
        tau = 4.0
        lam = 4 * tau * (1 - np.sqrt(1 - 1 / tau**2))
        assert (p.lambda_min, p.lambda_max, p.tau) == pytest.approx((1, 4, 4))
        assert p.lam == pytest.approx(lam)
        assert p.mu0 == pytest.approx(1 / 16)
        assert p.branch == "tau>=1"
        # mu0 * lam never exceeds one.
        assert 0 < p.mu0 * p.lam <= 1

    def test_gamma_halving(self):
        # A steep constraint makes the large-gamma end inadmissible for this
        # non-symmetric preconditioner pair; the search must shrink gamma0.
        a = COUNTER_A
        b = np.diag([1.0, 2.0])
        c = np.array([[3.0, 3.5], [3.5, 4.5]])
        assert reg.check_relative_pd(b, a).admissible
        assert not reg.check_relative_pd(b + 10 * c, a).admissible
        p = reg.lemma1_params(a, b, c, gamma0=10.0)
        assert p.gamma0 < 10.0
        assert p.lambda_min > 0
        assert all(reg.check_relative_pd(b + g * c, a).admissible for g in p.gammas)

    def test_inadmissible_grid(self):
        with pytest.raises(NotAdmissible):
            reg.lemma1_params(COUNTER_A, COUNTER_B, gammas=[0.0])

    def test_step_parameter_branches(self):
        tau, lam, mu0, branch = reg.step_parameters(2.0, 2.0 * (1 - 1e-12))
        assert tau == 1.0 and branch == "tau>=1"
        tau, lam, mu0, branch = reg.step_parameters(2.0, 1.0)
        assert branch == "tau<1" and lam == 0.5

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(2, 10), st.sampled_from([0.0, 0.02]))
    def test_contraction_bound(self, seed, m, gamma):
        a = random_spd(seed, m)
        c = reg.constraint_gram(reg.first_difference(m))
        b = np.diag(np.diag(a)) if seed % 2 else np.eye(m)
        assume(reg.check_relative_pd(b + gamma * c, a).admissible)
        p = reg.lemma1_params(a, b, c, gammas=[gamma])
        t = np.linalg.solve(b + gamma * c, a)
        for mu in (p.mu0, p.mu0 / 2):
            lhs = np.linalg.norm(np.eye(m) - mu * t, 2)
            assert lhs <= abs(1 - mu * p.lam) + 1e-9
