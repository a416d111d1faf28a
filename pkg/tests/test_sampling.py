import numpy as np
import pytest
import scipy.integrate
import scipy.stats

from psgm import sampling
from psgm.errors import WrongProcessTag
from psgm.sampling import (
    CorrelatedStream,
    GammaCRF,
    GaussianMixture,
    Uniform,
    UserFunction,
    draw_batch,
)


class TestDrawBatch:
    def test_identity_target_zero_noise(self):
        b = draw_batch(Uniform(seed=3), UserFunction(lambda x: x), 5, 1)
        assert b.n == 5
        assert np.array_equal(b.outputs, b.x)

    def test_gamma_crf_endpoints(self):
        f = GammaCRF()
        assert np.array_equal(f(np.array([0.0, 0.5, 1.0]))[[0, 2]], [0.0, 1.0])
        assert f(np.array([0.5]))[0] == pytest.approx(0.5 ** (1 / 5.5))

    def test_mixture_mean(self):
        b = draw_batch(GaussianMixture(seed=7), GammaCRF(), 100_000, 1)
        se = b.x.std(ddof=1) / np.sqrt(b.n)
        assert abs(b.x.mean() - 0.45) <= 3 * se

    def test_reproducible_from_seed_and_k(self):
        p = CorrelatedStream(seed=11)
        f = sampling.synthetic_channel((0.1, 1.0, 0.1), a3=-0.1, noise_sigma=0.01)
        a = draw_batch(p, f, 50, 4, lead=2, lag=2)
        b = draw_batch(p, f, 50, 4, lead=2, lag=2)
        c = draw_batch(p, f, 50, 5, lead=2, lag=2)
        assert np.array_equal(a.inputs, b.inputs) and np.array_equal(a.outputs, b.outputs)
        assert not np.array_equal(a.inputs, c.inputs)
        assert a.inputs.shape == (54,)

    def test_windows_strictly_increasing(self):
        p, f = Uniform(), GammaCRF()
        prev_end = -1
        for k in range(1000):
            b = draw_batch(p, f, 3, k)
            assert b.window[0] > prev_end
            assert b.window[1] >= b.window[0]
            prev_end = b.window[1]

    def test_batches_independent(self):
        # Chi-square test on binned pairs (first sample of batch k, of batch k+1).
        p = Uniform(seed=2)
        first = np.array([draw_batch(p, GammaCRF(), 1, k).x[0] for k in range(4001)])
        pairs = np.stack([first[:-1:2], first[1::2]])
        table, _, _ = np.histogram2d(pairs[0], pairs[1], bins=4, range=[[0, 1], [0, 1]])
        assert scipy.stats.chi2_contingency(table).pvalue > 0.001

    def test_invalid_size(self):
        with pytest.raises(ValueError):
            draw_batch(Uniform(), GammaCRF(), 0, 1)

    def test_stream_is_stationary_ar1(self):
        p = CorrelatedStream(rho=0.5, sigma=0.26)
        x = p.sample(np.random.default_rng(0), (2000, 50))
        assert x[:, 0].std() == pytest.approx(p.stationary_sd, rel=0.05)
        lag1 = np.mean(x[:, 1:] * x[:, :-1]) / np.mean(x**2)
        assert lag1 == pytest.approx(0.5, abs=0.03)

    def test_equalize_swaps_roles(self):
        f = sampling.synthetic_channel((0.0, 2.0, 0.0), equalize=True)
        b = draw_batch(Uniform(-1, 1, seed=1), f, 10, 0)
        assert np.allclose(b.x, 2 * b.outputs)


class TestMixturePdf:
    def test_far_tail(self):
        assert sampling.mixture_pdf(GaussianMixture(), 0.9) < 1e-10

    def test_symmetric_modes(self):
        p = GaussianMixture(means=(0.3, 0.6), sigmas=(0.02, 0.02))
        assert sampling.mixture_pdf(p, 0.3) == pytest.approx(sampling.mixture_pdf(p, 0.6))

    def test_integrates_to_one(self):
        x = np.linspace(0, 1, 1_000_001)
        total = scipy.integrate.trapezoid(sampling.mixture_pdf(GaussianMixture(), x), x)
        assert total == pytest.approx(1.0, abs=1e-6)

    def test_wrong_tag(self):
        with pytest.raises(WrongProcessTag):
            sampling.mixture_pdf(Uniform(), 0.5)

    def test_histogram_total_variation(self):
        p = GaussianMixture()
        x = p.sample(np.random.default_rng(0), 1_000_000)
        edges = np.linspace(0, 1, 101)
        counts, _ = np.histogram(x, edges)
        probs = np.diff(p.cdf(edges))
        tv = 0.5 * np.sum(np.abs(counts / x.size - probs / probs.sum()))
        assert tv <= 0.01

    @pytest.mark.parametrize(
        "kwargs",
        [dict(sigmas=(0.0, 0.1)), dict(weights=(0.7, 0.7)), dict(means=(0.1,), sigmas=(1, 1))],
    )
    def test_invalid_parameters(self, kwargs):
        with pytest.raises(ValueError):
            GaussianMixture(**kwargs)


class TestChannel:
    def test_identity_channel(self):
        f = sampling.synthetic_channel()
        assert f(np.array([0.1, -0.4, 0.7, 0.3, 0.2])) == pytest.approx(0.7)

    def test_cubic_term(self):
        f = sampling.synthetic_channel(a3=-0.1)
        assert f(np.array([0, 0, 1.0, 0, 0])) == pytest.approx(0.9)

    def test_five_tap_hand_value(self):
        kernel = (0.05, -0.15, 1.0, 0.2, -0.05)
        w = np.array([0.3, -0.2, 0.5, 0.1, -0.4])
        z = 0.05 * 0.3 + (-0.15) * (-0.2) + 0.5 + 0.2 * 0.1 + (-0.05) * (-0.4)
        f = sampling.synthetic_channel(kernel, a3=-0.08, a5=0.01)
        assert f(w) == pytest.approx(z - 0.08 * z**3 + 0.01 * z**5)
        assert f.noiseless(w)[0] == pytest.approx(f(w))

    def test_kernel_too_long(self):
        with pytest.raises(ValueError):
            sampling.synthetic_channel((0.1,) * 7)

    def test_snr_calibration(self):
        p = CorrelatedStream()
        f = sampling.synthetic_channel((0.05, -0.15, 1.0, 0.2, -0.05), -0.08, 0.01)
        sigma = sampling.noise_sigma_for_snr(p, f, 35.0)
        x = p.sample(np.random.default_rng(1), 100_000)
        rms = np.sqrt(np.mean(f.noiseless(x) ** 2))
        assert 20 * np.log10(rms / sigma) == pytest.approx(35.0, abs=0.1)
