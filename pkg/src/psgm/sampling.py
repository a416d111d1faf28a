"""Input processes, observed target functions and batch drawing.

Every batch is generated from its own ``SeedSequence([seed, k])`` so a batch
is reproducible from ``(seed, k)`` alone and batches for different ``k`` are
statistically independent.  Stream processes restart from their stationary
distribution in each batch, which keeps within-batch memory while batches
stay i.i.d.
"""

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.signal
import scipy.stats
from numpy.lib.stride_tricks import sliding_window_view

from .errors import WrongProcessTag

# Two narrow modes on [0, 1] used for the camera-response experiment.
CRF_MEANS = (0.3, 0.6)
CRF_SIGMAS = (0.01, 0.007)
CRF_GAMMA = 1 / 5.5


def batch_rng(seed, k):
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(k)]))


@dataclass(frozen=True)
class GaussianMixture:
    """Gaussian mixture truncated to ``[lo, hi]`` by rejection."""

    means: tuple = CRF_MEANS
    sigmas: tuple = CRF_SIGMAS
    weights: tuple | None = None
    lo: float = 0.0
    hi: float = 1.0
    seed: int = 0
    kind = "mixture"
    stream = False

    def __post_init__(self):
        if len(self.means) != len(self.sigmas):
            raise ValueError("means and sigmas must have the same length")
        if any(s <= 0 for s in self.sigmas):
            raise ValueError("sigmas must be positive")
        if self.weights is None:
            object.__setattr__(self, "weights", (1.0 / len(self.means),) * len(self.means))
        w = np.asarray(self.weights, dtype=float)
        if len(w) != len(self.means) or np.any(w <= 0) or abs(w.sum() - 1) > 1e-12:
            raise ValueError("weights must be positive and sum to 1")

    def sample(self, rng, size):
        size = tuple(np.atleast_1d(size))
        total = int(np.prod(size))
        out = np.empty(total)
        filled = 0
        mu, sd = np.asarray(self.means), np.asarray(self.sigmas)
        cum = np.cumsum(self.weights)[:-1]
        while filled < total:
            need = total - filled
            comp = np.searchsorted(cum, rng.random(need), side="right")
            x = mu[comp] + sd[comp] * rng.standard_normal(need)
            x = x[(x >= self.lo) & (x <= self.hi)]
            out[filled : filled + x.size] = x
            filled += x.size
        return out.reshape(size)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        return sum(
            w * scipy.stats.norm.pdf(x, m, s)
            for w, m, s in zip(self.weights, self.means, self.sigmas)
        )

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        return sum(
            w * scipy.stats.norm.cdf(x, m, s)
            for w, m, s in zip(self.weights, self.means, self.sigmas)
        )

    @property
    def mean(self):
        return float(np.dot(self.weights, self.means))


@dataclass(frozen=True)
class Uniform:
    lo: float = 0.0
    hi: float = 1.0
    seed: int = 0
    kind = "uniform"
    stream = False

    def sample(self, rng, size):
        return rng.uniform(self.lo, self.hi, size)


@dataclass(frozen=True)
class Discrete:
    """I.i.d. draws from a finite support."""

    points: tuple
    weights: tuple | None = None
    seed: int = 0
    kind = "discrete"
    stream = False

    def sample(self, rng, size):
        return rng.choice(np.asarray(self.points, float), size=size, p=self.weights)


@dataclass(frozen=True)
class FixedDesign:
    """Deterministic process: every batch is ``points`` tiled to the batch size.

    Gives zero-variance batch statistics (``A_k = A`` for every ``k``).
    """

    points: tuple
    seed: int = 0
    kind = "fixed"
    stream = False

    def sample(self, rng, size):
        size = tuple(np.atleast_1d(size))
        n = size[-1]
        pts = np.asarray(self.points, float)
        if n % pts.size:
            raise ValueError(f"batch size {n} is not a multiple of {pts.size} design points")
        return np.broadcast_to(np.tile(pts, n // pts.size), size).copy()


@dataclass(frozen=True)
class CorrelatedStream:
    """Stationary Gaussian AR(1) stream ``x_n = rho x_{n-1} + sigma e_n``."""

    rho: float = 0.5
    sigma: float = 0.26
    seed: int = 0
    lo: float = -1.0
    hi: float = 1.0
    kind = "stream"
    stream = True

    def __post_init__(self):
        if not abs(self.rho) < 1:
            raise ValueError("|rho| must be below 1")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")

    @property
    def stationary_sd(self):
        return self.sigma / np.sqrt(1 - self.rho**2)

    def sample(self, rng, size):
        size = tuple(np.atleast_1d(size))
        start = self.stationary_sd * rng.standard_normal(size[:-1] + (1,))
        e = self.sigma * rng.standard_normal(size)
        # First output is rho*x_{-1} + e_0 with x_{-1} stationary.
        x, _ = scipy.signal.lfilter([1.0], [1.0, -self.rho], e, axis=-1, zi=self.rho * start)
        return x


@dataclass(frozen=True)
class GammaCRF:
    """Gamma-curve camera response ``f(x) = x**gamma`` on ``[0, 1]``."""

    gamma: float = CRF_GAMMA
    noise_sigma: float = 0.0
    halfwidth = 0
    equalize = False

    def __call__(self, x):
        return np.clip(np.asarray(x, dtype=float), 0.0, None) ** self.gamma

    def noiseless(self, stream):
        return self(stream)


@dataclass(frozen=True)
class UserFunction:
    """Wraps a vectorised callable as a memoryless target."""

    func: Callable = field(compare=False)
    noise_sigma: float = 0.0
    name: str = "user"
    halfwidth = 0
    equalize = False

    def __call__(self, x):
        return np.asarray(self.func(np.asarray(x, dtype=float)), dtype=float)

    def noiseless(self, stream):
        return self(stream)


@dataclass(frozen=True)
class SyntheticChannel:
    """Short FIR followed by an odd polynomial ``z + a3 z**3 + a5 z**5``.

    With ``equalize=True`` a batch observes the inverse problem: its inputs
    are the received samples and its outputs the transmitted ones.
    """

    kernel: tuple = (0.0, 0.0, 1.0, 0.0, 0.0)
    a3: float = 0.0
    a5: float = 0.0
    noise_sigma: float = 0.0
    equalize: bool = False

    def __post_init__(self):
        if len(self.kernel) > 5 or len(self.kernel) % 2 == 0:
            raise ValueError("kernel must have an odd length of at most 5 taps")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")

    @property
    def halfwidth(self):
        return len(self.kernel) // 2

    def __call__(self, window):
        """Noiseless output for one window (chronological, centre = current sample)."""
        z = float(np.dot(np.asarray(window, float), self.kernel))
        return z + self.a3 * z**3 + self.a5 * z**5

    def noiseless(self, stream):
        """Outputs for every full window of ``stream`` (last axis)."""
        windows = sliding_window_view(np.asarray(stream, float), len(self.kernel), axis=-1)
        z = windows @ np.asarray(self.kernel, float)
        return z + self.a3 * z**3 + self.a5 * z**5


def synthetic_channel(kernel=(0.0, 0.0, 1.0, 0.0, 0.0), a3=0.0, a5=0.0,
                      noise_sigma=0.0, equalize=False):
    return SyntheticChannel(tuple(float(h) for h in kernel), float(a3), float(a5),
                            float(noise_sigma), bool(equalize))


def noise_sigma_for_snr(process, channel, snr_db, samples=200_000, seed=12345):
    """Noise level giving the requested SNR on the channel output."""
    rng = np.random.default_rng(seed)
    x = process.sample(rng, samples + 2 * channel.halfwidth)
    rms = np.sqrt(np.mean(channel.noiseless(x) ** 2))
    return float(rms * 10 ** (-snr_db / 20))


@dataclass(frozen=True)
class SampleBatch:
    """One step's samples.

    ``inputs`` carries ``lead`` context samples before and ``lag`` after the
    ``n`` samples that have observed outputs.
    """

    k: int
    inputs: np.ndarray
    outputs: np.ndarray
    lead: int = 0
    lag: int = 0
    window: tuple = (0, 0)

    @property
    def n(self):
        return self.outputs.shape[0]

    @property
    def x(self):
        """The samples aligned with ``outputs``."""
        return self.inputs[self.lead : self.lead + self.n]


def observe(process, target, rng, n, lead=0, lag=0, shape=()):
    """Draw inputs/outputs with the given context; leading ``shape`` adds replicas."""
    h = target.halfwidth
    length = n + lead + lag + 2 * h
    raw = process.sample(rng, tuple(shape) + (length,))
    clean = target.noiseless(raw)
    if h == 0:
        # Memoryless target: outputs are f at the aligned samples.
        inputs, outputs = raw, clean[..., lead : lead + n]
        if target.noise_sigma > 0:
            outputs = outputs + target.noise_sigma * rng.standard_normal(outputs.shape)
        return inputs, outputs
    received = clean
    if target.noise_sigma > 0:
        received = received + target.noise_sigma * rng.standard_normal(received.shape)
    sent = raw[..., h : length - h]
    if target.equalize:
        return received, sent[..., lead : lead + n]
    return sent, received[..., lead : lead + n]


def draw_batch(process, target, n, k, lead=0, lag=0):
    """Batch ``k`` of ``n`` observed samples, reproducible from ``(process.seed, k)``."""
    if n < 1:
        raise ValueError("batch size must be at least 1")
    inputs, outputs = observe(process, target, batch_rng(process.seed, k), n, lead, lag)
    span = n + lead + lag + 2 * target.halfwidth
    start = k * (span + 1)
    return SampleBatch(int(k), inputs, outputs, lead, lag, (start, start + span - 1))


def mixture_pdf(process, x):
    """Normalised density of a :class:`GaussianMixture` (untruncated)."""
    if not isinstance(process, GaussianMixture):
        raise WrongProcessTag(f"mixture_pdf needs a Gaussian mixture, got {process.kind}")
    return process.pdf(x)
