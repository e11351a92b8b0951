"""
Errors-in-variables Gaussian noise and Bernoulli-Gaussian impulsive contamination.
"""
import logging
import math
from dataclasses import dataclass
from typing import Iterator, Optional, Sequence, Union

import numpy as np

from .utils import check_range

logger = logging.getLogger(__name__)

ArrayLike = Union[float, complex, np.ndarray]


@dataclass(frozen=True)
class NoiseConfig:
    """
    Noise settings of one node.

    `snr_db` sets the input noise variance and `snr_out_db` (defaults to `snr_db`)
    the output one. A fixed `gamma` overrides the output SNR with
    sigma_o^2 = gamma * sigma_i^2. `math.inf` disables the Gaussian noise.
    """
    snr_db: float = 40.0
    snr_out_db: Optional[float] = None
    gamma: Optional[float] = None
    impulse_prob: float = 0.005
    impulse_var: float = 10.0
    seed: int = 0
    shared_measurement_noise: bool = False

    def __post_init__(self):
        if math.isnan(self.snr_db) or (self.snr_out_db is not None and math.isnan(self.snr_out_db)):
            raise ValueError("SNR values must not be NaN.")
        if self.gamma is not None:
            check_range("gamma", self.gamma, low=0.0)
        check_range("impulse_prob", self.impulse_prob, low=0.0, high=1.0)
        check_range("impulse_var", self.impulse_var, low=0.0)

    @property
    def output_snr_db(self) -> float:
        return self.snr_db if self.snr_out_db is None else self.snr_out_db

    def input_variance(self, signal_power: ArrayLike) -> ArrayLike:
        return snr_to_variance(signal_power, self.snr_db)

    def output_variance(self, signal_power: ArrayLike) -> ArrayLike:
        if self.gamma is not None:
            return self.gamma * self.input_variance(signal_power)
        return snr_to_variance(signal_power, self.output_snr_db)

    def effective_gamma(self) -> float:
        """
        Noise variance ratio sigma_o^2 / sigma_i^2 handed to the filter.

        A noiseless input and output with no fixed gamma gives 1.0.

        Raises:
            ValueError: If the input is noiseless but the output is not, so the ratio
                is unbounded and `gamma` must be given explicitly.
        """
        if self.gamma is not None:
            return float(self.gamma)
        if math.isinf(self.snr_db) and self.snr_db > 0:
            if not (math.isinf(self.output_snr_db) and self.output_snr_db > 0):
                raise ValueError(f"Noiseless input with output SNR {self.output_snr_db} dB gives an "
                                 f"unbounded gamma. Set 'gamma' explicitly.")
            return 1.0
        return 10.0 ** ((self.snr_db - self.output_snr_db) / 10.0)


@dataclass(frozen=True)
class NoisyPair:
    x_noisy: complex
    d_noisy: complex


@dataclass(frozen=True)
class NoisyStream:
    """Noisy regressor samples and desired samples, aligned by tau."""
    x_noisy: np.ndarray
    d_noisy: np.ndarray

    def __len__(self) -> int:
        return len(self.x_noisy)

    def __getitem__(self, tau: int) -> NoisyPair:
        return NoisyPair(x_noisy=complex(self.x_noisy[tau]), d_noisy=complex(self.d_noisy[tau]))

    def __iter__(self) -> Iterator[NoisyPair]:
        for tau in range(len(self)):
            yield self[tau]


def derive_seed(master: int, *keys: int) -> int:
    """
    Deterministic child seed for (run, node, ...) keys from a master seed.

    Uses numpy's SeedSequence entropy mixing, so children of distinct keys are
    statistically independent.
    """
    seq = np.random.SeedSequence([int(master), *[int(k) for k in keys]])
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def snr_to_variance(signal_power: ArrayLike, snr_db: float) -> ArrayLike:
    """
    Noise variance giving `snr_db` against `signal_power`.

    Args:
        signal_power (float or np.ndarray): Signal power, must be positive.
        snr_db (float): Signal-to-noise ratio in dB; math.inf gives 0.

    Returns:
        float or np.ndarray: signal_power * 10^(-snr_db/10).

    Raises:
        ValueError: If any power is not positive.
    """
    power = np.asarray(signal_power, dtype=float)
    if np.any(~(power > 0)):
        raise ValueError(f"Signal power must be positive. Got {signal_power}.")
    variance = power * 10.0 ** (-snr_db / 10.0)
    return float(variance) if variance.ndim == 0 else variance


def add_complex_gaussian(v: ArrayLike, var: ArrayLike, rng: np.random.Generator) -> ArrayLike:
    """
    Adds circular complex Gaussian noise of total variance `var`.

    Real and imaginary parts are independent with variance var/2 each.
    """
    var_arr = np.asarray(var, dtype=float)
    if np.any(var_arr < 0):
        raise ValueError(f"Noise variance must be non-negative. Got {var}.")
    shape = np.shape(v)
    scale = np.sqrt(var_arr / 2.0)
    noise = scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
    out = v + noise
    return complex(out) if np.ndim(out) == 0 else out


def impulsive_sample(p: float, var: float, rng: np.random.Generator, size: Optional[int] = None) -> ArrayLike:
    """
    Bernoulli-Gaussian draw: a complex Gaussian of variance `var` with probability `p`, else 0.

    Args:
        p (float): Impulse probability in [0, 1].
        var (float): Impulse variance, split evenly between real and imaginary parts.
        rng (np.random.Generator): Random source.
        size (int, optional): Number of draws. A scalar is returned when None.
    """
    check_range("p", p, low=0.0, high=1.0)
    check_range("var", var, low=0.0)
    shape = () if size is None else (size,)
    hits = rng.random(shape) < p
    amplitude = math.sqrt(var / 2.0) * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
    out = np.where(hits, amplitude, 0.0 + 0.0j)
    return complex(out) if size is None else out


def corrupt_stream(clean: Sequence[complex], cfg: NoiseConfig,
                   signal_power: Optional[ArrayLike] = None) -> NoisyStream:
    """
    Builds the noisy regressor / desired pairs of one node.

    For tau = 0 .. len(clean) - 2: x(tau) = v(tau) + m(tau) and
    d(tau) = v(tau + 1) + n(tau) + i(tau), where m and n are independent Gaussian
    substreams and i is the impulsive term, applied to the desired sample only.
    With `cfg.shared_measurement_noise` the desired sample reuses the measured
    next input sample instead of an independent output noise.

    Args:
        clean (sequence of complex): Clean complex voltage stream.
        cfg (NoiseConfig): Node noise configuration (SNR, gamma, impulses, seed).
        signal_power (float or np.ndarray, optional): Power used for the SNR conversion,
            scalar or per sample. Defaults to the empirical mean power of `clean`.

    Returns:
        NoisyStream: len(clean) - 1 pairs, deterministic given `cfg.seed`.

    Raises:
        ValueError: If the stream has fewer than two samples.
    """
    v = np.asarray([complex(s) for s in clean] if not isinstance(clean, np.ndarray) else clean, dtype=complex)
    if v.ndim != 1 or len(v) < 2:
        raise ValueError(f"Stream too short: need at least 2 samples, got {v.size}.")

    if signal_power is None:
        signal_power = float(np.mean(np.abs(v) ** 2))
    power = np.broadcast_to(np.asarray(signal_power, dtype=float), v.shape)

    input_rng, output_rng, impulse_rng = (np.random.default_rng(s)
                                          for s in np.random.SeedSequence(cfg.seed).spawn(3))
    impulses = impulsive_sample(cfg.impulse_prob, cfg.impulse_var, impulse_rng, size=len(v) - 1)

    if cfg.shared_measurement_noise:
        measured = add_complex_gaussian(v, cfg.input_variance(power), input_rng)
        x_noisy = measured[:-1]
        d_noisy = measured[1:] + impulses
    else:
        x_noisy = add_complex_gaussian(v[:-1], cfg.input_variance(power[:-1]), input_rng)
        d_noisy = add_complex_gaussian(v[1:], cfg.output_variance(power[1:]), output_rng) + impulses

    logger.debug("Corrupted %d samples (snr=%s dB, p=%s, seed=%s)",
                 len(v), cfg.snr_db, cfg.impulse_prob, cfg.seed)
    return NoisyStream(x_noisy=np.asarray(x_noisy), d_noisy=np.asarray(d_noisy))
