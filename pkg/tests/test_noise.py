import math

import numpy as np
import pytest
from scipy import stats

from damtccsim import noise
from damtccsim.noise import NoiseConfig
from damtccsim.phasegen import PhaseParams, ScenarioEvent, scenario_stream


def clean_stream(n=2001):
    p = PhaseParams.from_quantities(freq=50.0, sampling_rate=2500.0)
    return scenario_stream([ScenarioEvent(0, p)], n)


def test_snr_to_variance():
    assert noise.snr_to_variance(1.5, 40.0) == pytest.approx(1.5e-4)
    assert noise.snr_to_variance(2.0, 0.0) == pytest.approx(2.0)
    assert noise.snr_to_variance(1.0, math.inf) == 0.0
    assert noise.snr_to_variance(np.array([1.0, 10.0]), 10.0) == pytest.approx([0.1, 1.0])
    with pytest.raises(ValueError, match="positive"):
        noise.snr_to_variance(0.0, 10.0)


def test_noise_config_validation():
    with pytest.raises(ValueError, match="out of range"):
        NoiseConfig(impulse_prob=1.5)
    with pytest.raises(ValueError, match="out of range"):
        NoiseConfig(impulse_var=-1.0)
    with pytest.raises(ValueError, match="NaN"):
        NoiseConfig(snr_db=math.nan)


def test_effective_gamma():
    assert NoiseConfig(snr_db=20.0).effective_gamma() == pytest.approx(1.0)
    assert NoiseConfig(snr_db=20.0, snr_out_db=10.0).effective_gamma() == pytest.approx(10.0)
    assert NoiseConfig(snr_db=20.0, gamma=0.5).effective_gamma() == 0.5
    assert NoiseConfig(snr_db=math.inf).effective_gamma() == 1.0
    with pytest.raises(ValueError, match="unbounded gamma"):
        NoiseConfig(snr_db=math.inf, snr_out_db=20.0).effective_gamma()
    assert NoiseConfig(snr_db=math.inf, snr_out_db=20.0, gamma=3.0).effective_gamma() == 3.0
    assert NoiseConfig(snr_db=20.0, snr_out_db=math.inf).effective_gamma() == 0.0
    cfg = NoiseConfig(snr_db=20.0, gamma=2.0)
    assert cfg.output_variance(1.0) == pytest.approx(2.0 * cfg.input_variance(1.0))


def test_noiseless_stream_is_exact():
    v = clean_stream()
    stream = noise.corrupt_stream(v, NoiseConfig(snr_db=math.inf, impulse_prob=0.0))
    assert len(stream) == len(v) - 1
    assert np.array_equal(stream.x_noisy, v[:-1])
    assert np.array_equal(stream.d_noisy, v[1:])
    pair = stream[3]
    assert pair.x_noisy == v[3] and pair.d_noisy == v[4]


def test_corrupt_stream_is_deterministic():
    v = clean_stream()
    a = noise.corrupt_stream(v, NoiseConfig(snr_db=20.0, seed=11))
    b = noise.corrupt_stream(v, NoiseConfig(snr_db=20.0, seed=11))
    c = noise.corrupt_stream(v, NoiseConfig(snr_db=20.0, seed=12))
    assert np.array_equal(a.x_noisy, b.x_noisy) and np.array_equal(a.d_noisy, b.d_noisy)
    assert not np.array_equal(a.x_noisy, c.x_noisy)


def test_corrupt_stream_too_short():
    with pytest.raises(ValueError, match="too short"):
        noise.corrupt_stream([1.0 + 0j], NoiseConfig())


def test_gaussian_noise_variance():
    v = clean_stream(200001)
    cfg = NoiseConfig(snr_db=20.0, snr_out_db=10.0, impulse_prob=0.0, seed=3)
    stream = noise.corrupt_stream(v, cfg, signal_power=1.5)
    m = stream.x_noisy - v[:-1]
    n = stream.d_noisy - v[1:]
    assert np.var(m) == pytest.approx(1.5e-2, rel=0.05)
    assert np.var(n) == pytest.approx(1.5e-1, rel=0.05)
    # independent substreams and circular noise
    rho = abs(np.mean(m * np.conj(n))) / math.sqrt(np.mean(np.abs(m) ** 2) * np.mean(np.abs(n) ** 2))
    assert rho < 0.01
    assert np.var(m.real) == pytest.approx(np.var(m.imag), rel=0.05)


def test_impulses_hit_output_only():
    v = clean_stream(20001)
    cfg = NoiseConfig(snr_db=math.inf, impulse_prob=1.0, impulse_var=10.0, seed=5)
    stream = noise.corrupt_stream(v, cfg)
    assert np.array_equal(stream.x_noisy, v[:-1])
    assert np.var(stream.d_noisy - v[1:]) == pytest.approx(10.0, rel=0.05)


def test_impulse_counts_follow_binomial():
    rng = np.random.default_rng(0)
    blocks, block, p = 2000, 1000, 0.005
    draws = noise.impulsive_sample(p, 10.0, rng, size=blocks * block).reshape(blocks, block)
    counts = np.count_nonzero(draws, axis=1)
    # bins 0..10 and a tail bin, all with expected frequency above 5
    observed = np.bincount(np.minimum(counts, 11), minlength=12)
    probs = np.append(stats.binom.pmf(np.arange(11), block, p), stats.binom.sf(10, block, p))
    _, p_value = stats.chisquare(observed, blocks * probs)
    assert p_value > 0.01


def test_impulse_edge_cases():
    rng = np.random.default_rng(0)
    assert noise.impulsive_sample(0.0, 10.0, rng) == 0
    assert np.count_nonzero(noise.impulsive_sample(1.0, 10.0, rng, size=100)) == 100
    assert noise.impulsive_sample(1.0, 0.0, rng) == 0
    assert not np.any(noise.impulsive_sample(1.0, 0.0, rng, size=10))


def test_shared_measurement_noise():
    v = clean_stream()
    cfg = NoiseConfig(snr_db=20.0, impulse_prob=0.0, shared_measurement_noise=True, seed=2)
    stream = noise.corrupt_stream(v, cfg)
    assert np.array_equal(stream.d_noisy[:-1], stream.x_noisy[1:])


def test_derive_seed():
    assert noise.derive_seed(0, 1, 2) == noise.derive_seed(0, 1, 2)
    seeds = {noise.derive_seed(0, run, node) for run in range(5) for node in range(8)}
    assert len(seeds) == 40
