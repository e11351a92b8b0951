"""
End-to-end Monte-Carlo checks of tracking, robustness and SNR trends.
Run with `pytest -m slow`.
"""
import math

import numpy as np
import pytest

from damtccsim import FrequencySimulator
from damtccsim.analysis import bias_variance, default_window, tracking_error
from damtccsim.diffusion import NetworkTopology
from damtccsim.noise import NoiseConfig
from damtccsim.phasegen import PhaseParams, ScenarioEvent, make_type_d_sag
from damtccsim.wlfilter import Algorithm

pytestmark = pytest.mark.slow

DT = 1 / 2500
BALANCED = PhaseParams.from_quantities(freq=50.0, sampling_rate=2500.0)


def network(snr_db=40.0, impulse_prob=0.0, **kwargs):
    return FrequencySimulator(NetworkTopology.fixture("topology1"),
                              NoiseConfig(snr_db=snr_db, impulse_prob=impulse_prob, impulse_var=10.0),
                              DT, **kwargs)


def test_balanced_convergence():
    iters = 5000
    series = network().run([ScenarioEvent(0, BALANCED)], iters, runs=20, seed=0)
    error = tracking_error(series, 50.0, default_window(iters))
    assert error.loc[0, "mean_abs_error"] < 0.05


def test_unbalanced_tracking_beats_strictly_linear():
    iters = 6000
    events = [ScenarioEvent(0, BALANCED), ScenarioEvent(iters // 2, make_type_d_sag(0.5))]
    window = default_window(iters)
    wl = tracking_error(network().run(events, iters, runs=5, seed=1), 50.0, window)
    sl = tracking_error(network(strictly_linear=True).run(events, iters, runs=5, seed=1), 50.0, window)
    assert wl.loc[0, "mean_abs_error"] < 0.1
    assert sl.loc[0, "rms_error"] >= 5 * wl.loc[0, "rms_error"]


def test_impulsive_robustness():
    iters = 3000
    series = network(impulse_prob=0.005).run([ScenarioEvent(0, BALANCED)], iters, runs=50, seed=2,
                                             algorithms=(Algorithm.DAMTCC, Algorithm.DACLMS))
    table = bias_variance(series, 50.0, default_window(iters)).set_index(["algorithm", "node"])
    damtcc = table.loc["damtcc", "variance"]
    daclms = table.loc["daclms", "variance"]
    assert np.all(damtcc.to_numpy() < daclms.to_numpy())
    assert damtcc.mean() < daclms.mean()


def test_snr_sweep_trend():
    iters = 3000
    snrs = [10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0]
    base = network(impulse_prob=0.005)
    damtcc, daclms = [], []
    for snr in snrs:
        series = base.with_noise(snr_db=snr).run([ScenarioEvent(0, BALANCED)], iters, runs=50, seed=3,
                                                 algorithms=(Algorithm.DAMTCC, Algorithm.DACLMS))
        table = bias_variance(series, 50.0, default_window(iters))
        means = table.groupby("algorithm")["variance"].mean()
        damtcc.append(means["damtcc"])
        daclms.append(means["daclms"])
    violations = sum(later > earlier for earlier, later in zip(damtcc, damtcc[1:]))
    assert violations <= 1
    for k, snr in enumerate(snrs):
        if snr <= 20.0:
            assert damtcc[k] <= daclms[k]
    assert all(math.isfinite(v) for v in damtcc)
