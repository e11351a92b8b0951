import math

import numpy as np
import pytest

from damtccsim import wlfilter
from damtccsim.phasegen import PhaseParams, ScenarioEvent, make_type_d_sag, scenario_stream
from damtccsim.wlfilter import AdaptiveFilter, Algorithm, AugmentedWeights, FilterParams

DT = 1 / 2500
OMEGA_DT = 2 * math.pi * 50 * DT


def test_filter_params_validation():
    with pytest.raises(ValueError, match="mu"):
        FilterParams(mu=0.0)
    with pytest.raises(ValueError, match="sigma"):
        FilterParams(sigma=-1.0)
    with pytest.raises(ValueError, match="gamma"):
        FilterParams(gamma=-0.1)
    FilterParams(gamma=0.0)


def test_regressor_pair():
    pair = wlfilter.RegressorPair.from_sample(1 + 2j, 3j)
    assert np.array_equal(pair.x, np.array([1 + 2j, 1 - 2j]))
    assert pair.d == 3j


def test_balanced_prediction_is_exact():
    v = scenario_stream([ScenarioEvent(0, PhaseParams.from_quantities())], 100)
    w = AugmentedWeights(h=np.exp(-1j * OMEGA_DT), g=0j)
    e = wlfilter.error(v[1:], w, v[:-1])
    assert np.max(np.abs(e)) < 1e-12


@pytest.mark.parametrize("h", [np.exp(-1j * OMEGA_DT), np.exp(1j * OMEGA_DT)])
def test_frequency_estimate_balanced(h):
    est = wlfilter.frequency_estimate(AugmentedWeights(h=h, g=0j), DT)
    assert est.valid
    assert est.f_hat == pytest.approx(50.0, abs=1e-9)


def test_frequency_estimate_initial_weights():
    est = wlfilter.frequency_estimate(AugmentedWeights(), DT)
    assert est.valid and est.f_hat == 0.0


def test_frequency_estimate_invalid_discriminant():
    est = wlfilter.frequency_estimate(AugmentedWeights(h=1 + 0.1j, g=0.5 + 0j), DT)
    assert not est.valid
    assert math.isfinite(est.f_hat)


def test_frequency_estimate_arrays():
    h = np.array([np.exp(-1j * OMEGA_DT), 1 + 0.1j])
    g = np.array([0j, 0.5 + 0j])
    est = wlfilter.frequency_estimate(AugmentedWeights(h=h, g=g), DT)
    assert est.f_hat[0] == pytest.approx(50.0)
    assert est.valid.tolist() == [True, False]


def test_frequency_estimate_rejects_bad_dt():
    with pytest.raises(ValueError, match="dt"):
        wlfilter.frequency_estimate(AugmentedWeights(), 0.0)


def test_zero_error_gives_zero_gradients():
    w = AugmentedWeights(h=0.3 - 0.2j, g=0.1j)
    grads = wlfilter.damtcc_gradients(0j, 1 + 1j, w, FilterParams())
    assert grads == (0j, 0j)


def test_degenerate_weights():
    w = AugmentedWeights(h=0j, g=0j)
    with pytest.raises(wlfilter.DegenerateWeightsError, match="Degenerate"):
        wlfilter.damtcc_gradients(1 + 0j, 1 + 0j, w, FilterParams(gamma=0.0))
    with pytest.raises(ZeroDivisionError):
        wlfilter.damtcc_cost(1 + 0j, w, FilterParams(gamma=0.0))


def test_damtcc_step_increases_correntropy():
    p = FilterParams(mu=1e-3, sigma=1.0, gamma=1.0)
    w = AugmentedWeights(h=0.8 + 0.1j, g=0.05 - 0.02j)
    v, d = 0.7 - 0.9j, 0.2 + 1.1j
    before = wlfilter.damtcc_cost(wlfilter.error(d, w, v), w, p)
    h, g = wlfilter.damtcc_adapt(w, wlfilter.damtcc_gradients(wlfilter.error(d, w, v), v, w, p), p)
    w_new = AugmentedWeights(h=h, g=g)
    after = wlfilter.damtcc_cost(wlfilter.error(d, w_new, v), w_new, p)
    assert after > before


def test_daclms_update():
    w = AugmentedWeights(h=1 + 0j, g=0j)
    v, d = 1j, 2 + 0j
    e = wlfilter.error(d, w, v)
    h, g = wlfilter.daclms_adapt(w, e, v, 0.1)
    assert h == pytest.approx(1 + 0.1 * np.conj(e) * v)
    assert g == pytest.approx(0.1 * np.conj(e) * np.conj(v))


@pytest.mark.parametrize("algorithm", list(Algorithm))
def test_strictly_linear_keeps_conjugate_weight(algorithm):
    w = AugmentedWeights(h=1 + 0j, g=0.2j)
    psi, upsilon, _ = wlfilter.adapt_step(w, 0.5 + 0.5j, 1j, FilterParams(), algorithm, strictly_linear=True)
    assert upsilon == 0.2j
    assert psi != w.h


def test_adaptive_filter_converges_on_clean_balanced_data():
    v = scenario_stream([ScenarioEvent(0, PhaseParams.from_quantities())], 3001)
    f = AdaptiveFilter(FilterParams(mu=0.05))
    for x_n, d_n in zip(v[:-1], v[1:]):
        f.update(x_n, d_n)
    est = f.frequency(DT)
    assert f.n == 3000
    assert est.valid
    assert est.f_hat == pytest.approx(50.0, abs=1e-6)
    assert abs(f.weights.g) < 1e-3
    assert abs(f.weights.h - np.exp(-1j * OMEGA_DT)) < 1e-3


@pytest.mark.parametrize("algorithm", list(Algorithm))
def test_adaptive_filter_tracks_unbalanced_source(algorithm):
    v = scenario_stream([ScenarioEvent(0, make_type_d_sag(0.5))], 8001)
    f = AdaptiveFilter(FilterParams(mu=0.05), algorithm=algorithm)
    for x_n, d_n in zip(v[:-1], v[1:]):
        f.update(x_n, d_n)
    assert f.frequency(DT).f_hat == pytest.approx(50.0, abs=1e-3)


def test_strictly_linear_filter_is_biased_on_unbalanced_source():
    v = scenario_stream([ScenarioEvent(0, make_type_d_sag(0.5))], 8001)
    f = AdaptiveFilter(FilterParams(mu=0.05), strictly_linear=True)
    for x_n, d_n in zip(v[:-1], v[1:]):
        f.update(x_n, d_n)
    assert abs(f.frequency(DT).f_hat - 50.0) > 1.0


def test_damtcc_step_matches_hand_composed_update():
    w = AugmentedWeights(h=0.9 + 0j, g=0j)
    v, d = 0.6 - 0.8j, 0.7 - 0.9j
    p = FilterParams(mu=0.05, sigma=1.0, gamma=0.5)
    psi, upsilon, e = wlfilter.adapt_step(w, v, d, p)

    y = v * 0.9
    expected_e = d - y
    denom = 0.81 + 0.5
    err2 = abs(expected_e) ** 2
    scale = math.exp(-err2 / (2 * denom)) / (2 * denom ** 2)
    expected_h = 0.9 + 0.05 * scale * (expected_e.conjugate() * v * denom + err2 * 0.9)
    expected_g = 0.05 * scale * expected_e.conjugate() * v.conjugate() * denom
    assert e == pytest.approx(expected_e, abs=1e-15)
    assert psi == pytest.approx(expected_h, abs=1e-15)
    assert upsilon == pytest.approx(expected_g, abs=1e-15)


@pytest.mark.parametrize("sigma", [1.0, 10.0])
def test_damtcc_update_vanishes_for_large_errors(sigma):
    w = AugmentedWeights(h=0.9 - 0.1j, g=0.1j)
    v = 1.0 + 0.5j
    p = FilterParams(mu=0.05, sigma=sigma, gamma=1.0)
    denom = abs(w.h) ** 2 + abs(w.g) ** 2 + p.gamma
    w_norm = math.hypot(abs(w.h), abs(w.g))

    # kernel factor below 1e-8 once |e|^2 > 40 sigma^2 D
    edge = math.sqrt(40.01 * sigma ** 2 * denom) * np.exp(0.3j)
    assert wlfilter.damtcc_cost(edge, w, p) < 1e-8

    steps = []
    for size in (10.0, 1e2, 1e3):
        e = size * np.exp(0.3j)
        grad_h, grad_g = wlfilter.damtcc_gradients(e, v, w, p)
        step = p.mu * math.hypot(abs(grad_h), abs(grad_g))
        kernel = math.exp(-size ** 2 / (2 * sigma ** 2 * denom))
        bound = p.mu * kernel * (math.sqrt(2) * size * abs(v) * denom + size ** 2 * w_norm) / (2 * sigma ** 2 * denom ** 2)
        assert step <= bound * (1 + 1e-12)
        steps.append(step)
    assert steps[0] > steps[1] >= steps[2]
    assert steps[2] < 1e-8
