import math

import numpy as np
import pandas as pd
import pytest

from damtccsim import analysis
from damtccsim.analysis import MetricSeries, StabilityInputs
from damtccsim.diffusion import CombinationMatrix, NetworkTopology, metropolis_weights
from damtccsim.phasegen import PhaseParams, ScenarioEvent, make_type_d_sag, scenario_stream
from damtccsim.wlfilter import AugmentedWeights, FilterParams, damtcc_cost, damtcc_gradients, error, frequency_estimate

DT = 1 / 2500
OMEGA_DT = 2 * math.pi * 50 * DT


def random_points(count, seed=0):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        z = rng.standard_normal(8)
        w = AugmentedWeights(h=complex(z[0], z[1]), g=complex(z[2], z[3]))
        v = complex(z[4], z[5])
        d = complex(z[6], z[7])
        p = FilterParams(mu=0.05, sigma=rng.uniform(0.5, 2.0), gamma=rng.uniform(0.1, 2.0))
        yield w, v, d, p


def test_finite_differences_match_analytic_gradients():
    for w, v, d, p in random_points(200):
        analytic = damtcc_gradients(error(d, w, v), v, w, p)
        numeric = analysis.finite_difference_gradients(w, v, d, p)
        cost = damtcc_cost(error(d, w, v), w, p)
        for a, n in zip(analytic, numeric):
            assert abs(a - n) <= 1e-6 * abs(a) + 1e-9 * cost


def test_finite_differences_at_zero_error():
    w = AugmentedWeights(h=0.9 - 0.1j, g=0.05j)
    v = 1.0 + 0.3j
    d = v * np.conj(w.h) + np.conj(v) * np.conj(w.g)
    grad_h, grad_g = analysis.finite_difference_gradients(w, v, d, FilterParams())
    assert abs(grad_h) < 1e-9 and abs(grad_g) < 1e-9


def test_finite_differences_are_second_order():
    w, v, d, p = next(random_points(1, seed=3))
    exact = damtcc_gradients(error(d, w, v), v, w, p)[0]
    coarse = abs(analysis.finite_difference_gradients(w, v, d, p, step=1e-2)[0] - exact)
    fine = abs(analysis.finite_difference_gradients(w, v, d, p, step=5e-3)[0] - exact)
    assert 3.0 < coarse / fine < 5.0


def test_finite_differences_reject_bad_step():
    with pytest.raises(ValueError, match="step"):
        analysis.finite_difference_gradients(AugmentedWeights(), 1j, 1j, FilterParams(), step=0.0)


def test_symbolic_gradients_match_analytic_gradients():
    for w, v, d, p in random_points(20, seed=1):
        analytic = damtcc_gradients(error(d, w, v), v, w, p)
        symbolic = analysis.symbolic_gradients(w, v, d, p)
        for a, s in zip(analytic, symbolic):
            assert s == pytest.approx(a, rel=1e-9, abs=1e-14)


def test_solve_wl_weights_balanced():
    v = scenario_stream([ScenarioEvent(0, PhaseParams.from_quantities(theta0=0.4))], 3)
    w = analysis.solve_wl_weights(v)
    assert abs(w.h - np.exp(-1j * OMEGA_DT)) < 1e-12
    assert abs(w.g) < 1e-12


def test_solve_wl_weights_type_d():
    p = make_type_d_sag(0.5, freq=50.0, sampling_rate=2500.0)
    v = scenario_stream([ScenarioEvent(0, p)], 400)
    w = analysis.solve_wl_weights(v[:3])
    assert np.max(np.abs(error(v[1:], w, v[:-1]))) < 1e-10
    est = frequency_estimate(w, DT)
    assert est.valid
    assert est.f_hat == pytest.approx(50.0, abs=1e-6)
    assert analysis.oracle_weights(p).h == pytest.approx(w.h, abs=1e-12)


def test_solve_wl_weights_singular():
    with pytest.raises(analysis.SingularSystemError, match="Singular"):
        analysis.solve_wl_weights([0j, 0j, 0j])
    with pytest.raises(np.linalg.LinAlgError):
        analysis.solve_wl_weights([1.0, 0.5, -0.2])
    with pytest.raises(ValueError, match="3 consecutive"):
        analysis.solve_wl_weights([1j, 1.0])


def test_kappa():
    assert analysis.kappa(1.0, 0.0) == 1.0
    assert analysis.kappa(1.0, 0.2) == pytest.approx(1 / 1.1)
    assert analysis.kappa(1e6, 0.2) == pytest.approx(1.0)
    assert analysis.kappa(1.0, 0.1) > analysis.kappa(1.0, 0.2) > analysis.kappa(1.0, 0.4)
    with pytest.raises(ValueError, match="positive"):
        analysis.kappa(0.0, 0.1)


def test_input_covariance_constant():
    r = analysis.input_covariance(np.ones((10, 2), dtype=complex))
    assert np.allclose(r, np.ones((2, 2)))
    with pytest.raises(ValueError, match="at least 2"):
        analysis.input_covariance(np.ones((1, 2), dtype=complex))


def test_input_covariance_balanced():
    v = scenario_stream([ScenarioEvent(0, PhaseParams.from_quantities())], 50 * 40)
    r = analysis.input_covariance(analysis.regressors(v))
    assert np.allclose(r, r.conj().T, atol=1e-12)
    assert r[0, 0].real == pytest.approx(1.5)
    assert r[1, 1].real == pytest.approx(1.5)
    assert abs(r[0, 1]) < 1e-10
    eig = np.linalg.eigvalsh(analysis.input_covariance(np.random.default_rng(0).standard_normal((5, 2)) + 0j))
    assert np.all(eig >= -1e-12)


def test_stability_bound_examples():
    assert analysis.stability_bound(StabilityInputs(np.eye(2), 1.0, 0.0, 1.0)) == pytest.approx(2.0)
    si = StabilityInputs(np.diag([1.5, 0.5]), 1.0, 0.2, 2.0)
    assert analysis.stability_bound(si) == pytest.approx(4 / (1 / 1.1) ** 2 / 1.5)
    assert analysis.stability_bound(si, eigenvalue="min") == pytest.approx(4 / (1 / 1.1) ** 2 / 0.5)
    doubled = StabilityInputs(np.diag([1.5, 0.5]), 1.0, 0.2, 4.0)
    assert analysis.stability_bound(doubled) == pytest.approx(2 * analysis.stability_bound(si))


def test_stability_bound_rejects_singular_covariance():
    with pytest.raises(ValueError, match="positive definite"):
        analysis.stability_bound(StabilityInputs(np.diag([1.0, 0.0]), 1.0, 0.0, 1.0))
    with pytest.raises(ValueError, match="Hermitian"):
        StabilityInputs(np.array([[1, 1j], [1j, 1]]), 1.0, 0.0, 1.0)


def test_balanced_stability_inputs():
    si = analysis.stability_inputs(PhaseParams.from_quantities(), sigma=1.0, sigma_i2=0.0, gamma=1.0)
    assert si.w_bar_norm2 == pytest.approx(2.0)
    assert analysis.stability_bound(si) == pytest.approx(8 / 3, rel=1e-9)


def test_mean_error_recursion():
    c = metropolis_weights(NetworkTopology.fixture("topology1")).c
    p = PhaseParams.from_quantities()
    si = analysis.stability_inputs(p, sigma=1.0, sigma_i2=0.0, gamma=1.0)
    mu_max = analysis.stability_bound(si)
    w_opt = analysis.oracle_weights(p)
    stable = analysis.mean_error_recursion(c, [0.1 * mu_max] * 8, [si] * 8, w_opt, AugmentedWeights(), 1000)
    assert stable.spectral_radius < 1
    assert stable.peak_weight_norm < 10
    unstable = analysis.mean_error_recursion(c, [50 * mu_max] * 8, [si] * 8, w_opt, AugmentedWeights(), 1000)
    assert unstable.spectral_radius > 1
    assert unstable.peak_weight_norm > 1e3
    with pytest.raises(ValueError, match="per node"):
        analysis.mean_error_recursion(c, [0.1], [si], w_opt, AugmentedWeights(), 10)


def series_from(values, valid=None, runs=1):
    """(iters, nodes) values repeated for each run."""
    values = np.asarray(values, dtype=float)
    valid = np.ones(values.shape, dtype=bool) if valid is None else np.asarray(valid)
    zeros = np.zeros(values.shape)
    return MetricSeries.concat([MetricSeries.from_arrays(values, valid, zeros, "damtcc", run=r)
                                for r in range(runs)])


def test_bias_variance_constant():
    table = analysis.bias_variance(series_from(np.full((10, 2), 50.0)), 50.0, 5)
    assert table["bias"].tolist() == [0.0, 0.0]
    assert table["variance"].tolist() == [0.0, 0.0]
    assert table["n_valid"].tolist() == [5, 5]


def test_bias_variance_sample_convention():
    table = analysis.bias_variance(series_from([[49.0], [51.0]]), 50.0, 2)
    assert table.loc[0, "bias"] == pytest.approx(0.0)
    assert table.loc[0, "variance"] == pytest.approx(2.0)


def test_bias_variance_excludes_invalid_rows():
    values = [[49.0, 1.0], [51.0, 2.0], [1000.0, 3.0]]
    valid = [[True, False], [True, False], [False, False]]
    table = analysis.bias_variance(series_from(values, valid), 50.0, 3)
    assert table.loc[0, "n_invalid"] == 1
    assert table.loc[0, "variance"] == pytest.approx(2.0)
    assert table.loc[1, "all_invalid"]
    assert math.isnan(table.loc[1, "bias"])


def test_bias_variance_window_too_long():
    with pytest.raises(ValueError, match="exceeds"):
        analysis.bias_variance(series_from(np.full((4, 1), 50.0)), 50.0, 5)


def test_bias_variance_ignores_run_order():
    rng = np.random.default_rng(2)
    runs = [MetricSeries.from_arrays(50 + rng.standard_normal((20, 3)), np.ones((20, 3), bool),
                                     np.zeros((20, 3)), "damtcc", run=r) for r in range(5)]
    forward = analysis.bias_variance(MetricSeries.concat(runs), 50.0, 10)
    backward = analysis.bias_variance(MetricSeries.concat(runs[::-1]), 50.0, 10)
    pd.testing.assert_frame_equal(forward, backward, check_exact=True)


def test_metric_series_requires_contiguous_iterations():
    frame = series_from(np.full((3, 1), 50.0)).frame
    with pytest.raises(ValueError, match="contiguous"):
        MetricSeries(frame[frame["iteration"] != 2])
    with pytest.raises(KeyError, match="missing"):
        MetricSeries(frame.drop(columns=["valid"]))


def test_settling_and_tracking_error():
    values = np.concatenate([np.full((10, 2), 40.0), np.full((10, 2), 50.05)])
    series = series_from(values)
    settled = analysis.settling_time(series, 50.0, tol=0.1)
    assert settled.loc[0, "settling_iteration"] == 11
    never = analysis.settling_time(series_from(np.full((5, 1), 40.0)), 50.0, tol=0.1)
    assert math.isnan(never.loc[0, "settling_iteration"])
    tracking = analysis.tracking_error(series, 50.0, 5)
    assert tracking.loc[0, "mean_abs_error"] == pytest.approx(0.05)
    assert tracking.loc[0, "oscillation"] == pytest.approx(0.0)


def test_metric_series_csv_format():
    text = series_from([[50.123456789012345]]).to_csv()
    assert text.splitlines()[0] == "run,iteration,node,f_hat,valid,sq_error,algorithm"
    assert "50.1234567890123" in text
    assert "\r" not in text


def test_default_window():
    assert analysis.default_window(5000) == 1000
    assert analysis.default_window(1) == 1


def test_mean_error_recursion_without_cooperation():
    c = CombinationMatrix.identity(2).c
    p = PhaseParams.from_quantities()
    si = analysis.stability_inputs(p, 1.0, 0.0, 1.0)
    result = analysis.mean_error_recursion(c, [0.1, 0.1], [si, si], analysis.oracle_weights(p),
                                           AugmentedWeights(), 5)
    assert result.iterations == 5
