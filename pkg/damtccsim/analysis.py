"""
Verification oracles, stability bound and experiment metrics.
"""
import functools
import logging
import math
from dataclasses import dataclass
from typing import Any, Iterable, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import sympy

from .phasegen import PhaseParams, ScenarioEvent, scenario_stream
from .wlfilter import (AugmentedWeights, FilterParams, RegressorPair, damtcc_cost, error)

logger = logging.getLogger(__name__)


class SingularSystemError(np.linalg.LinAlgError):
    """Raised when the widely-linear oracle system has no unique solution."""


METRIC_COLUMNS = ["run", "iteration", "node", "f_hat", "valid", "sq_error", "algorithm"]


class MetricSeries:
    """
    Per (run, iteration, node) records of a simulation, backed by a pandas DataFrame.

    Columns: run, iteration, node, f_hat, valid, sq_error, algorithm and,
    when recorded by the driver, weight_norm.
    """

    def __init__(self, frame: pd.DataFrame):
        missing = [c for c in METRIC_COLUMNS if c not in frame.columns]
        if missing:
            raise KeyError(f"MetricSeries is missing columns {missing}.")
        for (run, algorithm), group in frame.groupby(["run", "algorithm"], sort=False):
            iterations = np.unique(group["iteration"].to_numpy())
            if len(iterations) and not np.array_equal(iterations, np.arange(iterations[0], iterations[0] + len(iterations))):
                raise ValueError(f"Iterations of run {run} ({algorithm}) are not contiguous.")
        self.frame = frame.reset_index(drop=True)

    @classmethod
    def from_arrays(cls, f_hat: np.ndarray, valid: np.ndarray, sq_error: np.ndarray, algorithm: str,
                    run: int = 0, weight_norm: Optional[np.ndarray] = None, first_iteration: int = 1) -> "MetricSeries":
        """
        Builds a series from (iters, nodes) arrays.
        """
        iters, nodes = f_hat.shape
        data = {
            "run": np.full(iters * nodes, run, dtype=np.int64),
            "iteration": np.repeat(np.arange(first_iteration, first_iteration + iters, dtype=np.int64), nodes),
            "node": np.tile(np.arange(nodes, dtype=np.int64), iters),
            "f_hat": f_hat.reshape(-1),
            "valid": valid.reshape(-1).astype(bool),
            "sq_error": sq_error.reshape(-1),
            "algorithm": algorithm,
        }
        if weight_norm is not None:
            data["weight_norm"] = weight_norm.reshape(-1)
        return cls(pd.DataFrame(data))

    @classmethod
    def concat(cls, series: Iterable["MetricSeries"]) -> "MetricSeries":
        return cls(pd.concat([s.frame for s in series], ignore_index=True))

    def __len__(self) -> int:
        return len(self.frame)

    @property
    def iterations(self) -> int:
        return int(self.frame["iteration"].nunique())

    def to_csv(self, path_or_buf=None, columns: Sequence[str] = METRIC_COLUMNS):
        """CSV with a fixed header, LF line endings and 15 significant digits."""
        return self.frame.to_csv(path_or_buf, columns=list(columns), index=False,
                                 float_format="%.15g", lineterminator="\n", encoding="utf-8")


@dataclass(frozen=True)
class StabilityInputs:
    r: np.ndarray
    sigma: float
    sigma_i2: float
    w_bar_norm2: float

    def __post_init__(self):
        r = np.asarray(self.r, dtype=complex)
        if r.shape != (2, 2):
            raise ValueError(f"Input covariance must be 2x2. Got shape {r.shape}.")
        if not np.allclose(r, r.conj().T, atol=1e-12):
            raise ValueError("Input covariance must be Hermitian.")
        object.__setattr__(self, "r", r)


@dataclass(frozen=True)
class MeanRecursionResult:
    spectral_radius: float
    peak_weight_norm: float
    iterations: int


# ---------------------------------------------------------------- oracles

def _instantaneous_cost(h: complex, g: complex, v: complex, d: complex, p: FilterParams) -> float:
    w = AugmentedWeights(h=h, g=g)
    return float(damtcc_cost(error(d, w, v), w, p))


def finite_difference_gradients(w: AugmentedWeights, v: complex, d: complex, p: FilterParams,
                                step: float = 1e-6) -> Tuple[complex, complex]:
    """
    Central-difference Wirtinger gradients of the instantaneous total correntropy.

    Perturbs Re h, Im h, Re g, Im g and assembles d/dz* = (d/dRe z + j d/dIm z) / 2.

    Args:
        w (AugmentedWeights): Point of evaluation (scalars).
        v (complex): Regressor sample.
        d (complex): Desired sample.
        p (FilterParams): Kernel width and gamma (mu unused).
        step (float): Perturbation size, must be positive.

    Returns:
        tuple: (grad_h, grad_g).
    """
    if not step > 0:
        raise ValueError(f"Finite-difference step must be positive. Got {step}.")
    h, g = complex(w.h), complex(w.g)
    partials = []
    for dh, dg in ((step, 0), (1j * step, 0), (0, step), (0, 1j * step)):
        plus = _instantaneous_cost(h + dh, g + dg, v, d, p)
        minus = _instantaneous_cost(h - dh, g - dg, v, d, p)
        partials.append((plus - minus) / (2.0 * step))
    grad_h = 0.5 * (partials[0] + 1j * partials[1])
    grad_g = 0.5 * (partials[2] + 1j * partials[3])
    logger.debug("Finite-difference gradients at h=%s g=%s: %s %s", h, g, grad_h, grad_g)
    return grad_h, grad_g


@functools.lru_cache(maxsize=1)
def _compiled_symbolic_gradients():
    hr, hi, gr, gi, vr, vi, dr, di = sympy.symbols("hr hi gr gi vr vi dr di", real=True)
    sigma, gamma = sympy.symbols("sigma gamma", positive=True)
    h = hr + sympy.I * hi
    g = gr + sympy.I * gi
    v = vr + sympy.I * vi
    d = dr + sympy.I * di
    e = sympy.expand(d - sympy.conjugate(h) * v - sympy.conjugate(g) * sympy.conjugate(v))
    err2 = sympy.re(e) ** 2 + sympy.im(e) ** 2
    cost = sympy.exp(-err2 / (2 * sigma ** 2 * (hr ** 2 + hi ** 2 + gr ** 2 + gi ** 2 + gamma)))
    grad_h = (sympy.diff(cost, hr) + sympy.I * sympy.diff(cost, hi)) / 2
    grad_g = (sympy.diff(cost, gr) + sympy.I * sympy.diff(cost, gi)) / 2
    args = [hr, hi, gr, gi, vr, vi, dr, di, sigma, gamma]
    return sympy.lambdify(args, [grad_h, grad_g], modules=["numpy", "math"])


def symbolic_gradients(w: AugmentedWeights, v: complex, d: complex, p: FilterParams) -> Tuple[complex, complex]:
    """
    Wirtinger gradients obtained by symbolic differentiation of the instantaneous cost.

    The expression is built once with SymPy and compiled with lambdify.
    """
    func = _compiled_symbolic_gradients()
    h, g, v, d = complex(w.h), complex(w.g), complex(v), complex(d)
    grad_h, grad_g = func(h.real, h.imag, g.real, g.imag, v.real, v.imag, d.real, d.imag, p.sigma, p.gamma)
    return complex(grad_h), complex(grad_g)


def solve_wl_weights(v: Sequence[complex], rtol: float = 1e-12) -> AugmentedWeights:
    """
    Exact widely-linear weights from three consecutive clean samples.

    Solves [[v0, v0*], [v1, v1*]] [h*, g*]^T = [v1, v2]^T.

    Raises:
        ValueError: If fewer than three samples are given.
        SingularSystemError: If the 2x2 system is singular (e.g. a purely real stream).
    """
    samples = np.asarray(v, dtype=complex)
    if samples.shape[0] < 3:
        raise ValueError(f"solve_wl_weights needs 3 consecutive samples. Got {samples.shape[0]}.")
    v0, v1, v2 = samples[:3]
    system = np.array([[v0, np.conj(v0)], [v1, np.conj(v1)]], dtype=complex)
    det = v0 * np.conj(v1) - np.conj(v0) * v1
    scale = abs(v0) * abs(v1)
    if scale == 0 or abs(det) <= rtol * scale:
        raise SingularSystemError(f"Singular widely-linear system for samples ({v0}, {v1}).")
    h_conj, g_conj = np.linalg.solve(system, np.array([v1, v2], dtype=complex))
    return AugmentedWeights(h=complex(np.conj(h_conj)), g=complex(np.conj(g_conj)))


def oracle_weights(params: PhaseParams) -> AugmentedWeights:
    """Exact weights of a clean source, solved on its first three samples."""
    clean = scenario_stream([ScenarioEvent(0, params)], 3)
    return solve_wl_weights(clean)


# ---------------------------------------------------------------- stability

def kappa(sigma: float, sigma_i2: float) -> float:
    if not sigma > 0:
        raise ValueError(f"Kernel width must be positive. Got {sigma}.")
    if sigma_i2 < 0:
        raise ValueError(f"Input noise variance must be non-negative. Got {sigma_i2}.")
    return sigma ** 2 / (sigma ** 2 + sigma_i2 / 2.0)


def regressors(v: Sequence[complex]) -> np.ndarray:
    """Stacks augmented regressors [v, v*] as an (n, 2) array."""
    v = np.asarray(v, dtype=complex)
    return np.stack([v, np.conj(v)], axis=1)


def input_covariance(xs: Sequence[Any]) -> np.ndarray:
    """
    Sample mean of x x^H over augmented regressors.

    Args:
        xs: (n, 2) array of regressors or a sequence of RegressorPair.

    Returns:
        np.ndarray: 2x2 Hermitian matrix.
    """
    if len(xs) and isinstance(xs[0], RegressorPair):
        xs = np.stack([pair.x for pair in xs])
    x = np.asarray(xs, dtype=complex)
    if x.ndim != 2 or x.shape[1] != 2:
        raise ValueError(f"Regressors must have shape (n, 2). Got {x.shape}.")
    if x.shape[0] < 2:
        raise ValueError(f"input_covariance needs at least 2 regressors. Got {x.shape[0]}.")
    r = x.T @ x.conj() / x.shape[0]
    return 0.5 * (r + r.conj().T)


def stability_eigenvalues(r: np.ndarray) -> Tuple[float, float]:
    """(lambda_min, lambda_max) of a Hermitian matrix."""
    eig = np.linalg.eigvalsh(np.asarray(r, dtype=complex))
    return float(eig[0]), float(eig[-1])


def stability_bound(si: StabilityInputs, eigenvalue: str = "max") -> float:
    """
    Upper step-size bound 2 ||w_bar||^2 / (kappa^2 lambda(R)).

    The binding eigenvalue of the negative-definite Hessian is the one of largest
    magnitude, so `eigenvalue="max"` is the default; "min" gives the looser value.

    Raises:
        ValueError: If R is not positive definite or `eigenvalue` is unknown.
    """
    lam_min, lam_max = stability_eigenvalues(si.r)
    if not lam_min > 0:
        raise ValueError(f"Input covariance must be positive definite. Smallest eigenvalue {lam_min}.")
    if eigenvalue not in ("max", "min"):
        raise ValueError(f"eigenvalue must be 'max' or 'min'. Got '{eigenvalue}'.")
    lam = lam_max if eigenvalue == "max" else lam_min
    k = kappa(si.sigma, si.sigma_i2)
    return 2.0 * si.w_bar_norm2 / (k ** 2 * lam)


def stability_inputs(params: PhaseParams, sigma: float, sigma_i2: float, gamma: float,
                     cycles: int = 20, w_bar_norm2: Optional[float] = None) -> StabilityInputs:
    """
    Stability ingredients of a clean scenario segment.

    R is averaged over whole cycles when the period is an integer number of
    samples; ||w_bar||^2 defaults to the oracle weights plus gamma.
    """
    samples_per_cycle = max(int(round(1.0 / (params.freq * params.dt))), 2)
    clean = scenario_stream([ScenarioEvent(0, params)], samples_per_cycle * cycles)
    r = input_covariance(regressors(clean))
    if w_bar_norm2 is None:
        w = oracle_weights(params)
        w_bar_norm2 = abs(w.h) ** 2 + abs(w.g) ** 2 + gamma
    return StabilityInputs(r=r, sigma=sigma, sigma_i2=sigma_i2, w_bar_norm2=float(w_bar_norm2))


def mean_error_recursion(c: np.ndarray, mus: Sequence[float], si: Sequence[StabilityInputs],
                         w_opt: AugmentedWeights, w0: AugmentedWeights, iters: int,
                         blowup: float = 1e12) -> MeanRecursionResult:
    """
    Iterates the linearised mean weight-error recursion of the diffusion network,
    W~(tau+1) = (C^T kron I2) [I + U H] W~(tau), with U H = blockdiag(-mu_l kappa_l^2 R_l / ||w_bar_l||^2).

    Returns the spectral radius of the transition matrix and the peak of the
    largest node mean-weight norm ||w_opt - w~_l||.
    """
    c = np.asarray(c, dtype=float)
    n = c.shape[0]
    if len(mus) != n or len(si) != n:
        raise ValueError(f"Need one step size and one StabilityInputs per node ({n}).")
    blocks = []
    for mu, s in zip(mus, si):
        k = kappa(s.sigma, s.sigma_i2)
        blocks.append(np.eye(2) - mu * k ** 2 * s.r / s.w_bar_norm2)
    local = np.zeros((2 * n, 2 * n), dtype=complex)
    for l, block in enumerate(blocks):
        local[2 * l:2 * l + 2, 2 * l:2 * l + 2] = block
    transition = np.kron(c.T, np.eye(2)) @ local
    spectral_radius = float(np.max(np.abs(np.linalg.eigvals(transition))))

    w_vec = np.array([w_opt.h, w_opt.g], dtype=complex)
    err = np.tile(w_vec - np.array([w0.h, w0.g], dtype=complex), n)
    peak = float(np.max(np.linalg.norm((np.tile(w_vec, n) - err).reshape(n, 2), axis=1)))
    done = 0
    for done in range(1, iters + 1):
        err = transition @ err
        norms = np.linalg.norm((np.tile(w_vec, n) - err).reshape(n, 2), axis=1)
        peak = max(peak, float(np.max(norms)))
        if not math.isfinite(peak) or peak > blowup:
            break
    return MeanRecursionResult(spectral_radius=spectral_radius, peak_weight_norm=peak, iterations=done)


# ---------------------------------------------------------------- metrics

def _window(frame: pd.DataFrame, window: int) -> pd.DataFrame:
    if window <= 0:
        raise ValueError(f"Window must be positive. Got {window}.")
    last = frame["iteration"].max()
    first = frame["iteration"].min()
    if window > last - first + 1:
        raise ValueError(f"Window {window} exceeds the recorded length {last - first + 1}.")
    return frame[frame["iteration"] > last - window]


def default_window(iters: int) -> int:
    """Final 20% of the iterations."""
    return max(1, int(round(0.2 * iters)))


def bias_variance(series: MetricSeries, f_true: float, window: int) -> pd.DataFrame:
    """
    Steady-state bias and variance of f_hat per (algorithm, node).

    Pools the last `window` iterations of every run. Invalid rows are excluded
    and counted. Values are sorted before reduction so the result does not
    depend on run ordering.

    Returns:
        pd.DataFrame: columns algorithm, node, bias, variance, n_valid, n_invalid, all_invalid.
    """
    frame = _window(series.frame, window)
    rows = []
    for (algorithm, node), group in frame.groupby(["algorithm", "node"], sort=True):
        valid = group["valid"].to_numpy(dtype=bool)
        values = np.sort(group["f_hat"].to_numpy()[valid])
        n_valid = int(values.size)
        all_invalid = n_valid == 0
        if all_invalid:
            logger.warning("All %d rows of node %s (%s) are invalid in the steady-state window",
                           len(group), node, algorithm)
        rows.append({
            "algorithm": algorithm,
            "node": int(node),
            "bias": float(np.mean(values)) - f_true if n_valid else math.nan,
            "variance": float(np.var(values, ddof=1)) if n_valid > 1 else (0.0 if n_valid else math.nan),
            "n_valid": n_valid,
            "n_invalid": int((~valid).sum()),
            "all_invalid": all_invalid,
        })
    return pd.DataFrame(rows, columns=["algorithm", "node", "bias", "variance", "n_valid", "n_invalid", "all_invalid"])


def network_mean(series: MetricSeries) -> pd.DataFrame:
    """Mean valid f_hat over nodes and runs, per (algorithm, iteration)."""
    frame = series.frame[series.frame["valid"]]
    return (frame.groupby(["algorithm", "iteration"], sort=True)["f_hat"].mean()
            .rename("f_mean").reset_index())


def tracking_error(series: MetricSeries, f_true: float, window: int) -> pd.DataFrame:
    """
    Network-level steady tracking metrics per algorithm over the last `window` iterations.

    Returns:
        pd.DataFrame: columns algorithm, mean_abs_error (|mean f_hat - f_true|),
        oscillation (max - min of the network-mean curve) and rms_error.
    """
    frame = _window(series.frame, window)
    rows = []
    for algorithm, group in frame.groupby("algorithm", sort=True):
        valid = group[group["valid"]]
        curve = valid.groupby("iteration")["f_hat"].mean().to_numpy()
        values = np.sort(valid["f_hat"].to_numpy())
        rows.append({
            "algorithm": algorithm,
            "mean_abs_error": abs(float(np.mean(values)) - f_true) if values.size else math.nan,
            "oscillation": float(np.ptp(curve)) if curve.size else math.nan,
            "rms_error": float(np.sqrt(np.mean((values - f_true) ** 2))) if values.size else math.nan,
        })
    return pd.DataFrame(rows, columns=["algorithm", "mean_abs_error", "oscillation", "rms_error"])


def settling_time(series: MetricSeries, f_true: float, tol: float, after: int = 0) -> pd.DataFrame:
    """
    First iteration (> `after`) from which the network-mean estimate stays within
    `tol` of `f_true`, per algorithm. NaN when it never settles.
    """
    rows = []
    curves = network_mean(series)
    for algorithm, group in curves.groupby("algorithm", sort=True):
        group = group[group["iteration"] > after]
        inside = (np.abs(group["f_mean"].to_numpy() - f_true) <= tol)
        settled = math.nan
        if inside.size and inside[-1]:
            outside = np.flatnonzero(~inside)
            start = 0 if outside.size == 0 else outside[-1] + 1
            settled = float(group["iteration"].to_numpy()[start])
        rows.append({"algorithm": algorithm, "settling_iteration": settled})
    return pd.DataFrame(rows, columns=["algorithm", "settling_iteration"])
