"""
Widely-linear prediction, DAMTCC and ACLMS adaptation, and frequency extraction.

The model follows the conjugate-weight convention v_hat(tau + 1) = v h* + v* g*,
so for a balanced source the converged standard weight is h = exp(-j w dt).
All functions accept numpy arrays (one entry per node) as well as scalars.
"""
import enum
import logging
import math
from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np

from .utils import check_range

logger = logging.getLogger(__name__)

Complex = Union[complex, np.ndarray]


class Algorithm(str, enum.Enum):
    DAMTCC = "damtcc"
    DACLMS = "daclms"


class DegenerateWeightsError(ZeroDivisionError):
    """Raised when |h|^2 + |g|^2 + gamma vanishes."""


@dataclass(frozen=True)
class AugmentedWeights:
    """Standard weight `h` and conjugate weight `g` (scalars or per-node arrays)."""
    h: Complex = 1.0 + 0.0j
    g: Complex = 0.0 + 0.0j

    def norm(self):
        return np.sqrt(np.abs(self.h) ** 2 + np.abs(self.g) ** 2)


@dataclass(frozen=True)
class FilterParams:
    mu: float = 0.05
    sigma: float = 1.0
    gamma: float = 1.0

    def __post_init__(self):
        check_range("mu", self.mu, low=0.0, low_open=True)
        check_range("sigma", self.sigma, low=0.0, low_open=True)
        check_range("gamma", self.gamma, low=0.0)


@dataclass(frozen=True)
class RegressorPair:
    x: np.ndarray
    d: complex

    @classmethod
    def from_sample(cls, v: complex, d: complex) -> "RegressorPair":
        return cls(x=np.array([v, np.conj(v)], dtype=complex), d=complex(d))


@dataclass(frozen=True)
class FrequencyEstimate:
    f_hat: Union[float, np.ndarray]
    valid: Union[bool, np.ndarray]


def predict(w: AugmentedWeights, v: Complex) -> Complex:
    return v * np.conj(w.h) + np.conj(v) * np.conj(w.g)


def error(d: Complex, w: AugmentedWeights, v: Complex) -> Complex:
    """e = d - w^H x with x = [v, v*]^T."""
    return d - predict(w, v)


def _denominator(w: AugmentedWeights, gamma: float):
    denom = np.abs(w.h) ** 2 + np.abs(w.g) ** 2 + gamma
    if np.any(denom == 0):
        raise DegenerateWeightsError(
            "Degenerate state: |h|^2 + |g|^2 + gamma = 0 (gamma = 0 with zero weights).")
    return denom


def damtcc_cost(e: Complex, w: AugmentedWeights, p: FilterParams):
    """Instantaneous total correntropy exp(-|e|^2 / (2 sigma^2 (|h|^2 + |g|^2 + gamma)))."""
    denom = _denominator(w, p.gamma)
    return np.exp(-np.abs(e) ** 2 / (2.0 * p.sigma ** 2 * denom))


def damtcc_gradients(e: Complex, v: Complex, w: AugmentedWeights, p: FilterParams) -> Tuple[Complex, Complex]:
    """
    Instantaneous gradients of the total correntropy with respect to h* and g*.

    Args:
        e: Prediction error d - w^H x.
        v: Regressor sample.
        w (AugmentedWeights): Current weights.
        p (FilterParams): Kernel width and noise variance ratio.

    Returns:
        tuple: (grad_h, grad_g).

    Raises:
        DegenerateWeightsError: If |h|^2 + |g|^2 + gamma = 0.
    """
    denom = _denominator(w, p.gamma)
    err2 = np.abs(e) ** 2
    two_sigma2 = 2.0 * p.sigma ** 2
    kernel = np.exp(-err2 / (two_sigma2 * denom))
    scale = kernel / (two_sigma2 * denom ** 2)
    e_conj = np.conj(e)
    grad_h = scale * (e_conj * v * denom + err2 * w.h)
    grad_g = scale * (e_conj * np.conj(v) * denom + err2 * w.g)
    return grad_h, grad_g


def damtcc_adapt(w: AugmentedWeights, grads: Tuple[Complex, Complex], p: FilterParams) -> Tuple[Complex, Complex]:
    """Gradient ascent step on the correntropy: (h + mu grad_h, g + mu grad_g)."""
    grad_h, grad_g = grads
    return w.h + p.mu * grad_h, w.g + p.mu * grad_g


def daclms_adapt(w: AugmentedWeights, e: Complex, v: Complex, mu: float) -> Tuple[Complex, Complex]:
    """Augmented complex LMS step: (h + mu e* v, g + mu e* v*)."""
    e_conj = np.conj(e)
    return w.h + mu * e_conj * v, w.g + mu * e_conj * np.conj(v)


def adapt_step(w: AugmentedWeights, v: Complex, d: Complex, p: FilterParams,
               algorithm: Algorithm = Algorithm.DAMTCC,
               strictly_linear: bool = False) -> Tuple[Complex, Complex, Complex]:
    """
    One local update: error, then the algorithm's weight update.

    With `strictly_linear` the conjugate weight is held at its current value.

    Returns:
        tuple: (psi, upsilon, e).
    """
    e = error(d, w, v)
    if algorithm is Algorithm.DAMTCC:
        psi, upsilon = damtcc_adapt(w, damtcc_gradients(e, v, w, p), p)
    elif algorithm is Algorithm.DACLMS:
        psi, upsilon = daclms_adapt(w, e, v, p.mu)
    else:
        raise ValueError(f"Unknown algorithm '{algorithm}'.")
    if strictly_linear:
        upsilon = w.g
    return psi, upsilon, e


def frequency_estimate(w: AugmentedWeights, dt: float) -> FrequencyEstimate:
    """
    Frequency from augmented weights, f = arcsin(Im(h + a g)) / (2 pi dt) with
    a = (-j Im(h) + j sqrt(Im(h)^2 - |g|^2)) / g.

    A negative discriminant is clamped to zero and flags the estimate invalid, as
    does |Im(h + a g)| > 1 (the sine is then clipped). For g = 0 the product a g
    takes its limit -j Im(h) + j |Im(h)|, which is 0 whenever Im(h) >= 0.

    Args:
        w (AugmentedWeights): Weights (scalars or arrays).
        dt (float): Sampling interval in seconds.

    Returns:
        FrequencyEstimate: f_hat in Hz and the validity flag.
    """
    check_range("dt", dt, low=0.0, low_open=True)
    h = np.asarray(w.h, dtype=complex)
    g = np.asarray(w.g, dtype=complex)
    im_h = h.imag
    disc = im_h ** 2 - np.abs(g) ** 2
    valid = disc >= 0
    root = np.sqrt(np.where(valid, disc, 0.0))

    nonzero = g != 0
    a = np.where(nonzero, (-1j * im_h + 1j * root) / np.where(nonzero, g, 1.0), 0.0)
    ag = np.where(nonzero, a * g, 1j * (root - im_h))

    sine = (h + ag).imag
    in_domain = np.abs(sine) <= 1.0
    f_hat = np.arcsin(np.clip(sine, -1.0, 1.0)) / (2.0 * math.pi * dt)
    valid = valid & in_domain & np.isfinite(f_hat)

    if f_hat.ndim == 0:
        return FrequencyEstimate(f_hat=float(f_hat), valid=bool(valid))
    return FrequencyEstimate(f_hat=f_hat, valid=valid)


class AdaptiveFilter:
    """
    Stand-alone (non-diffusion) widely-linear frequency tracker.

    Attributes:
        weights (AugmentedWeights): Current weights.
        params (FilterParams): Step size, kernel width, gamma.
        algorithm (Algorithm): DAMTCC or DACLMS update.
        n (int): Number of processed samples.
    """

    def __init__(self, params: FilterParams, algorithm: Algorithm = Algorithm.DAMTCC,
                 weights: AugmentedWeights = None, strictly_linear: bool = False):
        self.params = params
        self.algorithm = Algorithm(algorithm)
        self.strictly_linear = strictly_linear
        self.weights = weights if weights is not None else AugmentedWeights()
        self.n = 0

    def update(self, x_n: complex, d_n: complex) -> complex:
        """
        Updates the weights with a new regressor sample and desired sample.

        Returns:
            complex: The a-priori error.
        """
        # length-1 arrays so the arithmetic matches a one-node network exactly
        w = AugmentedWeights(h=np.array([self.weights.h], dtype=complex),
                             g=np.array([self.weights.g], dtype=complex))
        psi, upsilon, e = adapt_step(w, np.array([x_n], dtype=complex), np.array([d_n], dtype=complex),
                                     self.params, self.algorithm, self.strictly_linear)
        self.weights = AugmentedWeights(h=complex(psi[0]), g=complex(np.asarray(upsilon)[0]))
        self.n += 1
        return complex(e[0])

    def frequency(self, dt: float) -> FrequencyEstimate:
        w = AugmentedWeights(h=np.array([self.weights.h], dtype=complex),
                             g=np.array([self.weights.g], dtype=complex))
        est = frequency_estimate(w, dt)
        return FrequencyEstimate(f_hat=float(est.f_hat[0]), valid=bool(est.valid[0]))
