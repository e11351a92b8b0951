import copy
import logging
import math
from dataclasses import dataclass, replace
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
import sympy

from . import analysis, diffusion
from .analysis import MetricSeries, StabilityInputs
from .diffusion import NetworkState, NetworkTopology
from .noise import NoiseConfig, NoisyStream, corrupt_stream, derive_seed
from .phasegen import PhaseParams, ScenarioEvent, scenario_stream, segment_power, signal_power
from .templates import ReportTemplateLibrary
from .wlfilter import Algorithm, AugmentedWeights, FilterParams

logger = logging.getLogger(__name__)

DIVERGENCE_NORM = 1e3


@dataclass(frozen=True)
class ProbeResult:
    """
    Outcome of one step-size probe.

    `sim_diverged` reports the simulated weights, `recursion_diverged` the
    linearised mean weight recursion. The correntropy kernel keeps the simulated
    weights bounded, so a large step usually shows up in the recursion only.
    """
    multiplier: float
    mu: float
    max_weight_norm: float
    recursion_peak: float
    spectral_radius: float
    sim_diverged: bool
    recursion_diverged: bool

    @property
    def diverged(self) -> bool:
        return self.sim_diverged or self.recursion_diverged


@dataclass(frozen=True)
class StabilityReport:
    """Bound ingredients of the worst node and the outcome of every step-size probe."""
    inputs: StabilityInputs
    kappa: float
    lambda_min: float
    lambda_max: float
    mu_max: float
    mu_max_lambda_min: float
    probes: List[ProbeResult]


class LaTeXFormatter:
    """
    Formats a StabilityReport as LaTeX using a ReportTemplateLibrary template.
    """
    def __init__(self, precision: int = 4, template: Any = "standard"):
        self.precision = precision
        self.template = ReportTemplateLibrary.get_template(template)

    def _format_value(self, val: Any) -> str:
        if isinstance(val, (int, float)) and not math.isfinite(val):
            return r"\infty" if val > 0 else r"\mathrm{NaN}"
        if isinstance(val, float):
            return f"{val:.{self.precision}g}"
        return str(val)

    @staticmethod
    def _formulas() -> Dict[str, str]:
        sigma, sigma_i2, w_bar, lam, kap = sympy.symbols("sigma sigma_i2 w_bar lam kap", positive=True)
        names = {sigma: r"\sigma", sigma_i2: r"\sigma_i^2", w_bar: r"\|\bar{w}\|^2",
                 lam: r"\lambda_{max}", kap: r"\kappa"}
        return {
            "kappa": sympy.latex(sigma ** 2 / (sigma ** 2 + sigma_i2 / 2), symbol_names=names),
            "mu_max": sympy.latex(2 * w_bar / (kap ** 2 * lam), symbol_names=names),
        }

    def _rows(self, report: StabilityReport) -> List[Dict[str, Any]]:
        formulas = self._formulas()
        si = report.inputs
        rows = [
            {"type": "param", "symbol": r"\sigma", "value": si.sigma, "desc": "Kernel width"},
            {"type": "param", "symbol": r"\sigma_i^2", "value": si.sigma_i2, "desc": "Input noise variance"},
            {"type": "param", "symbol": r"\|\bar{w}\|^2", "value": si.w_bar_norm2, "desc": "Oracle weight norm plus gamma"},
            {"type": "param", "symbol": r"\lambda_{min}", "value": report.lambda_min, "desc": "Smallest eigenvalue of R"},
            {"type": "param", "symbol": r"\lambda_{max}", "value": report.lambda_max, "desc": "Largest eigenvalue of R"},
            {"type": "eq", "symbol": r"\kappa", "expr": formulas["kappa"], "value": report.kappa, "desc": "Kernel attenuation"},
            {"type": "eq", "symbol": r"\mu_{max}", "expr": formulas["mu_max"], "value": report.mu_max, "desc": "Step-size bound"},
        ]
        for probe in report.probes:
            rows.append({"type": "check", "value": probe.mu, "norm": probe.max_weight_norm,
                         "desc": f"{probe.multiplier:g} x bound", "diverged": probe.diverged})
        return rows

    def report(self, report: StabilityReport, row_templates: Optional[Dict[str, str]] = None,
               environment: Optional[str] = None) -> str:
        """
        Generates the LaTeX report.

        Args:
            report: The stability report.
            row_templates: Optional overrides for specific row types.
            environment: Optional environment used for every row instead of the template's.
        """
        current_template = self.template.copy()
        if row_templates:
            current_template["rows"] = current_template.get("rows", {}).copy()
            current_template["rows"].update(row_templates)
        rows_config = current_template.get("rows", {})
        envs_config = current_template.get("environments", {})

        lines = []
        current_env = None
        for row in self._rows(report):
            row_type = row["type"]
            req_env = environment if environment is not None else envs_config.get(row_type, "align*")
            if current_env != req_env:
                if current_env is not None:
                    lines.append(f"\\end{{{current_env}}}")
                lines.append(f"\\begin{{{req_env}}}")
                current_env = req_env

            data = {
                "symbol": row.get("symbol", ""),
                "desc": row.get("desc", ""),
                "expr": row.get("expr", ""),
                "value": self._format_value(row["value"]),
                "norm": self._format_value(row.get("norm", "")),
                "status": "",
            }
            if row_type == "check":
                data["status"] = (r"\textbf{\textcolor{red}{diverged}}" if row["diverged"]
                                  else r"\textbf{\textcolor{green}{bounded}}")
            try:
                lines.append(rows_config.get(row_type, "").format(**data))
            except (KeyError, IndexError, ValueError) as e:
                lines.append(f"% Error rendering {row_type} row: {e}")

        if current_env is not None:
            lines.append(f"\\end{{{current_env}}}")
        return "\n".join(lines)


class FrequencySimulator:
    """
    Facade running diffusion frequency-estimation experiments, orchestrating the
    network construction, the adapt-then-combine engine and the report formatter.

    Attributes:
        topology (NetworkTopology): Node graph.
        noise (list[NoiseConfig]): One noise configuration per node; seeds are re-derived per run.
        dt (float): Sampling interval in seconds.
    """

    def __init__(self, topology: NetworkTopology, noise: Union[NoiseConfig, Sequence[NoiseConfig]],
                 dt: float, mu: float = 0.05, sigma: float = 1.0, daclms_mu: float = 0.025,
                 combination: str = "metropolis", strictly_linear: bool = False,
                 precision: int = 4, template: Any = "standard"):
        self.topology = topology
        self.noise = [noise] * topology.n if isinstance(noise, NoiseConfig) else list(noise)
        if len(self.noise) != topology.n:
            raise ValueError(f"Need one NoiseConfig per node ({topology.n}). Got {len(self.noise)}.")
        self.dt = dt
        self.mu = mu
        self.sigma = sigma
        self.daclms_mu = daclms_mu
        self.combination = combination
        self.strictly_linear = strictly_linear
        self.formatter = LaTeXFormatter(precision=precision, template=template)

    def with_noise(self, **changes) -> "FrequencySimulator":
        """Copy with the given NoiseConfig fields replaced on every node."""
        other = copy.copy(self)
        other.noise = [replace(cfg, **changes) for cfg in self.noise]
        return other

    def with_input_snr(self, snr_db: float) -> "FrequencySimulator":
        """
        Copy with every node's input SNR set to `snr_db` and its noise ratio gamma kept.

        An explicit output SNR moves with the input one. A fixed gamma needs no change.
        """
        noise = []
        for cfg in self.noise:
            if cfg.gamma is not None or cfg.snr_out_db is None:
                noise.append(replace(cfg, snr_db=snr_db))
                continue
            gamma = cfg.effective_gamma()
            snr_out = snr_db - 10.0 * math.log10(gamma) if gamma > 0 else math.inf
            noise.append(replace(cfg, snr_db=snr_db, snr_out_db=snr_out))
        other = copy.copy(self)
        other.noise = noise
        return other

    def filter_params(self, algorithm: Algorithm, mu: Optional[float] = None) -> List[FilterParams]:
        """Per-node parameters; gamma follows each node's noise configuration."""
        if mu is None:
            mu = self.daclms_mu if Algorithm(algorithm) is Algorithm.DACLMS else self.mu
        return [FilterParams(mu=mu, sigma=self.sigma, gamma=cfg.effective_gamma()) for cfg in self.noise]

    def network(self, algorithm: Algorithm, mu: Optional[float] = None) -> NetworkState:
        return NetworkState.create(self.topology, self.filter_params(algorithm, mu), self.noise,
                                   combination=self.combination, strictly_linear=self.strictly_linear)

    def streams(self, events: Sequence[ScenarioEvent], iters: int, seed: int, run_id: int = 0) -> List[NoisyStream]:
        """
        Noisy copies of one clean scenario, one per node.

        Node k of run r draws its noise from the seed derived from (seed, r, k), so
        every algorithm sees the same noise for a given run.
        """
        clean = scenario_stream(events, iters + 1)
        power = segment_power(events, iters + 1)
        return [corrupt_stream(clean, replace(cfg, seed=derive_seed(seed, run_id, k)), power)
                for k, cfg in enumerate(self.noise)]

    def run(self, events: Sequence[ScenarioEvent], iters: int, runs: int = 1, seed: int = 0,
            algorithms: Sequence[Algorithm] = (Algorithm.DAMTCC,), mu: Optional[float] = None) -> MetricSeries:
        """
        Monte-Carlo tracking experiment.

        Returns:
            MetricSeries: records of every (algorithm, run, iteration, node).
        """
        if runs < 1:
            raise ValueError(f"Monte-Carlo runs must be >= 1. Got {runs}.")
        series = []
        for run_id in range(runs):
            streams = self.streams(events, iters, seed, run_id)
            for algorithm in algorithms:
                state = self.network(algorithm, mu)
                series.append(diffusion.run(state, streams, iters, self.dt, algorithm, run_id=run_id))
            logger.info("Monte-Carlo run %d/%d done", run_id + 1, runs)
        return MetricSeries.concat(series)

    def stability_inputs(self, params: PhaseParams) -> List[StabilityInputs]:
        power = signal_power(params)
        return [analysis.stability_inputs(params, self.sigma, cfg.input_variance(power), cfg.effective_gamma())
                for cfg in self.noise]

    def stability(self, params: PhaseParams, multipliers: Sequence[float], iters: int = 10000,
                  seed: int = 0, algorithm: Algorithm = Algorithm.DAMTCC) -> StabilityReport:
        """
        Computes the step-size bound of the scenario and probes mu = m * mu_max for each multiplier.

        A probe diverges when the simulated weight norm or the peak of the
        linearised mean weight recursion exceeds 1e3.

        Raises:
            ValueError: If `multipliers` is empty or contains a non-positive value.
        """
        multipliers = list(multipliers)
        if not multipliers:
            raise ValueError("Stability probe needs at least one step-size multiplier.")
        if any(not m > 0 for m in multipliers):
            raise ValueError(f"Step-size multipliers must be positive. Got {multipliers}.")

        inputs = self.stability_inputs(params)
        bounds = [analysis.stability_bound(si) for si in inputs]
        worst = int(np.argmin(bounds))
        si = inputs[worst]
        lam_min, lam_max = analysis.stability_eigenvalues(si.r)
        mu_max = bounds[worst]
        logger.info("Step-size bound %.6g (node %d, lambda_max %.6g)", mu_max, worst, lam_max)

        events = [ScenarioEvent(0, params)]
        streams = self.streams(events, iters, seed)
        w_opt = analysis.oracle_weights(params)
        c = self.network(algorithm).combination.c
        probes = []
        for m in multipliers:
            mu = m * mu_max
            with np.errstate(over="ignore", invalid="ignore"):
                series = diffusion.run(self.network(algorithm, mu), streams, iters, self.dt, algorithm)
            norms = series.frame["weight_norm"].to_numpy()
            sim_max = float(np.max(norms)) if np.all(np.isfinite(norms)) else math.inf
            recursion = analysis.mean_error_recursion(c, [mu] * self.topology.n, inputs, w_opt,
                                                      AugmentedWeights(), iters)
            probe = ProbeResult(multiplier=float(m), mu=mu, max_weight_norm=sim_max,
                                recursion_peak=recursion.peak_weight_norm,
                                spectral_radius=recursion.spectral_radius,
                                sim_diverged=sim_max > DIVERGENCE_NORM,
                                recursion_diverged=recursion.peak_weight_norm > DIVERGENCE_NORM)
            probes.append(probe)
            logger.info("Probe m=%g: max |w| %.6g (diverged=%s), recursion peak %.6g (diverged=%s)",
                        m, sim_max, probe.sim_diverged, recursion.peak_weight_norm, probe.recursion_diverged)

        return StabilityReport(inputs=si, kappa=analysis.kappa(si.sigma, si.sigma_i2),
                               lambda_min=lam_min, lambda_max=lam_max, mu_max=mu_max,
                               mu_max_lambda_min=analysis.stability_bound(si, eigenvalue="min"),
                               probes=probes)

    def report(self, report: StabilityReport, row_templates: Optional[Dict[str, str]] = None,
               environment: str = None) -> str:
        """Generates the LaTeX stability report."""
        return self.formatter.report(report, row_templates, environment)
