"""
Command-line entry point: configuration parsing, experiment orchestration and CSV output.

Subcommands:
    tracking    per-iteration, per-node frequency estimates of one scenario
    snr-sweep   steady-state bias and variance per (snr, node, algorithm)
    stability   step-size bound and divergence probe
"""
import argparse
import contextlib
import logging
import sys
import tomllib
from dataclasses import dataclass, field, fields
from typing import Any, Dict, List, Optional, Sequence, Tuple

import pandas as pd

from .analysis import MetricSeries, bias_variance, default_window
from .diffusion import DisconnectedTopologyError, NetworkTopology, snr_profile
from .noise import NoiseConfig
from .phasegen import PhaseParams, ScenarioEvent, make_type_d_sag, validate_events
from .simulator import FrequencySimulator, StabilityReport
from .templates import ReportTemplateLibrary
from .utils import as_magnitude, check_range
from .wlfilter import Algorithm

logger = logging.getLogger(__name__)

EXIT_RUNTIME = 1
EXIT_CONFIG = 2

ALLOWED_KEYS = {
    "signal": {"freq", "sampling_rate", "dt", "amplitude", "theta0"},
    "scenario": {"at", "kind", "d", "freq", "amplitude", "theta0", "amp_a", "amp_b", "amp_c", "dtheta_b", "dtheta_c"},
    "topology": {"fixture", "n", "edges", "combination"},
    "noise": {"snr_db", "profile", "snr_out_db", "gamma", "impulse_prob", "impulse_var", "shared_measurement_noise"},
    "filter": {"algorithm", "mu", "sigma", "daclms_mu", "strictly_linear"},
    "experiment": {"iters", "runs", "seed", "window", "output"},
    "sweep": {"snr_db"},
    "stability": {"multipliers", "iters"},
    "report": {"format", "template", "precision"},
}


class ConfigError(ValueError):
    """
    Invalid experiment configuration.

    Attributes:
        kind (str): "syntax", "unknown-key", "type", "range" or "topology".
    """
    def __init__(self, kind: str, message: str):
        super().__init__(f"{kind}: {message}")
        self.kind = kind


@dataclass(frozen=True)
class CsvRecord:
    """One row of the tracking CSV."""
    run: int
    iteration: int
    node: int
    f_hat: float
    valid: bool
    sq_error: float
    algorithm: str


CSV_COLUMNS = [f.name for f in fields(CsvRecord)]


@dataclass
class ExperimentConfig:
    topology: NetworkTopology
    scenario: List[ScenarioEvent]
    snr_db: List[float]
    snr_out_db: Optional[float] = None
    gamma: Optional[float] = None
    impulse_prob: float = 0.005
    impulse_var: float = 10.0
    shared_measurement_noise: bool = False
    combination: str = "metropolis"
    algorithms: Tuple[Algorithm, ...] = (Algorithm.DAMTCC,)
    mu: float = 0.05
    sigma: float = 1.0
    daclms_mu: float = 0.025
    strictly_linear: bool = False
    iters: int = 5000
    monte_carlo_runs: int = 1
    seed: int = 0
    window: Optional[int] = None
    output: Optional[str] = None
    sweep_snr_db: List[float] = field(default_factory=lambda: [10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0])
    multipliers: List[float] = field(default_factory=lambda: [0.1, 50.0])
    stability_iters: int = 10000
    report_format: str = "csv"
    template: str = "standard"
    precision: int = 4

    def __post_init__(self):
        self.validate()

    def validate(self):
        """Range checks on the fields that are not validated by the objects they build."""
        check_range("runs", self.monte_carlo_runs, low=1)
        check_range("iters", self.iters, low=1)
        if self.window is not None:
            check_range("window", self.window, low=1, high=self.iters)
        if len(self.snr_db) != self.topology.n:
            raise ValueError(f"Need one SNR per node ({self.topology.n}). Got {len(self.snr_db)}.")
        check_range("stability.iters", self.stability_iters, low=1)
        check_range("report.precision", self.precision, low=1)
        if not self.multipliers:
            raise ValueError("'stability.multipliers' needs at least one step-size multiplier.")
        for m in self.multipliers:
            check_range("stability.multipliers", m, low=0.0, low_open=True)
        if not self.sweep_snr_db:
            raise ValueError("'sweep.snr_db' needs at least one SNR value.")
        self.noise_configs()

    @property
    def dt(self) -> float:
        return self.scenario[0].new_params.dt

    @property
    def f_true(self) -> float:
        """Frequency of the final scenario segment."""
        return self.scenario[-1].new_params.freq

    @property
    def steady_window(self) -> int:
        return self.window if self.window is not None else default_window(self.iters)

    def noise_configs(self) -> List[NoiseConfig]:
        return [NoiseConfig(snr_db=snr, snr_out_db=self.snr_out_db, gamma=self.gamma,
                            impulse_prob=self.impulse_prob, impulse_var=self.impulse_var,
                            seed=self.seed, shared_measurement_noise=self.shared_measurement_noise)
                for snr in self.snr_db]

    def simulator(self) -> FrequencySimulator:
        return FrequencySimulator(self.topology, self.noise_configs(), self.dt, mu=self.mu, sigma=self.sigma,
                                  daclms_mu=self.daclms_mu, combination=self.combination,
                                  strictly_linear=self.strictly_linear, precision=self.precision,
                                  template=self.template)


# ---------------------------------------------------------------- parsing

def _table(data: Dict[str, Any], name: str) -> Dict[str, Any]:
    table = data.get(name, {})
    if not isinstance(table, dict):
        raise ConfigError("type", f"[{name}] must be a table.")
    unknown = set(table) - ALLOWED_KEYS[name]
    if unknown:
        raise ConfigError("unknown-key", f"unknown key(s) {sorted(unknown)} in [{name}].")
    return table


def _typed(table: Dict[str, Any], key: str, default: Any, kinds: Tuple[type, ...], where: str) -> Any:
    value = table.get(key, default)
    if value is None or value is default:
        return value
    if isinstance(value, bool) and bool not in kinds:
        raise ConfigError("type", f"'{where}.{key}' must be {kinds[0].__name__}. Got a boolean.")
    if not isinstance(value, kinds):
        raise ConfigError("type", f"'{where}.{key}' must be {kinds[0].__name__}. Got {type(value).__name__}.")
    return value


def _number(table, key, default, where):
    value = _typed(table, key, default, (float, int), where)
    return None if value is None else float(value)


def _number_list(value: Any, where: str) -> List[float]:
    values = value if isinstance(value, list) else [value]
    if not values or any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in values):
        raise ConfigError("type", f"'{where}' must be a number or a non-empty list of numbers. Got {value!r}.")
    return [float(v) for v in values]


def _parse_topology(table: Dict[str, Any]) -> NetworkTopology:
    fixture = table.get("fixture")
    if fixture is not None and ("n" in table or "edges" in table):
        raise ConfigError("type", "[topology] takes either 'fixture' or 'n' and 'edges', not both.")
    try:
        if "n" in table or "edges" in table:
            n = _typed(table, "n", None, (int,), "topology")
            edges = table.get("edges", [])
            if n is None or not isinstance(edges, list) or any(
                    not isinstance(e, list) or len(e) != 2 or not all(isinstance(k, int) for k in e) for e in edges):
                raise ConfigError("type", "[topology] needs an integer 'n' and 'edges' as a list of [i, j] pairs.")
            return NetworkTopology.from_edges(n, edges)
        return NetworkTopology.fixture(fixture if fixture is not None else "topology1")
    except DisconnectedTopologyError as e:
        raise ConfigError("topology", str(e)) from e
    except KeyError as e:
        raise ConfigError("range", str(e.args[0])) from e


def _parse_scenario(signal: Dict[str, Any], events: Any) -> List[ScenarioEvent]:
    common = dict(freq=signal.get("freq", 50.0), amplitude=signal.get("amplitude", 1.0),
                  theta0=signal.get("theta0", 0.0))
    if "dt" in signal and "sampling_rate" in signal:
        raise ConfigError("type", "[signal] takes either 'dt' or 'sampling_rate', not both.")
    if "dt" in signal:
        common["dt"] = signal["dt"]
    else:
        common["sampling_rate"] = signal.get("sampling_rate", 2500.0)
    base = PhaseParams.from_quantities(**common)

    if events is None:
        return [ScenarioEvent(0, base)]
    if not isinstance(events, list):
        raise ConfigError("type", "[[scenario]] must be an array of tables.")
    out = []
    for k, event in enumerate(events):
        unknown = set(event) - ALLOWED_KEYS["scenario"]
        if unknown:
            raise ConfigError("unknown-key", f"unknown key(s) {sorted(unknown)} in scenario event {k}.")
        at = event.get("at", 0)
        if isinstance(at, str):
            at = int(round(as_magnitude(at, "s", "at") / base.dt))
        elif isinstance(at, bool) or not isinstance(at, int):
            raise ConfigError("type", f"scenario event {k}: 'at' must be a sample index or a time quantity.")
        kind = event.get("kind", "balanced")
        local = dict(common)
        local.update({key: event[key] for key in ("freq", "amplitude", "theta0") if key in event})
        if kind == "balanced":
            params = PhaseParams.from_quantities(**local)
        elif kind == "type_d":
            params = make_type_d_sag(event.get("d", 0.5), **local)
        elif kind == "custom":
            amplitude = local.pop("amplitude")
            params = PhaseParams.from_quantities(amplitude=event.get("amp_a", amplitude), amp_b=event.get("amp_b"),
                                                 amp_c=event.get("amp_c"), dtheta_b=event.get("dtheta_b", 0.0),
                                                 dtheta_c=event.get("dtheta_c", 0.0), **local)
        else:
            raise ConfigError("range", f"scenario event {k}: unknown kind '{kind}'. "
                                       f"Expected 'balanced', 'type_d' or 'custom'.")
        out.append(ScenarioEvent(at, params))
    return validate_events(out)


def parse_config(text: str) -> ExperimentConfig:
    """
    Parses and validates a TOML experiment configuration, filling defaults.

    Raises:
        ConfigError: With kind "syntax" (malformed TOML), "unknown-key", "type",
            "range" (invariant violation) or "topology" (disconnected graph).
    """
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError("syntax", f"malformed configuration: {e}") from e
    unknown = set(data) - set(ALLOWED_KEYS)
    if unknown:
        raise ConfigError("unknown-key", f"unknown table(s) {sorted(unknown)}.")

    try:
        topo = _table(data, "topology")
        topology = _parse_topology(topo)
        combination = _typed(topo, "combination", "metropolis", (str,), "topology")

        scenario = _parse_scenario(_table(data, "signal"), data.get("scenario"))

        noise = _table(data, "noise")
        if "profile" in noise:
            if "snr_db" in noise:
                raise ConfigError("type", "[noise] takes either 'snr_db' or 'profile', not both.")
            snr_db = snr_profile(_typed(noise, "profile", None, (str,), "noise"))
        else:
            snr_db = _number_list(noise.get("snr_db", 40.0), "noise.snr_db")
        if len(snr_db) == 1:
            snr_db = snr_db * topology.n

        filt = _table(data, "filter")
        algo = _typed(filt, "algorithm", "damtcc", (str,), "filter")
        algorithms = parse_algorithms(algo)

        exp = _table(data, "experiment")
        sweep = _table(data, "sweep")
        stab = _table(data, "stability")
        report = _table(data, "report")
        template = _typed(report, "template", "standard", (str,), "report")
        ReportTemplateLibrary.get_template(template)
        report_format = _typed(report, "format", "csv", (str,), "report")
        if report_format not in ("csv", "latex"):
            raise ConfigError("range", f"'report.format' must be 'csv' or 'latex'. Got '{report_format}'.")

        cfg = ExperimentConfig(
            topology=topology,
            scenario=scenario,
            snr_db=snr_db,
            snr_out_db=_number(noise, "snr_out_db", None, "noise"),
            gamma=_number(noise, "gamma", None, "noise"),
            impulse_prob=_number(noise, "impulse_prob", 0.005, "noise"),
            impulse_var=_number(noise, "impulse_var", 10.0, "noise"),
            shared_measurement_noise=_typed(noise, "shared_measurement_noise", False, (bool,), "noise"),
            combination=_parse_combination(combination),
            algorithms=algorithms,
            mu=_number(filt, "mu", 0.05, "filter"),
            sigma=_number(filt, "sigma", 1.0, "filter"),
            daclms_mu=_number(filt, "daclms_mu", 0.025, "filter"),
            strictly_linear=_typed(filt, "strictly_linear", False, (bool,), "filter"),
            iters=_typed(exp, "iters", 5000, (int,), "experiment"),
            monte_carlo_runs=_typed(exp, "runs", 1, (int,), "experiment"),
            seed=parse_seed(_typed(exp, "seed", 0, (int,), "experiment")),
            window=_typed(exp, "window", None, (int,), "experiment"),
            output=_typed(exp, "output", None, (str,), "experiment"),
            sweep_snr_db=_number_list(sweep.get("snr_db", [10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0]), "sweep.snr_db"),
            multipliers=_number_list(stab.get("multipliers", [0.1, 50.0]), "stability.multipliers"),
            stability_iters=_typed(stab, "iters", 10000, (int,), "stability"),
            report_format=report_format,
            template=template,
            precision=_typed(report, "precision", 4, (int,), "report"),
        )
        # filter parameters are validated per node
        cfg.simulator().filter_params(Algorithm.DAMTCC)
        cfg.simulator().filter_params(Algorithm.DACLMS)
        return cfg
    except ConfigError:
        raise
    except KeyError as e:
        raise ConfigError("range", str(e.args[0])) from e
    except (ValueError, TypeError) as e:
        raise ConfigError("range", str(e)) from e


def _parse_combination(value: str) -> str:
    if value not in ("metropolis", "none"):
        raise ConfigError("range", f"'topology.combination' must be 'metropolis' or 'none'. Got '{value}'.")
    return value


def parse_algorithms(value: str) -> Tuple[Algorithm, ...]:
    if value == "both":
        return (Algorithm.DAMTCC, Algorithm.DACLMS)
    try:
        return (Algorithm(value),)
    except ValueError:
        raise ConfigError("range", f"unknown algorithm '{value}'. Expected 'damtcc', 'daclms' or 'both'.") from None


def parse_seed(seed: int) -> int:
    if not 0 <= seed < 2 ** 64:
        raise ConfigError("range", f"seed {seed} must be an unsigned 64-bit integer.")
    return seed


# ---------------------------------------------------------------- experiments

@contextlib.contextmanager
def _open_output(out):
    if out is None or out == "-":
        yield sys.stdout
    elif hasattr(out, "write"):
        yield out
    else:
        with open(out, "w", encoding="utf-8", newline="") as handle:
            yield handle


def _write_frame(frame: pd.DataFrame, out, columns: Optional[Sequence[str]] = None):
    with _open_output(out) as handle:
        frame.to_csv(handle, columns=list(columns) if columns else None, index=False,
                     float_format="%.15g", lineterminator="\n")


def run_tracking(cfg: ExperimentConfig, out=None) -> MetricSeries:
    """
    Runs the configured scenario for every algorithm and writes per-iteration,
    per-node estimates as CSV.
    """
    logger.info("Tracking experiment: %d nodes, %d iterations, %d runs, %s",
                cfg.topology.n, cfg.iters, cfg.monte_carlo_runs, [a.value for a in cfg.algorithms])
    series = cfg.simulator().run(cfg.scenario, cfg.iters, runs=cfg.monte_carlo_runs, seed=cfg.seed,
                                 algorithms=cfg.algorithms)
    with _open_output(out) as handle:
        series.to_csv(handle, columns=CSV_COLUMNS)
    return series


def run_snr_sweep(cfg: ExperimentConfig, snr_list: Sequence[float], out=None) -> pd.DataFrame:
    """
    Steady-state bias and variance per (snr, node, algorithm). Each point sets the input SNR of
    every node; an explicit output SNR shifts with it so every node keeps its gamma.
    """
    snr_list = list(snr_list)
    if not snr_list:
        raise ValueError("SNR sweep needs at least one SNR value.")
    base = cfg.simulator()
    tables = []
    for snr in snr_list:
        logger.info("SNR sweep point %g dB", snr)
        series = base.with_input_snr(float(snr)).run(cfg.scenario, cfg.iters, runs=cfg.monte_carlo_runs,
                                                     seed=cfg.seed, algorithms=cfg.algorithms)
        table = bias_variance(series, cfg.f_true, cfg.steady_window)
        table.insert(0, "snr_db", float(snr))
        tables.append(table)
    result = pd.concat(tables, ignore_index=True)
    _write_frame(result, out)
    return result


def stability_frame(report: StabilityReport) -> pd.DataFrame:
    return pd.DataFrame([{
        "multiplier": p.multiplier,
        "mu": p.mu,
        "mu_max": report.mu_max,
        "mu_max_lambda_min": report.mu_max_lambda_min,
        "lambda_min": report.lambda_min,
        "lambda_max": report.lambda_max,
        "kappa": report.kappa,
        "w_bar_norm2": report.inputs.w_bar_norm2,
        "max_weight_norm": p.max_weight_norm,
        "recursion_peak": p.recursion_peak,
        "spectral_radius": p.spectral_radius,
        "sim_diverged": p.sim_diverged,
        "recursion_diverged": p.recursion_diverged,
        "diverged": p.diverged,
    } for p in report.probes])


def run_stability_probe(cfg: ExperimentConfig, mu_multipliers: Sequence[float], out=None) -> StabilityReport:
    """
    Computes the step-size bound of the first scenario segment and probes each multiple of it.

    Writes a CSV with one row per multiplier, or a LaTeX report when
    `cfg.report_format` is "latex".
    """
    sim = cfg.simulator()
    report = sim.stability(cfg.scenario[0].new_params, mu_multipliers, iters=cfg.stability_iters,
                           seed=cfg.seed, algorithm=cfg.algorithms[0])
    if cfg.report_format == "latex":
        with _open_output(out) as handle:
            handle.write(sim.report(report) + "\n")
    else:
        _write_frame(stability_frame(report), out)
    return report


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="damtccsim",
                                     description="Diffusion widely-linear frequency estimation experiments.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML experiment configuration (defaults when omitted)")
    common.add_argument("--out", help="output CSV path (stdout when omitted)")
    common.add_argument("--seed", type=int, help="master seed, overrides the configuration")
    common.add_argument("--algo", choices=["damtcc", "daclms", "both"], help="algorithm(s) to run")
    common.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("tracking", parents=[common], help="per-iteration tracking CSV")
    sweep = sub.add_parser("snr-sweep", parents=[common], help="steady-state bias/variance vs SNR")
    sweep.add_argument("--snr", type=float, nargs="+", help="SNR values in dB")
    stab = sub.add_parser("stability", parents=[common], help="step-size bound and divergence probe")
    stab.add_argument("--multipliers", type=float, nargs="+", help="multiples of the step-size bound")
    stab.add_argument("--report", choices=["csv", "latex"], help="output format")
    stab.add_argument("--template", choices=sorted(ReportTemplateLibrary.DEFAULT_TEMPLATES), help="LaTeX template")
    return parser


def load_config(args: argparse.Namespace) -> ExperimentConfig:
    text = ""
    if args.config:
        with open(args.config, encoding="utf-8") as handle:
            text = handle.read()
    cfg = parse_config(text)
    if args.seed is not None:
        cfg.seed = parse_seed(args.seed)
    if args.algo is not None:
        cfg.algorithms = parse_algorithms(args.algo)
    if getattr(args, "report", None):
        cfg.report_format = args.report
    if getattr(args, "template", None):
        cfg.template = args.template
    if getattr(args, "snr", None) is not None:
        cfg.sweep_snr_db = args.snr
    if getattr(args, "multipliers", None) is not None:
        cfg.multipliers = args.multipliers
    try:
        cfg.validate()
    except ValueError as e:
        raise ConfigError("range", str(e)) from e
    return cfg


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level), format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
        out = args.out if args.out is not None else cfg.output
        if args.command == "tracking":
            run_tracking(cfg, out)
        elif args.command == "snr-sweep":
            run_snr_sweep(cfg, cfg.sweep_snr_db, out)
        else:
            run_stability_probe(cfg, cfg.multipliers, out)
    except ConfigError as e:
        print(f"damtccsim: configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        print(f"damtccsim: I/O error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as e:
        print(f"damtccsim: error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    return 0


if __name__ == "__main__":
    sys.exit(main())
