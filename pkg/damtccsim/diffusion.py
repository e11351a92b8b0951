"""
Network topology, Metropolis combination weights and the adapt-then-combine driver.
"""
import logging
from dataclasses import dataclass, field
from typing import FrozenSet, Iterable, List, Optional, Sequence, Tuple, Union

import networkx as nx
import numpy as np

from .analysis import MetricSeries
from .noise import NoiseConfig, NoisyPair, NoisyStream
from .wlfilter import (Algorithm, AugmentedWeights, FilterParams, FrequencyEstimate, adapt_step,
                       frequency_estimate)

logger = logging.getLogger(__name__)

INVALID_WARN_FRACTION = 0.01


class DisconnectedTopologyError(ValueError):
    """Raised when a topology graph is not connected."""


# Approximate edge sets of the two 8-node test networks.
TOPOLOGY1_EDGES = [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 6), (6, 7), (7, 0), (0, 4), (2, 6)]
TOPOLOGY2_SEED = 7
TOPOLOGY2_PROB = 0.35

# Approximate per-node SNR (dB) profiles for the 8-node networks.
SNR_PROFILES = {
    "profile1": [40.0, 35.0, 30.0, 25.0, 20.0, 25.0, 30.0, 35.0],
    "profile2": [30.0, 20.0, 15.0, 25.0, 10.0, 20.0, 35.0, 15.0],
}


@dataclass(frozen=True)
class NetworkTopology:
    """
    Undirected connected graph of `n` nodes. Self-loops are not stored; every
    neighbourhood includes its own node implicitly.
    """
    n: int
    edges: FrozenSet[Tuple[int, int]] = frozenset()

    def __post_init__(self):
        if isinstance(self.n, bool) or not isinstance(self.n, (int, np.integer)) or self.n < 1:
            raise ValueError(f"Topology needs n >= 1 nodes. Got {self.n}.")
        normalized = set()
        for edge in self.edges:
            i, l = (int(k) for k in edge)
            if i == l:
                raise ValueError(f"Self-loop edge ({i}, {l}) is not allowed.")
            if not (0 <= i < self.n and 0 <= l < self.n):
                raise ValueError(f"Edge ({i}, {l}) references a node outside 0..{self.n - 1}.")
            normalized.add((min(i, l), max(i, l)))
        object.__setattr__(self, "edges", frozenset(normalized))
        if not nx.is_connected(self.graph()):
            raise DisconnectedTopologyError(
                f"Topology with {self.n} nodes and edges {sorted(self.edges)} is not connected.")

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[Sequence[int]]) -> "NetworkTopology":
        return cls(n=n, edges=frozenset(tuple(e) for e in edges))

    @classmethod
    def fixture(cls, name: str) -> "NetworkTopology":
        """
        Built-in 8-node networks: "topology1" is a ring with two chords,
        "topology2" a seeded random connected graph.
        """
        if name == "topology1":
            return cls.from_edges(8, TOPOLOGY1_EDGES)
        if name == "topology2":
            return cls.from_edges(8, _random_connected_edges(8, TOPOLOGY2_PROB, TOPOLOGY2_SEED))
        raise KeyError(f"Unknown fixture topology '{name}'. Expected 'topology1' or 'topology2'.")

    def graph(self) -> nx.Graph:
        g = nx.Graph()
        g.add_nodes_from(range(self.n))
        g.add_edges_from(self.edges)
        return g

    def neighborhood(self, l: int) -> List[int]:
        """Neighbours of `l` including `l` itself, sorted."""
        return sorted(set(self.graph().neighbors(l)) | {l})


def _random_connected_edges(n: int, prob: float, seed: int, attempts: int = 100) -> List[Tuple[int, int]]:
    for k in range(attempts):
        graph = nx.gnp_random_graph(n, prob, seed=seed + k)
        if nx.is_connected(graph):
            return list(graph.edges())
    raise DisconnectedTopologyError(
        f"No connected random graph found in {attempts} attempts (n={n}, p={prob}).")


@dataclass(frozen=True)
class CombinationMatrix:
    """c[i, l] is the weight of node i's intermediate estimate in node l's combination."""
    c: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ValueError(f"Combination matrix must be square. Got shape {c.shape}.")
        if np.any(c < 0):
            raise ValueError("Combination weights must be non-negative.")
        if not np.allclose(c.sum(axis=0), 1.0, atol=1e-12, rtol=0.0):
            raise ValueError(f"Every column of the combination matrix must sum to 1. Got {c.sum(axis=0)}.")
        object.__setattr__(self, "c", c)

    @property
    def n(self) -> int:
        return self.c.shape[0]

    @classmethod
    def identity(cls, n: int) -> "CombinationMatrix":
        """No cooperation: every node keeps its own intermediate estimate."""
        return cls(np.eye(n))

    def is_doubly_stochastic(self, atol: float = 1e-12) -> bool:
        return bool(np.allclose(self.c.sum(axis=0), 1.0, atol=atol, rtol=0.0)
                    and np.allclose(self.c.sum(axis=1), 1.0, atol=atol, rtol=0.0))


def metropolis_weights(t: NetworkTopology) -> CombinationMatrix:
    """
    Metropolis rule c[i, l] = 1 / max(n_i, n_l) on edges, where n_k counts the
    neighbours of k plus k itself; the diagonal takes the remaining mass.

    Raises:
        DisconnectedTopologyError: If the graph is not connected.
    """
    graph = t.graph()
    if not nx.is_connected(graph):
        raise DisconnectedTopologyError(f"Metropolis weights need a connected topology. Got edges {sorted(t.edges)}.")
    sizes = np.array([graph.degree(k) + 1 for k in range(t.n)], dtype=float)
    c = np.zeros((t.n, t.n))
    for i, l in t.edges:
        c[i, l] = c[l, i] = 1.0 / max(sizes[i], sizes[l])
    for l in range(t.n):
        c[l, l] = 1.0 - (c[:, l].sum() - c[l, l])
    return CombinationMatrix(c)


def snr_profile(name: str) -> List[float]:
    try:
        return list(SNR_PROFILES[name])
    except KeyError:
        raise KeyError(f"Unknown SNR profile '{name}'. Expected one of {sorted(SNR_PROFILES)}.") from None


@dataclass
class NodeState:
    weights: AugmentedWeights
    params: FilterParams
    noise: NoiseConfig
    last_estimate: FrequencyEstimate = field(default_factory=lambda: FrequencyEstimate(f_hat=0.0, valid=True))


@dataclass
class NetworkState:
    nodes: List[NodeState]
    topology: NetworkTopology
    combination: CombinationMatrix
    iteration: int = 0
    strictly_linear: bool = False

    def __post_init__(self):
        if len(self.nodes) != self.topology.n:
            raise ValueError(f"Network has {self.topology.n} nodes but {len(self.nodes)} node states were given.")
        if self.combination.n != self.topology.n:
            raise ValueError(
                f"Combination matrix is {self.combination.n}x{self.combination.n} for {self.topology.n} nodes.")

    @classmethod
    def create(cls, topology: NetworkTopology, params: Union[FilterParams, Sequence[FilterParams]],
               noise: Union[NoiseConfig, Sequence[NoiseConfig]], combination: str = "metropolis",
               weights: Optional[AugmentedWeights] = None, strictly_linear: bool = False) -> "NetworkState":
        """
        Builds a network with every node starting from `weights` (h = 1, g = 0 by default).

        Args:
            combination (str): "metropolis" for diffusion, "none" for independent nodes.
        """
        n = topology.n
        params = [params] * n if isinstance(params, FilterParams) else list(params)
        noise = [noise] * n if isinstance(noise, NoiseConfig) else list(noise)
        if len(params) != n or len(noise) != n:
            raise ValueError(f"Need one FilterParams and one NoiseConfig per node ({n}).")
        if combination == "metropolis":
            c = metropolis_weights(topology)
        elif combination == "none":
            c = CombinationMatrix.identity(n)
        else:
            raise ValueError(f"Unknown combination '{combination}'. Expected 'metropolis' or 'none'.")
        start = weights if weights is not None else AugmentedWeights()
        nodes = [NodeState(weights=start, params=p, noise=cfg) for p, cfg in zip(params, noise)]
        return cls(nodes=nodes, topology=topology, combination=c, strictly_linear=strictly_linear)

    def stacked_weights(self) -> AugmentedWeights:
        return AugmentedWeights(h=np.array([node.weights.h for node in self.nodes], dtype=complex),
                                g=np.array([node.weights.g for node in self.nodes], dtype=complex))

    def stacked_params(self) -> "_StackedParams":
        return _StackedParams(mu=np.array([node.params.mu for node in self.nodes], dtype=float),
                              sigma=np.array([node.params.sigma for node in self.nodes], dtype=float),
                              gamma=np.array([node.params.gamma for node in self.nodes], dtype=float))

    def store(self, w: AugmentedWeights, est: FrequencyEstimate):
        for k, node in enumerate(self.nodes):
            node.weights = AugmentedWeights(h=complex(w.h[k]), g=complex(w.g[k]))
            node.last_estimate = FrequencyEstimate(f_hat=float(est.f_hat[k]), valid=bool(est.valid[k]))


@dataclass(frozen=True)
class _StackedParams:
    """Per-node filter parameters as arrays."""
    mu: np.ndarray
    sigma: np.ndarray
    gamma: np.ndarray


def _adapt(w: AugmentedWeights, x: np.ndarray, d: np.ndarray, p: _StackedParams,
           algorithm: Algorithm, strictly_linear: bool):
    psi, upsilon, e = adapt_step(w, x, d, p, algorithm, strictly_linear)
    return np.asarray(psi, dtype=complex), np.asarray(upsilon, dtype=complex), np.asarray(e, dtype=complex)


def adapt_all(state: NetworkState, samples: Sequence[NoisyPair],
              algorithm: Algorithm = Algorithm.DAMTCC) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Local update of every node from its own sample pair and pre-iteration weights.

    Returns:
        tuple: intermediate estimates (psi, upsilon) and a-priori errors, one entry per node.

    Raises:
        ValueError: If the number of samples differs from the number of nodes.
        DegenerateWeightsError: Propagated from the gradient computation.
    """
    if len(samples) != len(state.nodes):
        raise ValueError(f"adapt_all needs one sample per node ({len(state.nodes)}). Got {len(samples)}.")
    x = np.array([s.x_noisy for s in samples], dtype=complex)
    d = np.array([s.d_noisy for s in samples], dtype=complex)
    return _adapt(state.stacked_weights(), x, d, state.stacked_params(), Algorithm(algorithm), state.strictly_linear)


def combine_all(intermediates: Tuple[np.ndarray, np.ndarray], c: CombinationMatrix) -> AugmentedWeights:
    """
    h_l = sum_i c[i, l] psi_i and g_l = sum_i c[i, l] upsilon_i.

    Real and imaginary parts are combined separately with the real matrix.
    """
    psi, upsilon = (np.asarray(v, dtype=complex) for v in intermediates)
    if psi.shape != (c.n,) or upsilon.shape != (c.n,):
        raise ValueError(
            f"Intermediates of shape {psi.shape} and {upsilon.shape} do not match a {c.n}-node combination matrix.")
    h = np.empty(c.n, dtype=complex)
    g = np.empty(c.n, dtype=complex)
    h.real, h.imag = psi.real @ c.c, psi.imag @ c.c
    g.real, g.imag = upsilon.real @ c.c, upsilon.imag @ c.c
    return AugmentedWeights(h=h, g=g)


def run(state: NetworkState, streams: Sequence[NoisyStream], iters: int, dt: float,
        algorithm: Algorithm = Algorithm.DAMTCC, run_id: int = 0) -> MetricSeries:
    """
    Runs `iters` adapt-then-combine iterations and records every node's estimate.

    Each iteration adapts all nodes, combines the intermediates and extracts
    the frequency. Invalid estimates are recorded as flagged rows.

    Args:
        state (NetworkState): Network, modified in place (weights, estimates, iteration).
        streams (list[NoisyStream]): One noisy stream per node, at least `iters` long.
        iters (int): Number of iterations, must be positive.
        dt (float): Sampling interval in seconds.
        algorithm (Algorithm): DAMTCC or DACLMS.
        run_id (int): Monte-Carlo run label of the records.

    Returns:
        MetricSeries: iters * N rows, plus a weight_norm column.
    """
    if isinstance(iters, bool) or not isinstance(iters, (int, np.integer)) or iters <= 0:
        raise ValueError(f"iters must be a positive integer. Got {iters}.")
    n = len(state.nodes)
    if len(streams) != n:
        raise ValueError(f"run needs one stream per node ({n}). Got {len(streams)}.")
    short = [k for k, s in enumerate(streams) if len(s) < iters]
    if short:
        raise ValueError(f"Streams of nodes {short} are shorter than iters={iters}.")
    algorithm = Algorithm(algorithm)

    x = np.stack([np.asarray(s.x_noisy[:iters], dtype=complex) for s in streams], axis=1)
    d = np.stack([np.asarray(s.d_noisy[:iters], dtype=complex) for s in streams], axis=1)
    params = state.stacked_params()
    w = state.stacked_weights()

    f_hat = np.empty((iters, n))
    valid = np.empty((iters, n), dtype=bool)
    sq_error = np.empty((iters, n))
    weight_norm = np.empty((iters, n))
    est = None
    for tau in range(iters):
        psi, upsilon, e = _adapt(w, x[tau], d[tau], params, algorithm, state.strictly_linear)
        w = combine_all((psi, upsilon), state.combination)
        est = frequency_estimate(w, dt)
        f_hat[tau], valid[tau] = est.f_hat, est.valid
        sq_error[tau] = np.abs(e) ** 2
        weight_norm[tau] = w.norm()

    state.store(w, est)
    first = state.iteration + 1
    state.iteration += iters

    invalid = 1.0 - valid.mean()
    if invalid > INVALID_WARN_FRACTION:
        logger.warning("Run %d (%s): %.2f%% of frequency estimates are invalid",
                       run_id, algorithm.value, 100.0 * invalid)
    logger.debug("Run %d (%s) finished %d iterations on %d nodes", run_id, algorithm.value, iters, n)
    return MetricSeries.from_arrays(f_hat, valid, sq_error, algorithm.value, run=run_id,
                                    weight_norm=weight_norm, first_iteration=first)
