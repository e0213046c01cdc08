"""Distributed learning with automated stepsizes and exact coordination.

Every round each node proposes a stepsize from its own curvature estimate,
the proposals are coordinated, every node takes a stochastic gradient step
with the coordinated stepsize, and the resulting iterates are coordinated
again. Two coordination modes are provided:

* ``fterc``: finite-time exact ratio consensus, so every node receives the
  exact network average (stepsizes and states become homogeneous);
* ``gossip``: a single ratio-consensus step from ``(v, 1)``, leaving each node
  with its own one-step ratio (the heterogeneous baseline).
"""

from __future__ import annotations

import csv
import io
import json
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import analysis
from .config import DATA, GRAPH, INIT, PROBE, SAMPLING, seed_for
from .consensus import FtercEngine, ratio_consensus_step
from .graph import Digraph, default_weights, random_strongly_connected
from .problems import Dataset, LeastSquaresProblem, build_problem, generate_regression_data
from .stepsize import StepsizeState, UndefinedStepsizeError

COORDINATION_MODES = ("fterc", "gossip")
CSV_COLUMNS = ("k", "lambda", "eps", "eta_min", "eta_max", "x_spread", "bound_thm1", "bound_rem2")




class FtercCoordinator:
    def __init__(self, engine: FtercEngine):
        self.engine = engine
        self.name = "fterc"

    def __call__(self, values: np.ndarray) -> np.ndarray:
        return self.engine.round(values)

    @property
    def last_steps(self) -> int:
        return self.engine.last_steps

    @property
    def last_trace(self):
        return self.engine.last_trace


class GossipCoordinator:
    """One ratio-consensus step; node ``i`` keeps ``y_i / x_i``."""

    def __init__(self, P: np.ndarray):
        self.P = np.asarray(P, dtype=float)
        self.name = "gossip"
        self.last_steps = 0
        self.last_trace = None

    def __call__(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        x0 = np.ones(values.shape[0])
        y, x = ratio_consensus_step(self.P, values, x0)
        self.last_steps = 1
        self.last_trace = (np.stack([values, y]), np.stack([x0, x]))
        return y / x.reshape((-1,) + (1,) * (values.ndim - 1))


@dataclass
class NodeState:
    index: int
    x: np.ndarray
    stepsize: StepsizeState
    rng: np.random.Generator
    last_sample: int | None = None


@dataclass
class RoundOutcome:
    k: int
    lam: np.ndarray  # (N,) coordinated stepsize held by each node
    eta: np.ndarray  # (N,) local proposals
    x_half: np.ndarray  # (N, d)
    x_next: np.ndarray  # (N, d)
    eps: float
    dist: float  # ||x^{k+1} - x*|| over the stacked iterate
    eg_norm: float  # ||proj(x - lam g_hat) - proj(x - lam grad f)||
    steps: int  # twin-iteration steps spent on the two coordinations
    wall_clock: float

    @property
    def lam_spread(self) -> float:
        return float(np.ptp(self.lam))

    @property
    def x_spread(self) -> float:
        return float(np.max(np.ptp(self.x_next, axis=0)))


@dataclass
class TrajectoryRecord:
    """Per-round history of one run; row ``k`` describes the iterate ``x^{k+1}``."""

    mode: str
    x0: np.ndarray
    optimum: np.ndarray
    meta: dict = field(default_factory=dict)
    rounds: list[RoundOutcome] = field(default_factory=list)
    failed: bool = False
    error: str | None = None

    def append(self, outcome: RoundOutcome) -> None:
        self.rounds.append(outcome)

    def _col(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rounds])

    @property
    def eps(self) -> np.ndarray:
        return self._col("eps")

    @property
    def dist(self) -> np.ndarray:
        return self._col("dist")

    @property
    def eg_norm(self) -> np.ndarray:
        return self._col("eg_norm")

    @property
    def d0(self) -> float:
        return analysis.stacked_distance(self.x0, self.optimum)

    @property
    def lam_common(self) -> np.ndarray:
        """Node-mean of the coordinated stepsize (the common value in ``fterc`` mode)."""
        return np.array([r.lam.mean() for r in self.rounds])

    @property
    def lam_spread(self) -> np.ndarray:
        return self._col("lam_spread")

    @property
    def x_spread(self) -> np.ndarray:
        return self._col("x_spread")

    @property
    def eta_min(self) -> np.ndarray:
        return np.array([r.eta.min() for r in self.rounds])

    @property
    def eta_max(self) -> np.ndarray:
        return np.array([r.eta.max() for r in self.rounds])

    @property
    def steps(self) -> np.ndarray:
        return self._col("steps")

    def bounds(self, L: float, mu: float, sigma: float):
        """Both convergence bounds along this run's stepsizes (NaN outside ``fterc`` mode)."""
        n = len(self.rounds)
        if self.mode != "fterc" or n == 0:
            return np.full(n, np.nan), np.full(n, np.nan)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            params = analysis.BoundParams(self.lam_common, L, mu, sigma, self.d0)
        return analysis.thm1_bounds(params), analysis.rem2_bounds(params)

    def to_csv(self, L: float | None = None, mu: float | None = None, sigma: float | None = None) -> str:
        if L is None:
            thm1 = rem2 = np.full(len(self.rounds), np.nan)
        else:
            thm1, rem2 = self.bounds(L, mu, sigma)
        return write_curve_csv(
            self.meta,
            {
                "lambda": self.lam_common,
                "eps": self.eps,
                "eta_min": self.eta_min,
                "eta_max": self.eta_max,
                "x_spread": self.x_spread,
                "bound_thm1": thm1,
                "bound_rem2": rem2,
            },
        )


def write_curve_csv(meta: dict, columns: dict) -> str:
    """CSV text with a ``# {json}`` metadata header followed by ``CSV_COLUMNS``."""
    buf = io.StringIO()
    buf.write("# " + json.dumps(meta, sort_keys=True) + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    n = len(next(iter(columns.values())))
    for k in range(n):
        writer.writerow([k] + [repr(float(columns[c][k])) for c in CSV_COLUMNS[1:]])
    return buf.getvalue()


def read_curve_csv(text: str):
    lines = text.splitlines()
    meta = json.loads(lines[0][2:]) if lines and lines[0].startswith("# ") else {}
    rows = list(csv.DictReader(lines[1:] if meta else lines))
    return meta, {c: np.array([float(r[c]) for r in rows]) for c in CSV_COLUMNS}


class DlasFtc:
    """The round loop over a set of node states and one coordinator."""

    def __init__(
        self,
        problem: LeastSquaresProblem,
        coordinator,
        x0,
        rngs,
        kappa: float = 0.4,
        alpha: float = 0.5,
        eta0: float = 1e-10,
        gradient: str = "stochastic",
        lipschitz_sampling: str = "cached",
        optimum=None,
        trace_hook=None,
    ):
        if gradient not in ("stochastic", "full"):
            raise ValueError(f"unknown gradient mode {gradient!r}")
        if lipschitz_sampling not in ("cached", "resample"):
            raise ValueError(f"unknown lipschitz_sampling {lipschitz_sampling!r}")
        x0 = np.asarray(x0, dtype=float)
        if x0.shape != (problem.node_count, problem.dim):
            raise ValueError(f"x0 must have shape {(problem.node_count, problem.dim)}, got {x0.shape}")
        rngs = list(rngs)
        if len(rngs) != problem.node_count:
            raise ValueError("need one rng per node")
        self.problem = problem
        self.coordinate = coordinator
        self.gradient = gradient
        self.lipschitz_sampling = lipschitz_sampling
        self.x0 = x0.copy()
        self.optimum = problem.optimum() if optimum is None else np.asarray(optimum, dtype=float)
        self.nodes = [
            NodeState(i, x0[i].copy(), StepsizeState(kappa, alpha, eta0), rngs[i]) for i in range(problem.node_count)
        ]
        self.trace_hook = trace_hook
        self.k = 0

    @property
    def states(self) -> np.ndarray:
        return np.array([n.x for n in self.nodes])

    def _gradient(self, node: NodeState) -> np.ndarray:
        if self.gradient == "full":
            node.last_sample = None
            return self.problem.local_gradient(node.index, node.x)
        g, node.last_sample = self.problem.stochastic_gradient(node.index, node.x, node.rng)
        return g

    def _previous_gradient(self, node: NodeState):
        """Gradient at the previous iterate that enters the curvature estimate."""
        if self.lipschitz_sampling == "cached" or node.last_sample is None:
            return None  # StepsizeState falls back to its cached value
        return self.problem.sample_gradient(node.index, node.last_sample, node.stepsize.x_prev)

    def _coordinate(self, values: np.ndarray, what: str) -> np.ndarray:
        out = self.coordinate(values)
        if self.trace_hook is not None:
            self.trace_hook(self.k, what, self.coordinate.last_trace)
        return out

    def _finish(self, k, lam, eta, x, grads, x_half, x_next, steps, start) -> RoundOutcome:
        true = np.array([self.problem.local_gradient(n.index, x[n.index]) for n in self.nodes])
        for n in self.nodes:
            n.x = x_next[n.index].copy()
        return RoundOutcome(
            k=k,
            lam=lam,
            eta=eta,
            x_half=x_half,
            x_next=x_next,
            eps=analysis.error_metric(x_next, self.x0, self.optimum),
            dist=analysis.stacked_distance(x_next, self.optimum),
            eg_norm=analysis.projection_error(x, lam, grads, true),
            steps=steps,
            wall_clock=time.perf_counter() - start,
        )

    def run_round_zero(self) -> RoundOutcome:
        if self.k != 0:
            raise RuntimeError("round zero already ran")
        start = time.perf_counter()
        x = self.states
        grads = np.array([self._gradient(n) for n in self.nodes])
        lam = np.array([n.stepsize.eta for n in self.nodes])  # local, not coordinated
        x_half = x - lam[:, None] * grads
        x_next = self._coordinate(x_half, "state")
        steps = self.coordinate.last_steps
        for n in self.nodes:
            n.stepsize.remember(x[n.index], grads[n.index])
        out = self._finish(0, lam, lam.copy(), x, grads, x_half, x_next, steps, start)
        self.k = 1
        return out

    def run_round(self) -> RoundOutcome:
        if self.k < 1:
            raise RuntimeError("run_round_zero must come first")
        k = self.k
        start = time.perf_counter()
        x = self.states
        grads = np.empty_like(x)
        eta = np.empty(len(self.nodes))
        for n in self.nodes:
            grads[n.index] = self._gradient(n)
            try:
                eta[n.index] = n.stepsize.propose(n.x, grads[n.index], self._previous_gradient(n))
            except UndefinedStepsizeError as exc:
                raise UndefinedStepsizeError(f"round {k}, node {n.index}: {exc}") from exc
        lam = self._coordinate(eta, "stepsize")
        steps = self.coordinate.last_steps
        x_half = x - lam[:, None] * grads
        x_next = self._coordinate(x_half, "state")
        steps += self.coordinate.last_steps
        for n in self.nodes:
            n.stepsize.commit(x[n.index], grads[n.index])
        self.k += 1
        return self._finish(k, lam, eta, x, grads, x_half, x_next, steps, start)

    def run(self, rounds: int, record: TrajectoryRecord) -> TrajectoryRecord:
        """Round zero followed by rounds ``1 .. rounds``; a failing round marks the record failed."""
        try:
            if self.k == 0:
                record.append(self.run_round_zero())
            while self.k <= rounds:
                record.append(self.run_round())
        except (ArithmeticError, RuntimeError, ValueError) as exc:
            record.failed = True
            record.error = f"{type(exc).__name__}: {exc}"
        return record


@dataclass
class ExperimentSetup:
    """Data, problem, graph and initial states shared by the runs of one experiment."""

    config: object
    data: Dataset
    problem: LeastSquaresProblem
    optimum: np.ndarray
    x0: np.ndarray

    @classmethod
    def build(cls, config) -> "ExperimentSetup":
        data = generate_regression_data(
            config.nodes,
            config.samples_per_node,
            config.intercept,
            config.slope,
            config.noise_sd,
            seed=seed_for(config.master_seed, DATA),
        )
        problem = build_problem(data, config.problem_mode, config.intercept)
        rng = np.random.default_rng(seed_for(config.master_seed, INIT))
        x0 = rng.uniform(-config.init_scale, config.init_scale, size=(problem.node_count, problem.dim))
        optimum = problem.optimum()
        return cls(config, data, problem, optimum, x0)


def build_graph(config, graph_index: int) -> Digraph:
    return random_strongly_connected(
        config.nodes, config.edge_density, seed_for(config.master_seed, GRAPH, graph_index)
    )


def run_experiment(config, mode: str = "fterc", graph_index: int = 0, repetition: int = 0,
                   setup: ExperimentSetup | None = None, trace_hook=None) -> TrajectoryRecord:
    """One seeded run on digraph ``graph_index`` with sampling stream ``repetition``."""
    if mode not in COORDINATION_MODES:
        raise ValueError(f"unknown coordination mode {mode!r}; expected one of {COORDINATION_MODES}")
    setup = setup or ExperimentSetup.build(config)
    graph = build_graph(config, graph_index)
    P = default_weights(graph)
    if mode == "fterc":
        engine = FtercEngine(
            graph,
            P,
            config.n_prime,
            rank_tol=config.rank_tol,
            floor_tol=config.floor_tol,
            probes=config.probes,
            probe_seed=seed_for(config.master_seed, PROBE, graph_index),
        )
        coordinator = FtercCoordinator(engine)
    else:
        coordinator = GossipCoordinator(P)
    rngs = [
        np.random.default_rng(seed_for(config.master_seed, SAMPLING, graph_index, repetition, i))
        for i in range(config.nodes)
    ]
    runner = DlasFtc(
        setup.problem,
        coordinator,
        setup.x0,
        rngs,
        kappa=config.kappa,
        alpha=config.alpha,
        eta0=config.eta0,
        gradient=config.gradient,
        lipschitz_sampling=config.lipschitz_sampling,
        optimum=setup.optimum,
        trace_hook=trace_hook,
    )
    record = TrajectoryRecord(
        mode=mode,
        x0=setup.x0,
        optimum=setup.optimum,
        meta={
            "mode": mode,
            "graph_index": graph_index,
            "repetition": repetition,
            "master_seed": config.master_seed,
            "graph_sha256": graph.fingerprint(),
        },
    )
    runner.run(config.rounds, record)
    if mode == "fterc":
        record.meta["m_max"] = engine.m_max if engine.learned else None
        record.meta["fterc_warnings"] = list(engine.warnings)
    return record


def summarize(records: list[TrajectoryRecord]) -> dict:
    """Average curves over runs of the same mode (merged in the given order)."""
    if not records:
        raise ValueError("no records to summarize")
    length = min(len(r.rounds) for r in records)

    def stack(attr):
        return np.array([getattr(r, attr)[:length] for r in records])

    return {
        "lambda": stack("lam_common").mean(axis=0),
        "eps": stack("eps").mean(axis=0),
        "eta_min": stack("eta_min").min(axis=0),
        "eta_max": stack("eta_max").max(axis=0),
        "x_spread": stack("x_spread").max(axis=0),
        "lam_spread": stack("lam_spread").max(axis=0),
        "dist": stack("dist").mean(axis=0),
    }
