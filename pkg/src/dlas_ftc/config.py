"""Experiment configuration and seed derivation.

Every random stream is derived from ``master_seed`` through
``numpy.random.SeedSequence(master_seed, spawn_key=(purpose, *indices))``:

==========  ==============================  ==================================
purpose     spawn key                       stream
==========  ==============================  ==================================
0 data      ``(0,)``                        regression samples
1 graph     ``(1, g)``                      digraph ``g``
2 init      ``(2,)``                        initial node states
3 sampling  ``(3, g, rep, node)``           stochastic-gradient draws
4 probe     ``(4, g)``                      FTERC learning probes
5 bench     ``(5, n, g)``                   consensus benchmark instances
==========  ==============================  ==================================
"""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

DATA, GRAPH, INIT, SAMPLING, PROBE, BENCH = range(6)


class ConfigError(ValueError):
    pass


def seed_for(master_seed: int, purpose: int, *indices: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(master_seed, spawn_key=(purpose, *indices))


@dataclass
class ExperimentConfig:
    # graph
    nodes: int = 20
    edge_density: float = 0.3
    n_prime: int = 20
    num_graphs: int = 10
    # problem
    samples_per_node: int = 50
    intercept: float = 4.0
    slope: float = 3.0
    noise_sd: float = 7.0
    problem_mode: str = "vector"
    init_scale: float = 10.0
    # algorithm
    kappa: float = 0.4
    alpha: float = 0.5
    eta0: float = 1e-10
    rounds: int = 100
    coordination: str = "both"
    gradient: str = "stochastic"
    lipschitz_sampling: str = "cached"
    # consensus numerics
    rank_tol: float = 1e-8
    floor_tol: float = 1e-15
    probes: int = 32
    # seeds and output
    master_seed: int = 0
    repetitions: int = 50
    out_dir: str = "results"
    dump_traces: bool = False
    workers: int = 1
    # consensus benchmark
    bench_sizes: tuple = (3, 5, 10, 15, 20, 25, 30)
    bench_graphs: int = 10

    def __post_init__(self) -> None:
        self.bench_sizes = tuple(int(v) for v in self.bench_sizes)
        self.validate()

    def validate(self) -> None:
        def need(cond: bool, name: str, msg: str) -> None:
            if not cond:
                raise ConfigError(f"{name}: {msg}")

        need(self.nodes >= 2, "nodes", "must be at least 2")
        need(0.0 <= self.edge_density <= 1.0, "edge_density", "must lie in [0, 1]")
        need(self.n_prime >= self.nodes, "n_prime", "must be at least nodes")
        need(self.num_graphs >= 1, "num_graphs", "must be positive")
        need(self.samples_per_node >= 1, "samples_per_node", "must be positive")
        need(self.noise_sd >= 0, "noise_sd", "must be nonnegative")
        need(self.problem_mode in ("vector", "scalar"), "problem_mode", "must be 'vector' or 'scalar'")
        need(self.init_scale > 0, "init_scale", "must be positive")
        need(0.0 <= self.kappa < 1.0, "kappa", "must lie in [0, 1)")
        need(self.alpha > 0, "alpha", "must be positive")
        need(self.eta0 > 0, "eta0", "must be positive")
        need(self.rounds >= 0, "rounds", "must be nonnegative")
        need(self.coordination in ("fterc", "gossip", "both"), "coordination", "must be fterc, gossip or both")
        need(self.gradient in ("stochastic", "full"), "gradient", "must be 'stochastic' or 'full'")
        need(
            self.lipschitz_sampling in ("cached", "resample"),
            "lipschitz_sampling",
            "must be 'cached' or 'resample'",
        )
        need(self.probes >= 0, "probes", "must be nonnegative")
        need(self.repetitions >= 1, "repetitions", "must be positive")
        need(self.workers >= 1, "workers", "must be positive")
        need(all(n >= 2 for n in self.bench_sizes), "bench_sizes", "every size must be at least 2")

    @property
    def modes(self) -> tuple[str, ...]:
        return ("fterc", "gossip") if self.coordination == "both" else (self.coordination,)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["bench_sizes"] = list(self.bench_sizes)
        return d

    def result_dict(self) -> dict:
        """Settings that influence results; output location and worker count are left out."""
        d = self.to_dict()
        for key in ("out_dir", "workers", "dump_traces"):
            del d[key]
        return d


def load_config(path: str | Path | None = None, **overrides) -> ExperimentConfig:
    """Read a flat TOML document; keys not given keep their defaults.

    ``overrides`` whose value is ``None`` are ignored, so unset CLI flags can
    be passed straight through.
    """
    values: dict = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                values = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    known = {f.name: f for f in fields(ExperimentConfig)}
    for key, value in values.items():
        if key not in known:
            raise ConfigError(f"{key}: unknown configuration key")
        if isinstance(value, dict):
            raise ConfigError(f"{key}: nested tables are not supported")
    values.update({k: v for k, v in overrides.items() if v is not None})
    defaults = ExperimentConfig()
    for key, value in values.items():
        expected = type(getattr(defaults, key))
        if expected is float and isinstance(value, int) and not isinstance(value, bool):
            values[key] = float(value)
        elif expected is tuple and isinstance(value, list):
            values[key] = tuple(value)
        elif not isinstance(value, expected) or (expected is int and isinstance(value, bool)):
            raise ConfigError(f"{key}: expected {expected.__name__}, got {type(value).__name__}")
    try:
        return ExperimentConfig(**values)
    except TypeError as exc:  # pragma: no cover - guarded above
        raise ConfigError(str(exc)) from exc
