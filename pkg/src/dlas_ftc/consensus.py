"""Ratio consensus, max-consensus and finite-time exact ratio consensus (FTERC).

All iterations are simulated synchronously: at every step a node combines its
own value with the values received from its in-neighbours, weighted by the
column-stochastic matrix ``P``. A node only ever reads its own row of the
resulting traces.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graph import Digraph, diameter_upper_bound

DEFAULT_RANK_TOL = 1e-8
DEFAULT_FLOOR_TOL = 1e-15
DEFAULT_PROBES = 32
DEFAULT_DEN_TOL = 1e-12
NOISE_LEVEL = 64 * np.finfo(float).eps


class ConsensusError(RuntimeError):
    pass


class DegenerateTraceError(ConsensusError):
    """No rank-deficient Hankel matrix was found within the ``n'`` budget."""


class DegenerateDenominatorError(ConsensusError):
    """``x_M^T beta`` vanished, so the final-value ratio is undefined."""


def ratio_consensus_step(P: np.ndarray, y: np.ndarray, x: np.ndarray):
    """One synchronous step of the twin iterations ``y <- P y``, ``x <- P x``."""
    P = np.asarray(P)
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    n = P.shape[0]
    if P.shape != (n, n) or y.shape[0] != n or x.shape != (n,):
        raise ValueError(f"dimension mismatch: P {P.shape}, y {y.shape}, x {x.shape}")
    return P @ y, P @ x


def twin_iterations(P: np.ndarray, y0: np.ndarray, samples: int, x0: np.ndarray | None = None):
    """Return ``samples`` consecutive values ``t = 0 .. samples-1`` of both iterations.

    ``y0`` may be ``(N,)`` or ``(N, d)``; the x-iteration is scalar and starts
    from all-ones unless ``x0`` is given.
    """
    y = np.asarray(y0, dtype=float)
    x = np.ones(P.shape[0]) if x0 is None else np.asarray(x0, dtype=float)
    Y = np.empty((samples,) + y.shape)
    X = np.empty((samples,) + x.shape)
    Y[0], X[0] = y, x
    for t in range(1, samples):
        Y[t], X[t] = ratio_consensus_step(P, Y[t - 1], X[t - 1])
    return Y, X


def max_consensus(g: Digraph, inputs, steps: int) -> np.ndarray:
    """Each node repeatedly replaces its value by the max over itself and in-neighbours."""
    values = np.asarray(inputs).copy()
    for _ in range(steps):
        values = np.array(
            [max([values[i]] + [values[j] for j in g.in_neighbors[i]]) for i in range(g.node_count)]
        )
    return values


def hankel(seq: np.ndarray, size: int) -> np.ndarray:
    """Square Hankel matrix ``H[r, c] = seq[r + c]`` of the given size."""
    idx = np.arange(size)[:, None] + np.arange(size)[None, :]
    return np.asarray(seq)[idx]


@dataclass
class MinimalPolyCoeffs:
    """Coefficients of ``p_i(z) = q_i(z) / (z - 1)`` learned at one node.

    ``beta`` is ordered from the constant term upwards and has ``beta[-1] == 1``.
    """

    node: int
    degree: int
    beta: np.ndarray
    kernel_dim_warning: bool = False

    @property
    def alpha(self) -> np.ndarray:
        """Coefficients of ``q_i(z) = (z - 1) p_i(z)``, constant term first."""
        return np.convolve(self.beta, [-1.0, 1.0])


def learn_minimal_poly(
    trace,
    n_prime: int,
    tol: float = DEFAULT_RANK_TOL,
    node: int = 0,
    floor_tol: float = DEFAULT_FLOOR_TOL,
) -> MinimalPolyCoeffs:
    """Learn ``beta`` from the kernel of the first defective Hankel matrix.

    ``trace`` is one node's observation sequence, shape ``(T,)``, or several
    sequences driven by the same ``P`` stacked as columns, shape ``(T, k)``.
    Each column is differenced and scaled to unit max-norm (columns whose
    increments sit at rounding level are dropped), and the Hankel
    matrices of all columns are stacked vertically, so the kernel annihilates
    every observed sequence at once.

    Sizes ``t + 1 = 1 .. n'`` are candidates. The smallest size whose singular
    value ratio ``s_min / s_max`` is at most ``floor_tol`` (the float64 noise
    floor) is taken; once a stacked Hankel matrix is defective every larger
    one is too, so that size is found by bisection. If no size reaches the
    floor, the size with the smallest ratio is taken, provided that ratio is
    at most ``tol``; otherwise the trace is declared degenerate.
    """
    trace = np.asarray(trace, dtype=float)
    if trace.ndim == 1:
        trace = trace[:, None]
    diffs = np.diff(trace, axis=0)
    scale = np.max(np.abs(diffs), axis=0)
    # a column whose increments are at rounding level carries no information
    live = scale > NOISE_LEVEL * np.max(np.abs(trace), axis=0)
    diffs = diffs[:, live] / scale[live]
    if diffs.shape[1] == 0:
        return MinimalPolyCoeffs(node, 0, np.ones(1))

    def stacked(t):
        idx = np.arange(t + 1)[:, None] + np.arange(t + 1)[None, :]
        return np.vstack([diffs[idx, c] for c in range(diffs.shape[1])])

    ratios: dict[int, float] = {}

    def ratio(t):
        if t not in ratios:
            s = np.linalg.svd(stacked(t), compute_uv=False)
            ratios[t] = s[-1] / s[0]
        return ratios[t]

    largest = min(n_prime - 1, (diffs.shape[0] - 1) // 2)
    if ratio(largest) <= floor_tol:
        lo, hi = 0, largest
        while lo < hi:
            mid = (lo + hi) // 2
            if ratio(mid) <= floor_tol:
                hi = mid
            else:
                lo = mid + 1
        best_t = lo
    else:
        best_t = min(range(largest + 1), key=ratio)
    best_ratio = ratio(best_t)
    if best_ratio > tol:
        raise DegenerateTraceError(
            f"node {node}: no defective Hankel matrix up to size {largest + 1} "
            f"(best ratio {best_ratio:.2e}, trace of {trace.shape[0]} samples, n'={n_prime})"
        )
    _, s, vt = np.linalg.svd(stacked(best_t), full_matrices=False)
    kernel = vt[-1]
    if abs(kernel[-1]) < np.finfo(float).eps * np.max(np.abs(kernel)):
        raise DegenerateTraceError(f"node {node}: kernel has no monic normalisation")
    multi = best_t > 0 and s[-2] <= tol * s[0]
    return MinimalPolyCoeffs(node, best_t, kernel / kernel[-1], multi)


def exact_average(
    coeffs: MinimalPolyCoeffs, y_samples, x_samples, den_tol: float = DEFAULT_DEN_TOL
):
    """Final-value ratio ``(y_M^T beta) / (x_M^T beta)`` from the first ``M+1`` samples."""
    m = coeffs.degree + 1
    y = np.asarray(y_samples, dtype=float)[:m]
    x = np.asarray(x_samples, dtype=float)[:m]
    if y.shape[0] < m or x.shape[0] < m:
        raise ValueError(f"need {m} samples, got {y.shape[0]} and {x.shape[0]}")
    den = float(x @ coeffs.beta)
    if abs(den) < den_tol:
        raise DegenerateDenominatorError(f"node {coeffs.node}: |x_M^T beta| = {abs(den):.3e}")
    return np.tensordot(coeffs.beta, y, axes=(0, 0)) / den


@dataclass
class FtercEngine:
    """Distributed FTERC over a fixed digraph and weight matrix.

    The first call to :meth:`round` is the learning round: ``2 n' + 2`` samples
    of the twin iterations are recorded, every node learns ``beta_i`` and its
    denominator ``x_M^T beta_i``, and a max-consensus over ``M_i + 1`` fixes
    the window ``t_max``. Every later call runs the twin iterations for
    ``t_max`` time steps only and reuses the stored coefficients.

    During learning each node also injects ``probes`` locally drawn random
    values that travel through the same iterations as extra message
    components. They make the learned polynomial annihilate every direction of
    the dynamics rather than only those the first input happens to excite.
    """

    graph: Digraph
    P: np.ndarray
    n_prime: int
    rank_tol: float = DEFAULT_RANK_TOL
    floor_tol: float = DEFAULT_FLOOR_TOL
    den_tol: float = DEFAULT_DEN_TOL
    probes: int = DEFAULT_PROBES
    probe_seed: object = 0
    coeffs: list[MinimalPolyCoeffs] = field(default_factory=list, init=False)
    phi_x: np.ndarray | None = field(default=None, init=False)
    t_max: int | None = field(default=None, init=False)
    rounds_run: int = field(default=0, init=False)
    last_steps: int = field(default=0, init=False)
    last_trace: tuple[np.ndarray, np.ndarray] | None = field(default=None, init=False, repr=False)
    warnings: list[str] = field(default_factory=list, init=False)

    def __post_init__(self) -> None:
        if self.n_prime < self.graph.node_count:
            raise ValueError(f"n_prime={self.n_prime} is below N={self.graph.node_count}")
        self._probe_rng = np.random.default_rng(self.probe_seed)

    @property
    def learned(self) -> bool:
        return self.t_max is not None

    @property
    def m_max(self) -> int:
        """Largest polynomial degree ``max_i M_i``; the window is ``m_max + 1`` samples."""
        if self.t_max is None:
            raise ConsensusError("engine has not completed its learning round")
        return self.t_max - 1

    @property
    def degrees(self) -> np.ndarray:
        return np.array([c.degree for c in self.coeffs])

    def round(self, inputs) -> np.ndarray:
        """Per-node exact averages of ``inputs`` (``(N,)`` or ``(N, d)``)."""
        inputs = np.asarray(inputs, dtype=float)
        if inputs.shape[0] != self.graph.node_count:
            raise ValueError(f"expected {self.graph.node_count} node inputs, got {inputs.shape}")
        out = self._learn(inputs) if not self.learned else self._evaluate(inputs)
        self.rounds_run += 1
        return out

    def _learn(self, inputs: np.ndarray) -> np.ndarray:
        n = self.graph.node_count
        samples = 2 * self.n_prime + 2
        flat_in = inputs.reshape(n, -1)
        width = flat_in.shape[1]
        probe = self._probe_rng.standard_normal((n, self.probes))
        Y, X = twin_iterations(self.P, np.hstack([flat_in, probe]), samples)
        self.last_trace = (Y[:, :, :width].reshape((samples,) + inputs.shape), X)
        self.last_steps = samples

        coeffs = []
        for i in range(n):
            trace = np.column_stack([Y[:, i, :], X[:, i]])
            c = learn_minimal_poly(trace, self.n_prime, self.rank_tol, node=i, floor_tol=self.floor_tol)
            if c.kernel_dim_warning:
                self.warnings.append(f"round {self.rounds_run}: node {i} kernel dimension > 1")
            coeffs.append(c)

        Yin = Y[:, :, :width]
        if any(c.degree == 0 for c in coeffs):
            # nothing moved at some node, so there is nothing to learn from; retry next round
            out = np.array([Yin[0, i] if c.degree == 0 else exact_average(c, Yin[:, i], X[:, i], self.den_tol)
                            for i, c in enumerate(coeffs)])
            return out.reshape(inputs.shape)

        self.coeffs = coeffs
        self.phi_x = np.array([X[: c.degree + 1, i] @ c.beta for i, c in enumerate(coeffs)])
        for i, den in enumerate(self.phi_x):
            if abs(den) < self.den_tol:
                raise DegenerateDenominatorError(f"node {i}: |x_M^T beta| = {abs(den):.3e}")
        window = max_consensus(
            self.graph, [c.degree + 1 for c in coeffs], diameter_upper_bound(self.n_prime)
        )
        self.t_max = int(window[0])
        out = np.array([exact_average(c, Yin[:, i], X[:, i], self.den_tol) for i, c in enumerate(coeffs)])
        return out.reshape(inputs.shape)

    def _evaluate(self, inputs: np.ndarray) -> np.ndarray:
        Y, X = twin_iterations(self.P, inputs, self.t_max)
        self.last_trace = (Y, X)
        self.last_steps = self.t_max
        out = np.empty_like(inputs)
        for i, c in enumerate(self.coeffs):
            out[i] = np.tensordot(c.beta, Y[: c.degree + 1, i], axes=(0, 0)) / self.phi_x[i]
        return out


def ratio_consensus_estimates(P: np.ndarray, y0, steps: int) -> np.ndarray:
    """Per-node ratios ``y_i / x_i`` after ``steps`` plain ratio-consensus steps."""
    Y, X = twin_iterations(P, y0, steps + 1)
    x = X[-1].reshape((-1,) + (1,) * (Y.ndim - 2))
    return Y[-1] / x


def steps_to_tolerance(P: np.ndarray, y0, tol: float, max_steps: int = 100_000) -> int:
    """Smallest step count after which every ratio is within ``tol`` of the mean."""
    y = np.asarray(y0, dtype=float)
    x = np.ones(P.shape[0])
    target = y.mean(axis=0)
    for t in range(max_steps + 1):
        ratio = y / x.reshape((-1,) + (1,) * (y.ndim - 1))
        if np.max(np.abs(ratio - target)) <= tol:
            return t
        y, x = P @ y, P @ x
    raise ConsensusError(f"ratio consensus did not reach {tol:g} in {max_steps} steps")
