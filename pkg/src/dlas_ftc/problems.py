"""Finite-sum least-squares costs and the synthetic linear-regression data.

Every per-sample loss has the form ``||A_h x - b_h||^2``:

* ``vector`` mode: ``A_h = I``, ``b_h = (chi, psi)``, so the loss is
  ``||x - xi||^2`` with ``x`` in R^2.
* ``scalar`` mode: ``A_h = [chi]``, ``b_h = [psi - intercept]``, a slope
  regression whose minimiser estimates the generating slope.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MODES = ("vector", "scalar")


class ProblemConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    """Samples ``(chi, psi)`` of every node, arrays of shape ``(N, m)``."""

    chi: np.ndarray
    psi: np.ndarray

    def __post_init__(self) -> None:
        if self.chi.shape != self.psi.shape or self.chi.ndim != 2:
            raise ProblemConfigError("chi and psi must be (N, m) arrays of equal shape")
        if self.chi.shape[1] < 1:
            raise ProblemConfigError("every node needs at least one sample")

    @property
    def node_count(self) -> int:
        return self.chi.shape[0]

    @property
    def samples_per_node(self) -> int:
        return self.chi.shape[1]


def generate_regression_data(
    node_count: int = 20,
    samples_per_node: int = 50,
    intercept: float = 4.0,
    slope: float = 3.0,
    noise_sd: float = 7.0,
    seed=0,
) -> Dataset:
    """``chi ~ U[-5, 5]``, ``psi = intercept + slope * chi + N(0, noise_sd^2)``."""
    if samples_per_node < 1:
        raise ProblemConfigError(f"samples_per_node must be >= 1, got {samples_per_node}")
    if node_count < 1:
        raise ProblemConfigError(f"node_count must be >= 1, got {node_count}")
    if noise_sd < 0:
        raise ProblemConfigError(f"noise_sd must be nonnegative, got {noise_sd}")
    rng = np.random.default_rng(seed)
    chi = rng.uniform(-5.0, 5.0, size=(node_count, samples_per_node))
    gamma = rng.normal(0.0, noise_sd, size=(node_count, samples_per_node))
    return Dataset(chi, intercept + slope * chi + gamma)


def save_dataset(data: Dataset, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["node", "h", "chi", "psi"])
        for i in range(data.node_count):
            for h in range(data.samples_per_node):
                writer.writerow([i + 1, h + 1, repr(float(data.chi[i, h])), repr(float(data.psi[i, h]))])


def load_dataset(path: str | Path) -> Dataset:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    n = max(int(r["node"]) for r in rows)
    m = max(int(r["h"]) for r in rows)
    chi = np.full((n, m), np.nan)
    psi = np.full((n, m), np.nan)
    for r in rows:
        i, h = int(r["node"]) - 1, int(r["h"]) - 1
        chi[i, h], psi[i, h] = float(r["chi"]), float(r["psi"])
    if np.isnan(chi).any():
        raise ProblemConfigError(f"{path}: every node needs the same number of samples")
    return Dataset(chi, psi)


@dataclass(frozen=True)
class ProblemConstants:
    """Curvature and gradient-noise constants.

    ``L``/``mu`` bound the Hessian of every local cost (and hence of the
    stacked separable cost and of the node-average). ``sigma`` bounds the
    single-node deviation ``||g_hat_i - grad f_i||``; ``sigma_stacked`` bounds
    the deviation of the stacked gradient over all nodes, both almost surely.
    """

    L: float
    mu: float
    sigma: float
    sigma_stacked: float
    L_i: np.ndarray
    mu_i: np.ndarray


class LeastSquaresProblem:
    """Local costs ``f_i(x) = (1/m) sum_h ||A_ih x - b_ih||^2``."""

    def __init__(self, A: np.ndarray, b: np.ndarray):
        # A: (N, m, p, d), b: (N, m, p)
        self.A = np.asarray(A, dtype=float)
        self.b = np.asarray(b, dtype=float)
        self.node_count, self.samples_per_node, _, self.dim = self.A.shape
        self._gram = np.einsum("nhpd,nhpe->nhde", self.A, self.A)  # A^T A per sample
        self._atb = np.einsum("nhpd,nhp->nhd", self.A, self.b)
        self.gram_mean = self._gram.mean(axis=1)  # (N, d, d)
        self.atb_mean = self._atb.mean(axis=1)  # (N, d)

    def local_cost(self, i: int, x) -> float:
        r = np.einsum("hpd,d->hp", self.A[i], np.asarray(x, dtype=float)) - self.b[i]
        return float(np.mean(np.sum(r * r, axis=1)))

    def global_cost(self, x) -> float:
        """Node-average cost ``(1/N) sum_i f_i(x)`` at a common point."""
        return float(np.mean([self.local_cost(i, x) for i in range(self.node_count)]))

    def local_gradient(self, i: int, x) -> np.ndarray:
        return 2.0 * (self.gram_mean[i] @ np.asarray(x, dtype=float) - self.atb_mean[i])

    def sample_gradient(self, i: int, h: int, x) -> np.ndarray:
        return 2.0 * (self._gram[i, h] @ np.asarray(x, dtype=float) - self._atb[i, h])

    def stochastic_gradient(self, i: int, x, rng: np.random.Generator):
        """Gradient of one uniformly drawn sample's loss; returns ``(gradient, h)``."""
        h = int(rng.integers(self.samples_per_node))
        return self.sample_gradient(i, h, x), h

    def optimum(self) -> np.ndarray:
        """Minimiser of ``sum_i f_i`` over a common ``x``."""
        return np.linalg.solve(self.gram_mean.sum(axis=0), self.atb_mean.sum(axis=0))

    def constants(self, x_box: tuple | None = None) -> ProblemConstants:
        """Exact curvature constants and almost-sure gradient-noise bounds.

        The deviation ``g_hat - grad f`` is affine in ``x``; when it depends on
        ``x`` at all, ``x_box = (lower, upper)`` (per-coordinate arrays) must
        bound the region of interest and the maximum is taken over its corners.
        """
        eig = np.linalg.eigvalsh(2.0 * self.gram_mean)
        L_i, mu_i = eig[:, -1], eig[:, 0]
        slope = 2.0 * (self._gram - self.gram_mean[:, None])  # (N, m, d, d)
        offset = -2.0 * (self._atb - self.atb_mean[:, None])  # (N, m, d)
        if np.allclose(slope, 0.0):
            corners = [np.zeros(self.dim)]
        else:
            if x_box is None:
                raise ProblemConfigError("x-dependent gradient noise needs an x_box")
            lo, hi = (np.broadcast_to(np.asarray(v, dtype=float), (self.dim,)) for v in x_box)
            corners = [np.array(c) for c in itertools.product(*zip(lo, hi))]
        dev = np.max(
            [np.linalg.norm(np.einsum("nhde,e->nhd", slope, c) + offset, axis=2) for c in corners],
            axis=0,
        )  # (N, m): worst case over the box for each sample
        per_node = dev.max(axis=1)
        return ProblemConstants(
            L=float(L_i.max()),
            mu=float(mu_i.min()),
            sigma=float(per_node.max()),
            sigma_stacked=float(np.sqrt(np.sum(per_node**2))),
            L_i=L_i,
            mu_i=mu_i,
        )


def build_problem(data: Dataset, mode: str = "vector", intercept: float = 4.0) -> LeastSquaresProblem:
    if mode == "vector":
        n, m = data.chi.shape
        A = np.broadcast_to(np.eye(2), (n, m, 2, 2)).copy()
        b = np.stack([data.chi, data.psi], axis=-1)
        return LeastSquaresProblem(A, b)
    if mode == "scalar":
        return LeastSquaresProblem(data.chi[..., None, None], (data.psi - intercept)[..., None])
    raise ProblemConfigError(f"unknown problem mode {mode!r}; expected one of {MODES}")


def sample_points(problem: LeastSquaresProblem) -> np.ndarray:
    """Samples as points ``(N, m, d)`` when the problem is ``||x - xi||^2``."""
    return problem.b
