"""Error metric, convergence bounds and their runtime checks over recorded runs."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np


class MetricUndefinedError(ValueError):
    pass


def error_metric(states, initial, optimum) -> float:
    """``sqrt(sum_i ||x_i^k - x*||^2 / ||x_i^0 - x*||^2)``.

    Scalar states reduce to the normalised error used for the regression plots.
    """
    states = np.asarray(states, dtype=float)
    initial = np.asarray(initial, dtype=float)
    n = states.shape[0]
    num = np.sum((states.reshape(n, -1) - np.reshape(optimum, -1)) ** 2, axis=1)
    den = np.sum((initial.reshape(n, -1) - np.reshape(optimum, -1)) ** 2, axis=1)
    if np.any(den == 0):
        raise MetricUndefinedError("some initial state coincides with the optimum")
    return float(np.sqrt(np.sum(num / den)))


def consensus_projection(stacked) -> np.ndarray:
    """Orthogonal projection onto the consensus subspace: replace every block by the mean."""
    stacked = np.asarray(stacked, dtype=float)
    return np.broadcast_to(stacked.mean(axis=0), stacked.shape).copy()


def stacked_distance(states, optimum) -> float:
    states = np.asarray(states, dtype=float)
    return float(np.linalg.norm(states.reshape(states.shape[0], -1) - np.reshape(optimum, -1)))


def projection_error(x, lam, g_hat, g_true) -> float:
    """Norm of ``proj(x - lam g_hat) - proj(x - lam g_true)`` over the stacked vector.

    ``lam`` may be a scalar or one stepsize per node.
    """
    x = np.asarray(x, dtype=float)
    lam = np.reshape(np.asarray(lam, dtype=float), (-1,) + (1,) * (x.ndim - 1))
    a = consensus_projection(x - lam * np.asarray(g_hat))
    b = consensus_projection(x - lam * np.asarray(g_true))
    return float(np.linalg.norm(a - b))


def contraction_factors(lams, L: float, mu: float) -> np.ndarray:
    lams = np.asarray(lams, dtype=float)
    return np.maximum(np.abs(1.0 - lams * L), np.abs(1.0 - lams * mu))


@dataclass
class BoundParams:
    """Stepsize sequence and problem constants for the bounds.

    Index ``t`` of ``lams`` is the stepsize used in round ``t``; the bounds at
    index ``k`` bound ``||x^{k+1} - x*||``.
    """

    lams: np.ndarray
    L: float
    mu: float
    sigma: float
    d0: float

    def __post_init__(self) -> None:
        self.lams = np.asarray(self.lams, dtype=float)
        bad = (self.lams <= 0) | (self.lams >= 2.0 / self.L)
        if np.any(bad):
            warnings.warn(
                f"{int(bad.sum())} stepsizes lie outside (0, 2/L); contraction factors reach 1 or more",
                RuntimeWarning,
                stacklevel=2,
            )

    @property
    def zeta(self) -> np.ndarray:
        return contraction_factors(self.lams, self.L, self.mu)

    def nu(self, k: int) -> float:
        """``max_{1<=t<=k} zeta_t``; at ``k = 0`` the range is empty and ``zeta_0`` is used."""
        z = self.zeta
        return float(z[1 : k + 1].max()) if k >= 1 else float(z[0])

    def lam_bar(self, k: int) -> float:
        return float(self.lams[1 : k + 1].max()) if k >= 1 else float(self.lams[0])


def thm1_bound(params: BoundParams, k: int) -> float:
    """``prod_{t<=k} zeta_t * d0 + sigma * sum_h lam_h prod_{h<j<=k} zeta_j``."""
    return float(thm1_bounds(params)[k])


def thm1_bounds(params: BoundParams) -> np.ndarray:
    """All bounds at once through ``b_k = zeta_k b_{k-1} + sigma lam_k``, ``b_{-1} = d0``."""
    zeta = params.zeta
    out = np.empty_like(zeta)
    b = params.d0
    for k, (z, lam) in enumerate(zip(zeta, params.lams)):
        b = z * b + params.sigma * lam
        out[k] = b
    return out


def _geometric(nu: float, terms: int) -> float:
    if 1.0 - nu < 1e-12:
        return float(terms)
    return -math.expm1(terms * math.log(nu)) / (1.0 - nu) if nu > 0 else 1.0


def rem2_bound(params: BoundParams, k: int) -> float:
    """``nu^k d0 + lam_bar sigma (1 - nu^{k+1}) / (1 - nu)``."""
    nu = params.nu(k)
    return float(nu**k * params.d0 + params.lam_bar(k) * params.sigma * _geometric(nu, k + 1))


def rem2_bounds(params: BoundParams) -> np.ndarray:
    return np.array([rem2_bound(params, k) for k in range(len(params.lams))])


def bound_check(runs, L: float, mu: float, sigma: float, slack_sigmas: float = 3.0, step_slack: float = 1e-12):
    """Compare recorded runs against the bounds.

    ``runs`` are trajectory records that share graph, data and initial state
    and differ in their gradient-sampling seeds. Returns a JSON-ready dict.
    """
    if not runs:
        raise ValueError("bound_check needs at least one run")
    dist = np.array([r.dist for r in runs])  # (R, K+1): ||x^{k+1} - x*||
    R = dist.shape[0]
    d0 = runs[0].d0
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        params = [BoundParams(r.lam_common, L, mu, sigma, r.d0) for r in runs]
    thm1 = np.array([thm1_bounds(p) for p in params])
    rem2 = np.array([rem2_bounds(p) for p in params])

    mean = dist.mean(axis=0)
    sd = dist.std(axis=0, ddof=1) if R > 1 else np.zeros_like(mean)
    slack = slack_sigmas * sd / math.sqrt(R)
    thm1_mean = thm1.mean(axis=0)
    violations = mean > thm1_mean + slack

    before = np.concatenate([np.full((R, 1), d0), dist[:, :-1]], axis=1)
    zeta = np.array([p.zeta for p in params])
    eg = np.array([r.eg_norm for r in runs])
    lam = np.array([r.lam_common for r in runs])
    scale = np.maximum(1.0, before)
    one_step_excess = dist - (zeta * before + eg)
    one_step_viol = one_step_excess > step_slack * scale
    eg_excess = eg - lam * sigma
    eg_viol = eg_excess > 1e-12 * np.maximum(1.0, lam * sigma)
    rem2_viol = rem2 < thm1

    return {
        "repetitions": R,
        "rounds": int(dist.shape[1]),
        "L": L,
        "mu": mu,
        "sigma": sigma,
        "d0": d0,
        "slack_sigmas": slack_sigmas,
        "mean_dist": mean.tolist(),
        "sd_dist": sd.tolist(),
        "thm1_bound": thm1_mean.tolist(),
        "rem2_bound": rem2.mean(axis=0).tolist(),
        "thm1_violations": np.nonzero(violations)[0].tolist(),
        "pathwise_thm1_violations": int(np.sum(dist > thm1 * (1 + 1e-12) + 1e-12)),
        "one_step_violations": int(one_step_viol.sum()),
        "one_step_max_excess": float(one_step_excess.max()),
        "eg_violations": int(eg_viol.sum()),
        "eg_over_lam_max": float(np.max(eg / lam)),
        "rem2_below_thm1": int(rem2_viol.sum()),
        "zeta_out_of_range": int(np.sum((zeta < 0) | (zeta >= 1))),
        "warnings": [str(w.message) for w in caught],
        "ok": bool(
            not violations.any() and not one_step_viol.any() and not eg_viol.any() and not rem2_viol.any()
        ),
    }


def format_report(report: dict, every: int = 10) -> str:
    lines = [f"{'k':>5} {'E||x-x*||':>12} {'thm1':>12} {'rem2':>12}"]
    K = report["rounds"]
    for k in sorted(set(range(0, K, every)) | {K - 1}):
        lines.append(
            f"{k:>5} {report['mean_dist'][k]:>12.4e} {report['thm1_bound'][k]:>12.4e} "
            f"{report['rem2_bound'][k]:>12.4e}"
        )
    lines.append(
        f"violations: thm1={len(report['thm1_violations'])} one-step={report['one_step_violations']} "
        f"e_g={report['eg_violations']} rem2<thm1={report['rem2_below_thm1']}"
    )
    return "\n".join(lines)
