"""Automated per-node stepsize rule (local curvature estimate, smoothing, growth cap)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

ETA0 = 1e-10
KAPPA = 0.4
ALPHA = 0.5
ZERO_DISPLACEMENT = 1e-15


class UndefinedStepsizeError(ArithmeticError):
    """Both branches of the stepsize proposal are infinite."""


def local_lipschitz(x_curr, x_prev, g_curr, g_prev) -> float | None:
    """Secant curvature ``||g_curr - g_prev|| / ||x_curr - x_prev||``.

    Returns ``None`` when the displacement is below ``ZERO_DISPLACEMENT``; the
    caller then keeps its previous smoothed estimate.
    """
    dx = np.linalg.norm(np.asarray(x_curr, dtype=float) - np.asarray(x_prev, dtype=float))
    if dx < ZERO_DISPLACEMENT:
        return None
    return float(np.linalg.norm(np.asarray(g_curr, dtype=float) - np.asarray(g_prev, dtype=float)) / dx)


def smooth_lipschitz(l_new: float, l_prev: float, kappa: float = KAPPA) -> float:
    if not 0.0 <= kappa < 1.0:
        raise ValueError(f"kappa must lie in [0, 1), got {kappa}")
    return (1.0 - kappa) * l_new + kappa * l_prev


def propose_stepsize(eta_prev: float, theta_prev: float, l_smoothed: float, alpha: float = ALPHA) -> float:
    """``min(sqrt(1 + theta_prev) * eta_prev, alpha / l_smoothed)`` with infinities honoured."""
    growth = math.inf if math.isinf(theta_prev) else math.sqrt(1.0 + theta_prev) * eta_prev
    curvature = math.inf if l_smoothed == 0 else alpha / l_smoothed
    eta = min(growth, curvature)
    if math.isinf(eta):
        raise UndefinedStepsizeError(
            f"theta_prev={theta_prev} and smoothed curvature {l_smoothed} leave the stepsize unbounded"
        )
    return eta


def update_theta(eta_curr: float, eta_prev: float) -> float:
    return eta_curr / eta_prev


@dataclass
class StepsizeState:
    """One node's stepsize recursion.

    Starts from ``eta = eta0``, ``theta = inf`` and a zero smoothed curvature.
    ``x_prev``/``grad_prev`` hold the previous iterate and the stochastic
    gradient that was used there.
    """

    kappa: float = KAPPA
    alpha: float = ALPHA
    eta0: float = ETA0
    eta: float = field(init=False)
    theta: float = field(init=False, default=math.inf)
    l_smoothed: float = field(init=False, default=0.0)
    l_raw: float | None = field(init=False, default=None)
    x_prev: np.ndarray | None = field(init=False, default=None)
    grad_prev: np.ndarray | None = field(init=False, default=None)

    def __post_init__(self) -> None:
        if self.alpha <= 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.eta0 <= 0:
            raise ValueError(f"eta0 must be positive, got {self.eta0}")
        self.eta = self.eta0

    def remember(self, x, grad) -> None:
        self.x_prev = np.array(x, dtype=float)
        self.grad_prev = np.array(grad, dtype=float)

    def propose(self, x_curr, g_curr, g_prev=None) -> float:
        """Curvature estimate, smoothing and the new local proposal ``eta``.

        ``g_prev`` overrides the cached gradient (used when the previous iterate
        is re-evaluated on the current sample). The state is not advanced until
        :meth:`commit`.
        """
        g_prev = self.grad_prev if g_prev is None else g_prev
        self.l_raw = local_lipschitz(x_curr, self.x_prev, g_curr, g_prev)
        if self.l_raw is None:
            l_new = self.l_smoothed
        else:
            l_new = smooth_lipschitz(self.l_raw, self.l_smoothed, self.kappa)
        eta = propose_stepsize(self.eta, self.theta, l_new, self.alpha)
        self._pending = (eta, l_new)
        return eta

    def commit(self, x_curr, g_curr) -> None:
        eta, l_new = self._pending
        self.theta = update_theta(eta, self.eta)
        self.eta = eta
        self.l_smoothed = l_new
        self.remember(x_curr, g_curr)
