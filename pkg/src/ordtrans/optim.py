"""Gradient ascent with backtracking, shared by the transition model and the LR baselines."""

from dataclasses import dataclass, field

import numpy as np


class DivergenceError(RuntimeError):
    pass


@dataclass
class AscentResult:
    theta: np.ndarray
    value: float
    iterations: int
    converged: bool
    final_step_delta: float
    trace: list = field(default_factory=list)


def ascend(objective, theta0, eta=0.01, tol=1e-4, max_iter=10000, max_halvings=20):
    """Maximize ``objective`` by ``theta <- theta + eta_t * grad``.

    ``objective(theta)`` returns ``(value, grad)``; a non-finite value marks an
    infeasible point.  A trial step that lowers the objective or lands on an
    infeasible point is halved, up to ``max_halvings`` times.  The trial step of
    the next iteration starts at twice the last accepted one, capped at
    ``eta``.  Iteration stops once a step of the full size ``eta`` moves theta
    by less than ``tol`` in every coordinate; a step shortened by backtracking
    is small because of the line search, not because the gradient is, so it
    does not count.
    """
    theta = np.array(theta0, dtype=float)
    value, grad = objective(theta)
    if not np.isfinite(value):
        raise DivergenceError("objective is not finite at the starting point")
    trace = [value]
    step = eta
    delta = np.inf
    converged = False
    t = 0
    while t < max_iter:
        t += 1
        e = step
        for _ in range(max_halvings + 1):
            cand = theta + e * grad
            cval, cgrad = objective(cand)
            if np.isfinite(cval) and cval >= value:
                break
            e *= 0.5
        else:
            # no ascent direction at any trial step: stationary to working precision
            delta = float(np.max(np.abs(2 * e * grad), initial=0.0))
            converged = delta < tol
            t -= 1
            break
        delta = float(np.max(np.abs(cand - theta), initial=0.0))
        theta, value, grad = cand, cval, cgrad
        trace.append(value)
        full = e == eta
        step = min(eta, 2 * e)
        if full and delta < tol:
            converged = True
            break
    return AscentResult(theta, value, t, converged, delta, trace)
