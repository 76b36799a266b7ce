"""Small Levenberg-Marquardt solver for weighted least squares."""

from dataclasses import dataclass

import numpy as np


@dataclass
class LMResult:
    params: np.ndarray
    cost: float
    iterations: int
    converged: bool
    covariance: np.ndarray | None
    message: str


def levenberg_marquardt(residual, jacobian, p0, xtol=1e-10, max_iter=200, lam=1e-3):
    """Minimize ``sum(residual(p)**2)``.

    Uses Marquardt's diagonal scaling.  Stops when every parameter changes by
    less than ``xtol`` relative to its magnitude, or after ``max_iter``
    accepted steps.  ``covariance`` is ``inv(J^T J)`` at the solution (residuals
    are assumed already divided by their standard errors).
    """
    p = np.asarray(p0, dtype=float).copy()
    r = residual(p)
    cost = float(r @ r)
    if not np.isfinite(cost):
        raise FloatingPointError("residuals are not finite at the starting point")
    converged = False
    message = "iteration limit reached"
    it = 0
    for it in range(1, max_iter + 1):
        jac = jacobian(p)
        a = jac.T @ jac
        g = jac.T @ r
        d = np.maximum(np.diag(a), 1e-300)
        while True:
            try:
                step = np.linalg.solve(a + lam * np.diag(d), -g)
            except np.linalg.LinAlgError:
                step = np.full_like(p, np.nan)
            trial = p + step
            r_new = residual(trial) if np.all(np.isfinite(trial)) else None
            cost_new = float(r_new @ r_new) if r_new is not None else np.inf
            if np.isfinite(cost_new) and cost_new <= cost:
                break
            lam *= 4.0
            if lam > 1e16:
                # no downhill step left: we are at the minimum to working precision
                converged = True
                message = "no further decrease possible"
                break
        if converged:
            break
        rel = np.abs(step) / np.maximum(np.abs(p), 1e-300)
        p, r, cost = trial, r_new, cost_new
        lam = max(lam / 3.0, 1e-12)
        if np.all(rel < xtol):
            converged = True
            message = "relative parameter change below tolerance"
            break
    jac = jacobian(p)
    try:
        cov = np.linalg.inv(jac.T @ jac)
    except np.linalg.LinAlgError:
        cov = None
    return LMResult(p, cost, it, converged, cov, message)
