"""Poisson log-link regression with exposure, solved by damped Newton steps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, NumericError, SingularDesignError


@dataclass
class PoissonFit:
    beta: np.ndarray
    cov: np.ndarray
    se: np.ndarray
    loglik: float
    iterations: int
    grad_norm: float


def collinear_columns(X: np.ndarray, tol: float = 1e-10) -> list:
    """Columns involved in a linear dependency (empty when full rank)."""
    _, s, vt = np.linalg.svd(X, full_matrices=False)
    null = vt[s <= tol * s[0]] if len(s) else vt
    if len(null) == 0:
        return []
    return sorted({int(k) for row in null for k in np.flatnonzero(np.abs(row) > 1e-8)})


def poisson_newton(y, X, exposure, beta0=None, tol: float = 1e-8, max_iter: int = 100,
                   names=None) -> PoissonFit:
    """Maximize sum(y * X beta) - sum(exposure * exp(X beta)).

    ``y`` may be fractional (expected counts). Rows with zero exposure are
    dropped. Convergence is declared when the largest gradient component
    falls below ``tol``, or when the Newton step no longer changes beta at
    working precision.
    """
    y = np.asarray(y, dtype=float)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    exposure = np.asarray(exposure, dtype=float)
    keep = exposure > 0
    y, X, exposure = y[keep], X[keep], exposure[keep]
    bad = collinear_columns(X)
    if bad:
        labels = [names[k] for k in bad] if names is not None else bad
        raise SingularDesignError(f"design matrix is rank deficient; collinear columns: {labels}", labels)
    log_e = np.log(exposure)
    if beta0 is None:
        beta = np.zeros(X.shape[1])
        beta[0] = np.log(max(y.sum(), 1e-300) / exposure.sum())
        # intercept column is not required to be first for callers of the raw solver
        if not np.allclose(X[:, 0], 1.0):
            beta[:] = 0.0
    else:
        beta = np.asarray(beta0, dtype=float).copy()

    def objective(b):
        eta = X @ b
        return float(y @ eta - np.sum(np.exp(log_e + eta)))

    f = objective(beta)
    for it in range(1, max_iter + 1):
        mu = np.exp(log_e + X @ beta)
        grad = X.T @ (y - mu)
        gnorm = float(np.max(np.abs(grad)))
        if gnorm < tol:
            break
        info = (X * mu[:, None]).T @ X
        try:
            step = np.linalg.solve(info, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(info, grad, rcond=None)[0]
        t = 1.0
        while True:
            cand = beta + t * step
            fc = objective(cand)
            if np.isfinite(fc) and fc >= f - 1e-12 * abs(f):
                break
            t *= 0.5
            if t < 1e-10:
                raise ConvergenceError("Poisson Newton line search failed", beta)
        stalled = np.all(np.abs(cand - beta) <= 1e-15 * np.maximum(1.0, np.abs(beta)))
        beta, f = cand, fc
        if stalled:
            break
    else:
        mu = np.exp(log_e + X @ beta)
        gnorm = float(np.max(np.abs(X.T @ (y - mu))))
        if gnorm >= tol:
            raise ConvergenceError(f"Poisson Newton did not converge in {max_iter} iterations "
                                   f"(scaled gradient {gnorm:.3g})", beta)
    mu = np.exp(log_e + X @ beta)
    info = (X * mu[:, None]).T @ X
    try:
        cov = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        cov = None
    if cov is None or not np.all(np.isfinite(cov)):
        raise NumericError("Poisson information is singular; fitted rates collapsed to zero", beta)
    return PoissonFit(beta=beta, cov=cov, se=np.sqrt(np.clip(np.diag(cov), 0, None)),
                      loglik=float(y @ (log_e + X @ beta) - mu.sum()), iterations=it, grad_norm=gnorm)
