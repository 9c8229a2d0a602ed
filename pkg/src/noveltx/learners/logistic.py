"""Logistic regression by iteratively reweighted least squares."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.special import expit

logger = logging.getLogger(__name__)

# |coef| beyond this with saturated fitted probabilities means the MLE is at infinity
_DIVERGENCE_NORM = 25.0


@dataclass
class LogisticFit:
    coefficients: np.ndarray
    std_errors: np.ndarray
    z_values: np.ndarray
    p_values: np.ndarray
    converged: bool
    n_iter: int
    names: list[str] = field(default_factory=list)
    diagnostic: str = ""
    log_likelihood: float = float("nan")
    n_obs: int = 0

    def to_dict(self) -> dict:
        return {
            "names": list(self.names),
            "coefficients": [float(v) for v in self.coefficients],
            "std_errors": [float(v) for v in self.std_errors],
            "z_values": [float(v) for v in self.z_values],
            "p_values": [float(v) for v in self.p_values],
            "converged": bool(self.converged),
            "n_iter": int(self.n_iter),
            "diagnostic": self.diagnostic,
            "log_likelihood": float(self.log_likelihood),
            "n_obs": int(self.n_obs),
        }

    def summary(self) -> str:
        lines = [
            f"{'':<24}{'coef':>12}{'std err':>12}{'z':>10}{'P>|z|':>10}",
        ]
        for name, b, se, z, p in zip(self.names, self.coefficients, self.std_errors,
                                     self.z_values, self.p_values):
            lines.append(f"{name:<24}{b:>12.6f}{se:>12.6f}{z:>10.3f}{p:>10.4f}")
        lines.append(f"n_obs={self.n_obs}  log-likelihood={self.log_likelihood:.4f}  "
                     f"converged={self.converged}  iterations={self.n_iter}")
        if self.diagnostic:
            lines.append(f"note: {self.diagnostic}")
        return "\n".join(lines)


def _log_likelihood(X, y, beta):
    eta = X @ beta
    # log(1 + e^eta) computed stably
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


def logistic_fit(X, y, names=None, tol: float = 1e-8, max_iter: int = 100) -> LogisticFit:
    """Maximum-likelihood logistic regression with Wald inference.

    ``X`` must already contain the intercept column. Convergence is declared
    when the largest absolute coefficient update drops below ``tol``. Perfect
    or quasi-complete separation returns the partial fit with
    ``converged=False`` and a diagnostic rather than raising.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
        raise ValueError(f"incompatible shapes X{X.shape} y{y.shape}")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("y must be binary 0/1")
    n, p = X.shape
    if n < p:
        raise ValueError(f"need rows >= columns, got {n} < {p}")
    names = list(names) if names is not None else [f"x{j}" for j in range(p)]

    nan = np.full(p, np.nan)
    if np.all(y == y[0]):
        return LogisticFit(np.zeros(p), nan, nan, nan, False, 0, names,
                           "degenerate outcome: all responses are equal", n_obs=n)

    beta = np.zeros(p)
    converged = False
    diagnostic = ""
    it = 0
    for it in range(1, max_iter + 1):
        mu = expit(X @ beta)
        w = mu * (1.0 - mu)
        info = X.T @ (X * w[:, None])
        score = X.T @ (y - mu)
        try:
            step = np.linalg.solve(info, score)
        except np.linalg.LinAlgError:
            diagnostic = "singular information matrix"
            break
        beta = beta + step
        if np.max(np.abs(step)) < tol:
            converged = True
            break
        if np.linalg.norm(beta) > _DIVERGENCE_NORM:
            mu = expit(X @ beta)
            if np.all((mu < 1e-6) | (mu > 1 - 1e-6)) or it > 30:
                diagnostic = "separation detected: coefficient norm diverging"
                break

    mu = expit(X @ beta)
    w = mu * (1.0 - mu)
    info = X.T @ (X * w[:, None])
    try:
        cov = np.linalg.inv(info)
        se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    except np.linalg.LinAlgError:
        se = nan.copy()
    with np.errstate(divide="ignore", invalid="ignore"):
        z = beta / se
    pvals = 2.0 * stats.norm.sf(np.abs(z))
    if not converged and not diagnostic:
        diagnostic = f"no convergence after {max_iter} iterations"
    if diagnostic:
        logger.warning("logistic fit: %s", diagnostic)
    return LogisticFit(beta, se, z, pvals, converged, it, names, diagnostic,
                       _log_likelihood(X, y, beta), n)
