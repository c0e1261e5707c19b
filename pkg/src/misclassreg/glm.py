"""Weighted Poisson and logistic regression by iteratively reweighted least squares.

These serve both as the M-step solvers of the EM algorithm (where the E-step
posterior probabilities are the case weights) and as the comparator fitters.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import linprog

from .core import log_sigmoid, sigmoid
from .errors import (
    ConvergenceError,
    SeparationError,
    SingularDesignError,
    ValidationError,
)

log = logging.getLogger(__name__)

WEIGHT_FLOOR = 1e-12
TOL = 1e-10
MAX_ITER = 50
MAX_HALVINGS = 20


@dataclass(frozen=True)
class WeightedRow:
    response: float
    weight: float
    design_row: tuple
    offset_log: float = 0.0

    def __post_init__(self):
        if self.weight < 0:
            raise ValidationError("weights must be nonnegative")
        object.__setattr__(self, "design_row", tuple(float(v) for v in self.design_row))


@dataclass
class GlmFit:
    coefficients: np.ndarray
    converged: bool
    iterations: int
    deviance: float
    info_matrix: np.ndarray
    deviance_trace: list = field(default_factory=list)

    @property
    def covariance(self):
        return np.linalg.inv(self.info_matrix)

    @property
    def se(self):
        return np.sqrt(np.diag(self.covariance))


class Separation(str, enum.Enum):
    NONE = "none"
    COMPLETE = "complete"
    QUASI = "quasi"


def rows_to_arrays(rows: Sequence[WeightedRow]):
    """Stack a row collection into ``(X, y, w, offset_log)`` arrays."""
    rows = list(rows)
    if not rows:
        raise ValidationError("no rows supplied")
    X = np.array([r.design_row for r in rows], dtype=float)
    y = np.array([r.response for r in rows], dtype=float)
    w = np.array([r.weight for r in rows], dtype=float)
    off = np.array([r.offset_log for r in rows], dtype=float)
    return X, y, w, off


def _prepare(X, y, w, offset_log):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n = X.shape[0]
    y = np.asarray(y, dtype=float).reshape(-1)
    w = np.ones(n) if w is None else np.asarray(w, dtype=float).reshape(-1)
    off = np.zeros(n) if offset_log is None else np.broadcast_to(np.asarray(offset_log, dtype=float), (n,))
    if y.size != n or w.size != n:
        raise ValidationError("design, response and weights have inconsistent lengths")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValidationError("weights must be finite and nonnegative")
    keep = w >= WEIGHT_FLOOR
    return X[keep], y[keep], w[keep], np.asarray(off)[keep]


def check_rank(X, names=None):
    """Raise :class:`SingularDesignError` naming the first column that is linearly dependent."""
    p = X.shape[1]
    if X.shape[0] < p:
        raise SingularDesignError(f"{X.shape[0]} positively weighted rows for {p} parameters")
    scale = np.max(np.abs(X), axis=0)
    scale[scale == 0] = 1.0
    Xs = X / scale
    if np.linalg.matrix_rank(Xs) == p:
        return
    for j in range(p):
        if np.linalg.matrix_rank(Xs[:, : j + 1]) < j + 1:
            label = names[j] if names is not None else j
            raise SingularDesignError(f"design is rank deficient at column {label!r}", column=label)


def _irls(X, y, w, off, init, family, names):
    p = X.shape[1]
    check_rank(X, names)

    if family == "poisson":
        def mean(eta):
            return np.exp(eta)

        def var(mu):
            return mu

        def deviance(eta, mu):
            with np.errstate(divide="ignore", invalid="ignore"):
                t = np.where(y > 0, y * np.log(y / mu), 0.0)
            return 2.0 * np.sum(w * (t - (y - mu)))
    else:
        def mean(eta):
            return sigmoid(eta)

        def var(mu):
            return mu * (1.0 - mu)

        def deviance(eta, mu):
            return -2.0 * np.sum(w * (y * log_sigmoid(eta) + (1.0 - y) * log_sigmoid(-eta)))

    if init is None:
        if family == "poisson":
            mu0 = y + 0.1
            z0 = np.log(mu0) - off
            wt = w * mu0
        else:
            mu0 = (y + 0.5) / 2.0
            z0 = np.log(mu0 / (1.0 - mu0)) - off
            wt = w * mu0 * (1.0 - mu0)
        beta = np.linalg.solve(X.T @ (wt[:, None] * X), X.T @ (wt * z0))
    else:
        beta = np.array(init, dtype=float).reshape(-1)
        if beta.size != p:
            raise ValidationError(f"init has {beta.size} entries, design has {p} columns")

    eta = off + X @ beta
    if family == "poisson" and np.max(eta) > 700:
        beta = np.zeros(p)
        eta = off.copy()
    mu = mean(eta)
    dev = deviance(eta, mu)
    trace = [dev]
    converged = False
    it = 0
    for it in range(1, MAX_ITER + 1):
        wv = w * var(mu)
        info = X.T @ (wv[:, None] * X)
        score = X.T @ (w * (y - mu))
        try:
            step = np.linalg.solve(info, score)
        except np.linalg.LinAlgError as exc:
            raise ConvergenceError(f"singular information matrix at iteration {it}", last_iterate=beta) from exc

        for _ in range(MAX_HALVINGS + 1):
            beta_new = beta + step
            eta_new = off + X @ beta_new
            if family == "poisson" and np.max(eta_new) > 700:
                step = step / 2.0
                continue
            mu_new = mean(eta_new)
            dev_new = deviance(eta_new, mu_new)
            if np.isfinite(dev_new) and dev_new <= dev + 1e-12 * (abs(dev) + 1.0):
                break
            step = step / 2.0
        else:
            # halving exhausted: accept only if already at a stationary point
            if np.max(np.abs(step)) < 1e-8 * (1.0 + np.max(np.abs(beta))):
                converged = True
                break
            raise ConvergenceError(f"step-halving exhausted at iteration {it}", last_iterate=beta)

        change = np.max(np.abs(beta_new - beta))
        rel = abs(dev - dev_new) / (abs(dev_new) + 0.1)
        beta, eta, mu, dev = beta_new, eta_new, mu_new, dev_new
        trace.append(dev)
        if family == "logistic" and np.max(np.abs(beta)) > 50:
            raise SeparationError("logistic coefficients diverging; data are (quasi-)separated", kind="quasi")
        # Newton converges quadratically, so the coefficient test costs about one extra step
        if change < TOL * (1.0 + np.max(np.abs(beta))) or rel < 1e-15:
            converged = True
            break

    info = X.T @ ((w * var(mu))[:, None] * X)
    info = 0.5 * (info + info.T)
    if not converged:
        raise ConvergenceError(f"IRLS did not converge in {MAX_ITER} iterations", last_iterate=beta)
    return GlmFit(beta, converged, it, float(dev), info, trace)


def fit_weighted_poisson(X, y, w=None, offset_log=None, init=None, names=None) -> GlmFit:
    """Maximize ``sum w_i [y_i*eta_i - exp(eta_i)]`` with ``eta_i = offset_log_i + X_i'beta``.

    Rows with weight below 1e-12 are dropped before accumulation.
    """
    X, y, w, off = _prepare(X, y, w, offset_log)
    if np.any(y < 0):
        raise ValidationError("Poisson responses must be nonnegative")
    return _irls(X, y, w, off, init, "poisson", names)


def fit_weighted_logistic(X, y, w=None, init=None, names=None, check_separation=True) -> GlmFit:
    """Weighted Bernoulli maximum likelihood, ``sum w_i [y_i*eta_i - log(1 + exp(eta_i))]``.

    With ``check_separation`` the positively weighted rows are screened by
    :func:`detect_separation` first and a :class:`SeparationError` is raised
    rather than returning an arbitrarily large coefficient.
    """
    X, y, w, off = _prepare(X, y, w, None)
    if not np.all((y == 0) | (y == 1)):
        raise ValidationError("logistic responses must be 0/1")
    if y.size == 0:
        raise ValidationError("no positively weighted rows")
    if np.all(y == y[0]):
        raise SeparationError(f"all responses equal {int(y[0])}; logistic MLE does not exist", kind="complete")
    if check_separation:
        kind = detect_separation(X, y, w)
        if kind is not Separation.NONE:
            raise SeparationError(f"{kind.value} separation in logistic design", kind=kind.value)
    return _irls(X, y, w, off, init, "logistic", names)


def detect_separation(X, y, w=None) -> Separation:
    """Classify a logistic design as separated (complete or quasi-complete) or not.

    Complete separation: some ``b`` has ``s_i X_i'b > 0`` for every positively
    weighted row, where ``s_i = 2 y_i - 1``. Quasi-complete: some nonzero ``b``
    has ``s_i X_i'b >= 0`` for all rows with strict inequality for at least one.
    Both are linear-programming feasibility questions.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float).reshape(-1)
    w = np.ones(y.size) if w is None else np.asarray(w, dtype=float).reshape(-1)
    keep = w > WEIGHT_FLOOR
    X, y = X[keep], y[keep]
    if y.size == 0 or np.all(y == y[0]):
        return Separation.COMPLETE

    scale = np.max(np.abs(X), axis=0)
    scale[scale == 0] = 1.0
    A = (2.0 * y - 1.0)[:, None] * (X / scale)
    p = A.shape[1]

    res = linprog(np.zeros(p), A_ub=-A, b_ub=-np.ones(A.shape[0]), bounds=[(None, None)] * p, method="highs")
    if res.status == 0:
        return Separation.COMPLETE

    res = linprog(-A.sum(axis=0), A_ub=-A, b_ub=np.zeros(A.shape[0]), bounds=[(-1.0, 1.0)] * p, method="highs")
    if res.status == 0 and -res.fun > 1e-7:
        margins = A @ res.x
        if np.max(margins) > 1e-7 and np.min(margins) > -1e-9:
            return Separation.QUASI
    return Separation.NONE


def weighted_poisson_loglik(beta, X, y, w, offset_log):
    """Kernel of the weighted Poisson log-likelihood (no log y! term)."""
    eta = offset_log + X @ beta
    return float(np.sum(w * (y * eta - np.exp(eta))))


def weighted_logistic_loglik(beta, X, y, w):
    eta = X @ beta
    return float(np.sum(w * (y * log_sigmoid(eta) + (1.0 - y) * log_sigmoid(-eta))))
