"""Standard errors from the observed information, Wald intervals and prevalence ratios."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.stats import norm

from . import kernels
from .core import Dataset, DesignSpec, log_sigmoid
from .em import problem_for
from .errors import DifferentiationError, ValidationError

EPS = np.finfo(float).eps


@dataclass
class CovarianceResult:
    covariance: np.ndarray
    se: np.ndarray
    hessian_ok: bool
    hessian: np.ndarray


@dataclass(frozen=True)
class PrSummary:
    label: str
    estimate: float
    ci_low: float
    ci_high: float
    log_estimate: float
    se: float


def fd_steps(theta):
    return EPS ** (1.0 / 3.0) * np.maximum(np.abs(theta), 1.0)


def finite_difference_gradient(f: Callable, theta, h=None):
    theta = np.asarray(theta, dtype=float)
    h = fd_steps(theta) if h is None else h
    g = np.empty(theta.size)
    for j in range(theta.size):
        e = np.zeros(theta.size)
        e[j] = h[j]
        fp, fm = f(theta + e), f(theta - e)
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise DifferentiationError(f"non-finite function value perturbing coordinate {j}", coordinate=j)
        g[j] = (fp - fm) / (2.0 * h[j])
    return g


def finite_difference_hessian(f: Callable, theta):
    """Central differences of the central-difference gradient, symmetrized.

    Uses step ``eps**(1/3) * max(|theta_j|, 1)`` per coordinate.
    """
    theta = np.asarray(theta, dtype=float)
    h = fd_steps(theta)
    p = theta.size
    H = np.empty((p, p))
    for k in range(p):
        e = np.zeros(p)
        e[k] = h[k]
        H[:, k] = (finite_difference_gradient(f, theta + e, h) - finite_difference_gradient(f, theta - e, h)) / (
            2.0 * h[k]
        )
    if not np.all(np.isfinite(H)):
        j = int(np.argwhere(~np.isfinite(H))[0][0])
        raise DifferentiationError(f"non-finite Hessian entry for coordinate {j}", coordinate=j)
    return 0.5 * (H + H.T)


def loglik_increment(data: Dataset, theta_ref, design: Optional[DesignSpec] = None):
    """Return ``g(theta) = loglik(theta) - loglik(theta_ref)`` evaluated without cancellation.

    Per-row log-likelihoods are large (``y*log(lam)`` is in the thousands for
    the simulated counts) while finite-difference perturbations change them in
    the tenth decimal, so differences are formed row by row from the parameter
    increment rather than by subtracting two totals.
    """
    prob = problem_for(data, design)
    theta_ref = np.asarray(theta_ref, dtype=float)
    p = prob.p
    b_ref, e_ref = theta_ref[:p], theta_ref[p:]
    mu0 = np.exp(prob.logoff + prob.D0 @ b_ref)
    mu1 = np.exp(prob.logoff + prob.D1 @ b_ref)
    t_ref = prob.M @ e_ref
    lp1_ref = log_sigmoid(t_ref)
    lp0_ref = log_sigmoid(-t_ref)
    a0 = prob.y * np.log(mu0) - mu0 - prob.lgy + np.where(prob.one_sided & (prob.xstar == 0), 0.0, lp0_ref)
    a1 = prob.y * np.log(mu1) - mu1 - prob.lgy + lp1_ref
    struct0 = prob.one_sided & (prob.xstar == 0)
    a1 = np.where(struct0, -np.inf, a1)
    hi = np.maximum(a0, a1)
    lse = hi + np.log1p(np.exp(np.minimum(a0, a1) - hi))
    with np.errstate(divide="ignore"):
        logw0 = a0 - lse
        logw1 = a1 - lse
    q = prob.queried
    code = np.full(prob.y.shape[0], kernels.ROW_MIX, dtype=np.int8)
    code[q & (prob.x == 0)] = kernels.ROW_X0
    code[q & (prob.x == 1)] = kernels.ROW_X1
    code[struct0] = kernels.ROW_ZERO
    y = np.ascontiguousarray(prob.y, dtype=float)
    logw0 = np.ascontiguousarray(logw0)
    logw1 = np.ascontiguousarray(logw1)

    def g(theta):
        theta = np.asarray(theta, dtype=float)
        db, de = theta[:p] - b_ref, theta[p:] - e_ref
        return kernels.increment_sum(y, prob.D0 @ db, prob.D1 @ db, prob.M @ de, mu0, mu1, t_ref,
                                     lp0_ref, lp1_ref, logw0, logw1, code)

    return g


def numerical_hessian(data, theta_hat, design: Optional[DesignSpec] = None):
    """Hessian of the observed-data log-likelihood at ``theta_hat``.

    ``data`` may also be a plain callable, in which case it is differentiated directly.
    """
    if callable(data):
        return finite_difference_hessian(data, theta_hat)
    return finite_difference_hessian(loglik_increment(data, theta_hat, design), theta_hat)


def numerical_score(data: Dataset, theta_hat, design: Optional[DesignSpec] = None):
    return finite_difference_gradient(loglik_increment(data, theta_hat, design), theta_hat)


def observed_information_covariance(data: Dataset, theta_hat, design: Optional[DesignSpec] = None) -> CovarianceResult:
    H = numerical_hessian(data, theta_hat, design)
    eig = np.linalg.eigvalsh(H)
    ok = bool(np.all(eig < 0))
    try:
        cov = np.linalg.inv(-H)
    except np.linalg.LinAlgError:
        cov = np.linalg.pinv(-H)
        ok = False
    cov = 0.5 * (cov + cov.T)
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    return CovarianceResult(cov, se, ok, H)


Z95 = float(norm.ppf(0.975))


def wald_ci(estimate, se, level=0.95):
    if not se > 0:
        raise ValidationError(f"standard error must be positive, got {se}")
    z = Z95 if level == 0.95 else float(norm.ppf(0.5 + level / 2.0))
    return estimate - z * se, estimate + z * se


def linear_combo_se(covariance, contrast):
    """``sqrt(c' S c)``; the full quadratic form including twice every covariance."""
    cov = np.asarray(covariance, dtype=float)
    c = np.asarray(contrast, dtype=float).reshape(-1)
    if cov.shape != (c.size, c.size):
        raise ValidationError(f"contrast of length {c.size} does not match covariance {cov.shape}")
    v = float(c @ cov @ c)
    if v < 0 or not np.isfinite(v):
        raise ValidationError(f"covariance is not positive semidefinite along contrast (c'Sc = {v})")
    return float(np.sqrt(v))


def parse_contrast(expr: str, terms: Sequence[str]):
    """Turn ``"access+access:metro"`` into a coefficient vector over ``terms``.

    Terms may carry a numeric multiplier (``"2*access-metro"``).
    """
    c = np.zeros(len(terms))
    expr = expr.replace(" ", "")
    if not expr:
        raise ValidationError("empty contrast")
    for sign, mult, name in re.findall(r"([+-]?)(?:([0-9.]+)\*)?([^+\-*]+)", expr):
        if name not in terms:
            raise ValidationError(f"unknown term {name!r} in contrast; known: {list(terms)}")
        c[list(terms).index(name)] += (-1.0 if sign == "-" else 1.0) * (float(mult) if mult else 1.0)
    return c


def pr_summary(label, beta, covariance, contrast, level=0.95) -> PrSummary:
    """Prevalence ratio ``exp(c'beta)`` with a Wald interval on the log scale."""
    c = np.asarray(contrast, dtype=float)
    est = float(c @ np.asarray(beta, dtype=float))
    se = linear_combo_se(covariance, c)
    lo, hi = wald_ci(est, se, level)
    return PrSummary(label, float(np.exp(est)), float(np.exp(lo)), float(np.exp(hi)), est, se)
