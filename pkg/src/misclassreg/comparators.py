"""Benchmark analyses: gold standard, naive and complete case Poisson fits.

All three use model-based GLM standard errors with no correction for
misclassification.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import gammaln

from .core import Dataset, DesignSpec
from .errors import SingularDesignError, ValidationError
from .glm import fit_weighted_poisson


class Method(str, enum.Enum):
    GOLD = "gold"
    NAIVE = "naive"
    COMPLETE_CASE = "complete-case"
    MLE = "mle"


@dataclass
class ComparatorFit:
    method: Method
    beta_hat: np.ndarray
    covariance: np.ndarray
    se: np.ndarray
    n_used: int
    design: DesignSpec
    loglik: float = float("nan")
    iterations: int = 0


def _poisson(method, data, exposure, mask, design):
    design = design or data.default_design()
    D = design.matrix(exposure[mask], data.z[mask])
    fit = fit_weighted_poisson(D, data.y[mask], None, np.log(data.offset[mask]), names=design.terms)
    cov = np.linalg.inv(fit.info_matrix)
    cov = 0.5 * (cov + cov.T)
    eta = np.log(data.offset[mask]) + D @ fit.coefficients
    ll = float(np.sum(data.y[mask] * eta - np.exp(eta) - gammaln(data.y[mask] + 1.0)))
    return ComparatorFit(method, fit.coefficients, cov, np.sqrt(np.diag(cov)), int(mask.sum()), design, ll,
                         fit.iterations)


def fit_gold(data: Dataset, design: Optional[DesignSpec] = None) -> ComparatorFit:
    """Poisson fit using the true exposure on every row; requires X for all rows."""
    if not np.all(data.queried):
        raise ValidationError(f"gold standard needs X on every row; {int((~data.queried).sum())} missing")
    return _poisson(Method.GOLD, data, data.x, np.ones(data.n, dtype=bool), design)


def fit_naive(data: Dataset, design: Optional[DesignSpec] = None) -> ComparatorFit:
    """Poisson fit with the error-prone exposure X* substituted for X."""
    return _poisson(Method.NAIVE, data, data.xstar, np.ones(data.n, dtype=bool), design)


def fit_complete_case(data: Dataset, design: Optional[DesignSpec] = None) -> ComparatorFit:
    """Poisson fit on the queried rows only."""
    q = data.queried
    design = design or data.default_design()
    if q.sum() < design.n_params:
        raise SingularDesignError(f"{int(q.sum())} queried rows for {design.n_params} parameters")
    return _poisson(Method.COMPLETE_CASE, data, data.x, q, design)
