"""EM algorithm for the observed-data likelihood of the two-phase design.

Queried rows contribute ``log Pr(Y|X,Z) + log Pr(X|X*,Z)``; unqueried rows
contribute ``log sum_x Pr(Y|x,Z) Pr(x|X*,Z)``. The E-step computes posterior
exposure probabilities for unqueried rows, and the M-step refits the outcome
and misclassification models as weighted Poisson and logistic regressions on
a dataset where each row is duplicated once per exposure value.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import gammaln

from . import kernels
from .core import (
    Dataset,
    DesignSpec,
    MisclassMode,
    MisclassModelParams,
    OutcomeModelParams,
    _coef,
    misclass_design,
    misclass_terms,
)
from .errors import (
    LinearPredictorOverflowError,
    SeparationError,
    StructuralViolationError,
    ValidationError,
)
from .glm import (
    Separation,
    detect_separation,
    fit_weighted_logistic,
    fit_weighted_poisson,
)

log = logging.getLogger(__name__)


class InitStrategy(str, enum.Enum):
    ZEROS = "zeros"
    COMPLETE_CASE = "complete-case"


class SeparationPolicy(str, enum.Enum):
    FALLBACK_NAIVE = "fallback-naive"
    ERROR = "error"


@dataclass(frozen=True)
class EmConfig:
    init_strategy: InitStrategy = InitStrategy.COMPLETE_CASE
    tolerance: float = 1e-3
    max_iterations: int = 1000
    separation_policy: SeparationPolicy = SeparationPolicy.FALLBACK_NAIVE
    loglik_tolerance: float = 1e-10

    def __post_init__(self):
        object.__setattr__(self, "init_strategy", InitStrategy(self.init_strategy))
        object.__setattr__(self, "separation_policy", SeparationPolicy(self.separation_policy))
        if not self.tolerance > 0:
            raise ValidationError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ValidationError("max_iterations must be at least 1")


@dataclass
class EmState:
    beta: np.ndarray
    eta: np.ndarray
    phi: np.ndarray
    obs_loglik: float
    iteration: int


@dataclass
class MleFitResult:
    beta_hat: np.ndarray
    eta_hat: np.ndarray
    loglik_trace: list
    converged: bool
    iterations: int
    fallback_used: bool
    design: DesignSpec
    mode: MisclassMode
    covariance: Optional[np.ndarray] = None
    hessian_ok: Optional[bool] = None
    eta_names: list = field(default_factory=list)
    separation: str = "none"

    @property
    def theta(self):
        return np.concatenate([self.beta_hat, self.eta_hat])

    @property
    def param_names(self):
        return list(self.design.terms) + [f"eta:{n}" for n in self.eta_names]

    @property
    def loglik(self):
        return self.loglik_trace[-1] if self.loglik_trace else float("nan")

    @property
    def beta_covariance(self):
        if self.covariance is None:
            return None
        p = self.beta_hat.size
        return self.covariance[:p, :p]

    @property
    def beta_se(self):
        cov = self.beta_covariance
        if cov is None:
            return None
        return np.sqrt(np.clip(np.diag(cov), 0.0, None))

    @property
    def beta_params(self):
        return OutcomeModelParams(self.beta_hat, self.design)

    @property
    def eta_params(self):
        return MisclassModelParams(self.eta_hat, self.mode)


class Problem:
    """Arrays derived once per (dataset, design) and reused by every EM iteration."""

    def __init__(self, data: Dataset, design: DesignSpec):
        self.data = data
        self.design = design
        self.one_sided = data.mode is MisclassMode.ONE_SIDED
        n = data.n
        self.D0 = design.matrix(np.zeros(n), data.z)
        self.D1 = design.matrix(np.ones(n), data.z)
        self.M = misclass_design(data.xstar, data.z, data.mode)
        self.y = np.ascontiguousarray(data.y)
        self.lgy = gammaln(self.y + 1.0)
        self.logoff = np.log(data.offset)
        self.xstar = np.ascontiguousarray(data.xstar)
        self.x = np.ascontiguousarray(data.x)
        self.queried = np.ascontiguousarray(data.queried)
        self.p = self.D0.shape[1]
        self.k = self.M.shape[1]

        self.X_pois = np.vstack([self.D0, self.D1])
        self.y_pois = np.concatenate([self.y, self.y])
        self.off_pois = np.concatenate([self.logoff, self.logoff])

        self.mis_rows = (self.xstar == 1) if self.one_sided else np.ones(n, dtype=bool)
        Mr = self.M[self.mis_rows]
        self.X_logit = np.vstack([Mr, Mr])
        self.y_logit = np.concatenate([np.zeros(len(Mr)), np.ones(len(Mr))])
        self.eta_names = misclass_terms(data.covariate_names, data.mode)
        # rounding noise of a log-likelihood evaluation; changes below it are not measurable
        scale = self.y * (np.abs(self.logoff) + 2.0) + self.lgy + 1.0
        self.loglik_noise = float(np.finfo(float).eps * np.sqrt(np.sum(scale * scale)))

    def _linear(self, beta, eta):
        beta = _coef(beta, "beta")
        eta = _coef(eta, "eta")
        if beta.size != self.p or eta.size != self.k:
            raise ValidationError(f"expected {self.p} outcome and {self.k} misclassification coefficients")
        return self.D0 @ beta, self.D1 @ beta, self.M @ eta

    def evaluate(self, beta, eta, want_phi=False):
        lin0, lin1, logit = self._linear(beta, eta)
        ll, phi1, status, idx = kernels.loglik_and_phi(
            self.y, self.lgy, self.logoff, lin0, lin1, logit,
            self.xstar, self.x, self.queried, self.one_sided, want_phi,
        )
        if status == kernels.STATUS_OVERFLOW:
            raise LinearPredictorOverflowError(
                f"non-finite linear predictor for observation {self.data.ids[idx]!r}", index=idx
            )
        if status == kernels.STATUS_STRUCTURAL:
            raise StructuralViolationError(
                f"observation {self.data.ids[idx]!r} has X=1 with Pr(X=1|X*,Z)=0"
            )
        return ll, phi1


def problem_for(data: Dataset, design: Optional[DesignSpec] = None) -> Problem:
    design = design or data.default_design()
    return data.cached(("problem", design), lambda: Problem(data, design))


def observed_data_loglik(data: Dataset, beta, eta, design: Optional[DesignSpec] = None) -> float:
    """Observed-data log-likelihood, including the ``-log(y!)`` terms."""
    if design is None:
        design = getattr(beta, "design", None)
    ll, _ = problem_for(data, design).evaluate(beta, eta)
    return ll


def e_step(data: Dataset, beta, eta, design: Optional[DesignSpec] = None) -> np.ndarray:
    """Posterior exposure probabilities as an ``(N, 2)`` array of ``(phi0, phi1)``.

    Queried rows get exact indicators of their observed exposure.
    """
    if design is None:
        design = getattr(beta, "design", None)
    _, phi1 = problem_for(data, design).evaluate(beta, eta, want_phi=True)
    phi = np.column_stack([1.0 - phi1, phi1])
    return phi


def m_step(data: Dataset, phi, design: Optional[DesignSpec] = None, init_beta=None, init_eta=None):
    """Weighted Poisson and logistic refits given E-step weights ``phi`` (N x 2)."""
    prob = problem_for(data, design)
    phi = np.asarray(phi, dtype=float)
    w_pois = np.concatenate([phi[:, 0], phi[:, 1]])
    pfit = fit_weighted_poisson(
        prob.X_pois, prob.y_pois, w_pois, prob.off_pois, init=init_beta, names=prob.design.terms
    )
    pm = phi[prob.mis_rows]
    w_logit = np.concatenate([pm[:, 0], pm[:, 1]])
    lfit = fit_weighted_logistic(
        prob.X_logit, prob.y_logit, w_logit, init=init_eta, names=prob.eta_names, check_separation=False
    )
    return (
        OutcomeModelParams(pfit.coefficients, prob.design),
        MisclassModelParams(lfit.coefficients, data.mode),
    )


def queried_separation(data: Dataset, design: Optional[DesignSpec] = None) -> Separation:
    """Separation status of the misclassification model among queried rows."""
    prob = problem_for(data, design)
    rows = prob.queried & prob.mis_rows
    if not rows.any():
        return Separation.COMPLETE
    return detect_separation(prob.M[rows], prob.x[rows])


def complete_case_init(data: Dataset, design: Optional[DesignSpec] = None):
    """Maximize the likelihood over queried rows only.

    Raises :class:`SeparationError` when the queried misclassification data
    are separated.
    """
    prob = problem_for(data, design)
    q = prob.queried
    xq = prob.x[q]
    Dq = prob.design.matrix(xq, data.z[q])
    pfit = fit_weighted_poisson(Dq, prob.y[q], None, prob.logoff[q], names=prob.design.terms)
    rows = q & prob.mis_rows
    if not rows.any():
        raise SeparationError("no queried rows inform the misclassification model", kind="complete")
    lfit = fit_weighted_logistic(prob.M[rows], prob.x[rows], None, names=prob.eta_names)
    return (
        OutcomeModelParams(pfit.coefficients, prob.design),
        MisclassModelParams(lfit.coefficients, data.mode),
    )


def _naive_fallback(data, design, prob, kind, config, compute_se):
    from .comparators import fit_naive

    naive = fit_naive(data, design)
    eta = np.full(prob.k, np.nan)
    p = prob.p
    cov = None
    if compute_se:
        cov = np.full((p + prob.k, p + prob.k), np.nan)
        cov[:p, :p] = naive.covariance
    log.info("misclassification data separated (%s); returning naive analysis", kind)
    return MleFitResult(
        beta_hat=naive.beta_hat, eta_hat=eta, loglik_trace=[], converged=True, iterations=0,
        fallback_used=True, design=prob.design, mode=data.mode, covariance=cov,
        hessian_ok=None, eta_names=prob.eta_names, separation=kind,
    )


def fit_mle(data: Dataset, config: Optional[EmConfig] = None, design: Optional[DesignSpec] = None,
            compute_se: bool = True, callback=None) -> MleFitResult:
    """Maximum likelihood estimates of (beta, eta) by EM.

    Convergence requires both a max-abs parameter change below
    ``config.tolerance`` and an observed log-likelihood change below
    ``config.loglik_tolerance`` (or the evaluation's rounding noise, if
    larger). Hitting ``max_iterations`` returns a result with
    ``converged=False`` rather than raising. ``callback`` receives an
    :class:`EmState` after every iteration.
    """
    config = config or EmConfig()
    prob = problem_for(data, design)
    design = prob.design
    data.check_identifiable()

    sep = queried_separation(data, design)
    if sep is not Separation.NONE:
        if config.separation_policy is SeparationPolicy.ERROR:
            raise SeparationError(f"{sep.value} separation among queried rows", kind=sep.value)
        return _naive_fallback(data, design, prob, sep.value, config, compute_se)

    if config.init_strategy is InitStrategy.COMPLETE_CASE:
        b, e = complete_case_init(data, design)
        beta, eta = b.beta.copy(), e.eta.copy()
    else:
        beta, eta = np.zeros(prob.p), np.zeros(prob.k)

    ll, _ = prob.evaluate(beta, eta)
    trace = [ll]
    converged = False
    it = 0
    for it in range(1, config.max_iterations + 1):
        _, phi1 = prob.evaluate(beta, eta, want_phi=True)
        phi = np.column_stack([1.0 - phi1, phi1])
        b, e = m_step(data, phi, design, init_beta=beta, init_eta=eta)
        change = max(np.max(np.abs(b.beta - beta)), np.max(np.abs(e.eta - eta)))
        beta, eta = b.beta.copy(), e.eta.copy()
        ll_new, _ = prob.evaluate(beta, eta)
        trace.append(ll_new)
        dll = abs(ll_new - ll)
        ll = ll_new
        if callback is not None:
            callback(EmState(beta, eta, phi, ll, it))
        if change < config.tolerance and dll < max(config.loglik_tolerance, prob.loglik_noise):
            converged = True
            break

    if not converged:
        log.warning("EM did not converge in %d iterations", config.max_iterations)

    result = MleFitResult(
        beta_hat=beta, eta_hat=eta, loglik_trace=trace, converged=converged, iterations=it,
        fallback_used=False, design=design, mode=data.mode, eta_names=prob.eta_names,
    )
    if compute_se:
        from .inference import observed_information_covariance

        cov = observed_information_covariance(data, result.theta, design)
        result.covariance = cov.covariance
        result.hessian_ok = cov.hessian_ok
    return result
