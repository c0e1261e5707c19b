"""Domain types and the elementary probability kernels.

The outcome model is a Poisson regression with a log-offset,

    log E(Y | X, Z) = log(O) + b0 + b1*X + b2'Z + b3'(X*Z),

and the misclassification mechanism Pr(X | X*, Z) is a logistic regression,
either on (1, X*, Z) (two-sided) or, for one-sided false-positive error, on
(1, Z) among X* = 1 with a structural zero Pr(X=1 | X*=0) = 0.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np
from scipy.special import gammaln

from .errors import (
    LinearPredictorOverflowError,
    StructuralViolationError,
    ValidationError,
)

# Logits beyond this magnitude are treated as saturated probabilities.
LOGIT_SATURATION = 35.0


class MisclassMode(str, enum.Enum):
    ONE_SIDED = "one-sided"
    TWO_SIDED = "two-sided"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("_", "-")
        aliases = {"onesided": "one-sided", "twosided": "two-sided"}
        return cls(aliases.get(key, key))


def log_sigmoid(t):
    """log(1 / (1 + exp(-t))), finite for every finite ``t``."""
    t = np.asarray(t, dtype=float)
    out = np.where(t >= 0, -np.log1p(np.exp(-np.abs(t))), t - np.log1p(np.exp(-np.abs(t))))
    return out if out.ndim else float(out)


def sigmoid(t):
    """Logistic function, saturating to exactly 0 or 1 beyond +/-35."""
    t = np.asarray(t, dtype=float)
    p = np.empty_like(t)
    hi = t > LOGIT_SATURATION
    lo = t < -LOGIT_SATURATION
    mid = ~(hi | lo)
    p[hi] = 1.0
    p[lo] = 0.0
    tm = t[mid]
    e = np.exp(-np.abs(tm))
    p[mid] = np.where(tm >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return p if p.ndim else float(p)


@dataclass(frozen=True)
class DesignSpec:
    """Which covariates and exposure-by-covariate interactions enter the outcome model.

    Columns are ordered ``(Intercept), exposure, covariates..., exposure:cov...``.
    """

    covariates: tuple = ()
    interactions: tuple = ()
    exposure_name: str = "x"

    def __post_init__(self):
        object.__setattr__(self, "covariates", tuple(self.covariates))
        object.__setattr__(self, "interactions", tuple(self.interactions))
        unknown = [c for c in self.interactions if c not in self.covariates]
        if unknown:
            raise ValidationError(f"interaction covariates not in model: {unknown}")

    @property
    def terms(self):
        return (
            ["(Intercept)", self.exposure_name]
            + list(self.covariates)
            + [f"{self.exposure_name}:{c}" for c in self.interactions]
        )

    @property
    def n_params(self):
        return 2 + len(self.covariates) + len(self.interactions)

    def matrix(self, x, z):
        """Outcome design matrix for exposure vector ``x`` and covariate matrix ``z``.

        ``z`` must have one column per entry of ``covariates``.
        """
        x = np.asarray(x, dtype=float).reshape(-1)
        z = np.asarray(z, dtype=float).reshape(len(x), -1)
        if z.shape[1] != len(self.covariates):
            raise ValidationError(
                f"covariate matrix has {z.shape[1]} columns, design expects {len(self.covariates)}"
            )
        cols = [np.ones_like(x), x]
        cols.extend(z[:, j] for j in range(z.shape[1]))
        for name in self.interactions:
            cols.append(x * z[:, self.covariates.index(name)])
        return np.column_stack(cols)

    def row(self, x, z):
        return self.matrix([x], np.atleast_2d(np.asarray(z, dtype=float)))[0]


def misclass_design(xstar, z, mode):
    """Design for Pr(X=1 | X*, Z): ``(1, Z)`` one-sided, ``(1, X*, Z)`` two-sided."""
    mode = MisclassMode.parse(mode)
    xstar = np.asarray(xstar, dtype=float).reshape(-1)
    z = np.asarray(z, dtype=float).reshape(len(xstar), -1)
    if mode is MisclassMode.ONE_SIDED:
        return np.column_stack([np.ones_like(xstar), z])
    return np.column_stack([np.ones_like(xstar), xstar, z])


def misclass_terms(covariate_names, mode):
    names = ["(Intercept)"] + list(covariate_names)
    if MisclassMode.parse(mode) is MisclassMode.TWO_SIDED:
        names.insert(1, "xstar")
    return names


@dataclass(frozen=True)
class OutcomeModelParams:
    beta: np.ndarray
    design: DesignSpec

    def __post_init__(self):
        beta = np.array(self.beta, dtype=float).reshape(-1)
        beta.setflags(write=False)
        object.__setattr__(self, "beta", beta)
        if beta.size != self.design.n_params:
            raise ValidationError(f"beta has {beta.size} entries, design needs {self.design.n_params}")

    def as_dict(self):
        return dict(zip(self.design.terms, self.beta.tolist()))


@dataclass(frozen=True)
class MisclassModelParams:
    eta: np.ndarray
    mode: MisclassMode

    def __post_init__(self):
        eta = np.array(self.eta, dtype=float).reshape(-1)
        eta.setflags(write=False)
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "mode", MisclassMode.parse(self.mode))


def _coef(p, attr):
    return np.asarray(getattr(p, attr, p), dtype=float).reshape(-1)


def poisson_log_density(y, offset, x, z, beta, design=None):
    """Poisson log-pmf ``y*log(lam) - lam - log(y!)`` with ``lam = offset*exp(beta'design(x, z))``."""
    if design is None:
        design = beta.design
    if offset <= 0:
        raise ValidationError(f"offset must be positive, got {offset}")
    b = _coef(beta, "beta")
    lin = float(design.row(x, z) @ b)
    eta = math.log(offset) + lin
    if not math.isfinite(eta) or eta > 700:
        raise LinearPredictorOverflowError(f"non-finite linear predictor {eta!r}")
    return y * eta - math.exp(eta) - float(gammaln(y + 1.0))


def misclass_log_prob1(xstar, z, eta, mode):
    """Vectorized log Pr(X=1 | X*, Z) and log Pr(X=0 | X*, Z).

    Returns a pair of arrays. One-sided rows with X*=0 get ``(-inf, 0)``.
    """
    mode = MisclassMode.parse(mode)
    xstar = np.asarray(xstar, dtype=float).reshape(-1)
    t = misclass_design(xstar, z, mode) @ _coef(eta, "eta")
    lp1 = np.asarray(log_sigmoid(t), dtype=float).reshape(-1)
    lp0 = np.asarray(log_sigmoid(-t), dtype=float).reshape(-1)
    if mode is MisclassMode.ONE_SIDED:
        zero = xstar == 0
        lp1 = np.where(zero, -np.inf, lp1)
        lp0 = np.where(zero, 0.0, lp0)
    return lp1, lp0


def misclass_prob(x, xstar, z, eta, mode=None):
    """Pr(X = x | X*, Z) under the logistic misclassification model."""
    if mode is None:
        mode = eta.mode
    mode = MisclassMode.parse(mode)
    if mode is MisclassMode.ONE_SIDED and xstar == 0:
        return 1.0 if x == 0 else 0.0
    t = float(misclass_design([xstar], np.atleast_2d(np.asarray(z, dtype=float)), mode)[0] @ _coef(eta, "eta"))
    p1 = sigmoid(t)
    return p1 if x == 1 else 1.0 - p1


@dataclass(frozen=True)
class Observation:
    id: object
    y: int
    offset: float
    xstar: int
    z: tuple = ()
    x: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "z", tuple(float(v) for v in np.atleast_1d(self.z)))
        if self.y < 0 or int(self.y) != self.y:
            raise ValidationError(f"observation {self.id!r}: y must be a nonnegative integer")
        if not self.offset > 0:
            raise ValidationError(f"observation {self.id!r}: offset must be positive")
        if self.xstar not in (0, 1) or self.x not in (None, 0, 1):
            raise ValidationError(f"observation {self.id!r}: exposures must be binary")

    @property
    def queried(self):
        return self.x is not None


@dataclass(frozen=True, eq=False)
class Dataset:
    """Column-oriented collection of observations.

    ``x`` is a float array holding NaN where the true exposure is absent;
    ``queried`` is derived from it, so the two cannot disagree.
    """

    y: np.ndarray
    offset: np.ndarray
    xstar: np.ndarray
    x: np.ndarray
    z: np.ndarray
    covariate_names: tuple = ()
    mode: MisclassMode = MisclassMode.ONE_SIDED
    ids: Optional[np.ndarray] = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        n = np.asarray(self.y).reshape(-1).size
        arrays = {
            "y": np.array(self.y, dtype=float).reshape(-1),
            "offset": np.array(self.offset, dtype=float).reshape(-1),
            "xstar": np.array(self.xstar, dtype=float).reshape(-1),
            "x": np.array(self.x, dtype=float).reshape(-1) if self.x is not None else np.full(n, np.nan),
            "z": np.array(self.z, dtype=float).reshape(n, -1),
        }
        for name, arr in arrays.items():
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        ids = np.arange(n) if self.ids is None else np.asarray(self.ids)
        object.__setattr__(self, "ids", ids)
        names = tuple(self.covariate_names) or tuple(f"z{j + 1}" for j in range(arrays["z"].shape[1]))
        object.__setattr__(self, "covariate_names", names)
        object.__setattr__(self, "mode", MisclassMode.parse(self.mode))
        self._validate()

    def _validate(self):
        n = self.y.size
        for name in ("offset", "xstar", "x"):
            if getattr(self, name).size != n:
                raise ValidationError(f"column {name} has length {getattr(self, name).size}, expected {n}")
        if self.ids.size != n:
            raise ValidationError("ids length mismatch")
        if self.z.shape[1] != len(self.covariate_names):
            raise ValidationError("covariate_names does not match z columns")
        if np.any(self.y < 0) or np.any(self.y != np.round(self.y)):
            raise ValidationError("y must be nonnegative integers")
        if not np.all(self.offset > 0):
            bad = self.ids[~(self.offset > 0)][:5].tolist()
            raise ValidationError(f"offset must be positive (ids {bad})")
        if not np.all(np.isin(self.xstar, (0.0, 1.0))):
            raise ValidationError("xstar must be binary")
        q = self.queried
        if not np.all(np.isin(self.x[q], (0.0, 1.0))):
            raise ValidationError("x must be binary where present")
        if not np.all(np.isfinite(self.z)):
            raise ValidationError("covariates must be finite")
        if self.mode is MisclassMode.ONE_SIDED:
            bad = q & (self.xstar == 0) & (self.x == 1)
            if bad.any():
                raise StructuralViolationError(
                    f"one-sided misclassification violated: X=1 with X*=0 for ids {self.ids[bad][:10].tolist()}"
                )

    def check_identifiable(self):
        if not np.any(self.queried & (self.xstar == 1)):
            raise ValidationError("no queried observation with X*=1; misclassification model is unidentifiable")

    @classmethod
    def from_observations(cls, observations: Iterable[Observation], covariate_names: Sequence[str] = (),
                          mode=MisclassMode.ONE_SIDED):
        obs = list(observations)
        k = {len(o.z) for o in obs}
        if len(k) > 1:
            raise ValidationError("observations have unequal covariate dimension")
        k = k.pop() if k else len(covariate_names)
        return cls(
            y=[o.y for o in obs],
            offset=[o.offset for o in obs],
            xstar=[o.xstar for o in obs],
            x=[np.nan if o.x is None else o.x for o in obs],
            z=np.array([o.z for o in obs], dtype=float).reshape(len(obs), k),
            covariate_names=covariate_names,
            mode=mode,
            ids=np.array([o.id for o in obs], dtype=object),
        )

    def observations(self) -> Iterator[Observation]:
        for i in range(self.n):
            yield Observation(
                id=self.ids[i].item() if hasattr(self.ids[i], "item") else self.ids[i],
                y=int(self.y[i]),
                offset=float(self.offset[i]),
                xstar=int(self.xstar[i]),
                z=tuple(self.z[i]),
                x=None if np.isnan(self.x[i]) else int(self.x[i]),
            )

    @property
    def n(self):
        return self.y.size

    @property
    def queried(self):
        return ~np.isnan(self.x)

    def subset(self, mask):
        mask = np.asarray(mask)
        return Dataset(
            y=self.y[mask], offset=self.offset[mask], xstar=self.xstar[mask], x=self.x[mask],
            z=self.z[mask], covariate_names=self.covariate_names, mode=self.mode, ids=self.ids[mask],
        )

    def replace(self, **changes):
        fields_ = dict(
            y=self.y, offset=self.offset, xstar=self.xstar, x=self.x, z=self.z,
            covariate_names=self.covariate_names, mode=self.mode, ids=self.ids,
        )
        fields_.update(changes)
        return Dataset(**fields_)

    def cached(self, key, build):
        """Memoize derived arrays (design matrices, log-gamma terms) on this immutable dataset."""
        if key not in self._cache:
            self._cache[key] = build()
        return self._cache[key]

    def default_design(self, interactions=(), exposure_name="x"):
        return DesignSpec(self.covariate_names, tuple(interactions), exposure_name)
