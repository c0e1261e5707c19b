"""Simulation studies: data generation, two-phase query designs and replicate aggregation.

Data-generating process (per replicate, in this draw order):

* ``Z ~ Gamma(shape=0.6, scale=0.2)``
* ``X* | Z ~ Bernoulli(logistic(1 - Z))``
* ``X | X*, Z`` from the one- or two-sided misclassification model
* ``O ~ Poisson(4165)``
* ``Y | X, Z ~ Poisson(O * exp(b0 + b1*X + b2*Z))``
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np
from scipy.optimize import brentq
from threadpoolctl import threadpool_limits

from .comparators import Method, fit_complete_case, fit_gold, fit_naive
from .core import Dataset, MisclassMode, sigmoid
from .em import EmConfig, InitStrategy, fit_mle
from .errors import MisclassRegError, ValidationError
from .inference import Z95

log = logging.getLogger(__name__)

METHODS = (Method.GOLD, Method.NAIVE, Method.COMPLETE_CASE, Method.MLE)


@dataclass(frozen=True)
class SimConfig:
    n_obs: int = 2200
    ppv: float = 0.6
    npv: float = 0.75
    q: float = 0.1
    beta: tuple = (-2.28, 0.18, 0.14)
    misclass_mode: MisclassMode = MisclassMode.ONE_SIDED
    n_reps: int = 1000
    seed: int = 2024
    init_strategy: InitStrategy = InitStrategy.COMPLETE_CASE
    z_shape: float = 0.6
    z_scale: float = 0.2
    offset_mean: float = 4165.0
    eta_z_one_sided: float = 0.39
    eta_z_two_sided: float = 0.34
    eta0_two_sided: float = -1.10

    def __post_init__(self):
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))
        object.__setattr__(self, "misclass_mode", MisclassMode.parse(self.misclass_mode))
        object.__setattr__(self, "init_strategy", InitStrategy(self.init_strategy))
        if not 0 < self.ppv < 1:
            raise ValidationError(f"ppv must lie in (0, 1), got {self.ppv}")
        if not 0 < self.npv < 1:
            raise ValidationError(f"npv must lie in (0, 1), got {self.npv}")
        if not 0 <= self.q <= 1:
            raise ValidationError(f"q must lie in [0, 1], got {self.q}")
        if len(self.beta) != 3:
            raise ValidationError("beta must be (b0, b1, b2)")
        if self.n_obs < 1 or self.n_reps < 1:
            raise ValidationError("n_obs and n_reps must be positive")

    def as_dict(self):
        d = asdict(self)
        d["misclass_mode"] = self.misclass_mode.value
        d["init_strategy"] = self.init_strategy.value
        d["beta"] = list(self.beta)
        return d


def nint(v):
    """Nearest integer, halves rounded up."""
    return int(math.floor(v + 0.5))


def _common(config, rng):
    n = config.n_obs
    z = rng.gamma(config.z_shape, config.z_scale, size=n)
    xstar = (rng.random(n) < sigmoid(1.0 - z)).astype(float)
    return z, xstar


def _outcome(config, rng, x, z, xstar, mode):
    n = config.n_obs
    offset = rng.poisson(config.offset_mean, size=n).astype(float)
    offset = np.maximum(offset, 1.0)
    b0, b1, b2 = config.beta
    y = rng.poisson(offset * np.exp(b0 + b1 * x + b2 * z)).astype(float)
    return Dataset(y=y, offset=offset, xstar=xstar, x=x, z=z[:, None], covariate_names=("z",), mode=mode)


def generate_one_sided(config: SimConfig, rng) -> Dataset:
    """One-sided (false-positive only) data; every row carries its true X."""
    z, xstar = _common(config, rng)
    eta0 = math.log(config.ppv / (1.0 - config.ppv))
    p1 = np.where(xstar == 1, sigmoid(eta0 + config.eta_z_one_sided * z), 0.0)
    x = (rng.random(config.n_obs) < p1).astype(float)
    x[xstar == 0] = 0.0
    return _outcome(config, rng, x, z, xstar, MisclassMode.ONE_SIDED)


def solve_eta1(ppv, z_pos, eta0=-1.10, coef_z=0.34):
    """Coefficient on X* giving mean ``Pr(X=1 | X*=1, Z)`` equal to ``ppv`` over ``z_pos``."""
    z_pos = np.asarray(z_pos, dtype=float)
    if z_pos.size == 0:
        raise ValidationError("no X*=1 rows to calibrate the positive predictive value")

    def gap(e1):
        return float(np.mean(sigmoid(eta0 + e1 + coef_z * z_pos))) - ppv

    lo, hi = -60.0, 60.0
    if not gap(lo) < 0 < gap(hi):
        raise ValidationError(f"cannot attain PPV {ppv} by varying the X* coefficient")
    return brentq(gap, lo, hi, xtol=1e-12)


def generate_two_sided(config: SimConfig, rng) -> Dataset:
    """Two-sided misclassification with the X* coefficient root-found to hit ``config.ppv``."""
    z, xstar = _common(config, rng)
    eta1 = solve_eta1(config.ppv, z[xstar == 1], config.eta0_two_sided, config.eta_z_two_sided)
    p1 = sigmoid(config.eta0_two_sided + eta1 * xstar + config.eta_z_two_sided * z)
    x = (rng.random(config.n_obs) < p1).astype(float)
    return _outcome(config, rng, x, z, xstar, MisclassMode.TWO_SIDED)


def generate(config: SimConfig, rng) -> Dataset:
    if config.misclass_mode is MisclassMode.ONE_SIDED:
        return generate_one_sided(config, rng)
    return generate_two_sided(config, rng)


def apply_query_design(data: Dataset, q: float, mode=None, rng=None, structural_zeros_queried=False) -> Dataset:
    """Redact X outside a random two-phase validation sample.

    One-sided: ``nint(N*q)`` rows drawn from ``X*=1``. Rows with ``X*=0`` have
    X redacted too unless ``structural_zeros_queried`` (their X is known to be
    0, so this only changes what the complete-case analysis sees). Two-sided:
    ``floor(N*q/2)`` rows from ``X*=0`` and ``ceil(N*q/2)`` from ``X*=1``.
    """
    mode = MisclassMode.parse(mode or data.mode)
    rng = np.random.default_rng() if rng is None else rng
    if not 0 <= q <= 1:
        raise ValidationError(f"q must lie in [0, 1], got {q}")
    if not np.all(data.queried):
        raise ValidationError("query design needs X on every row")
    n = data.n
    pos = np.flatnonzero(data.xstar == 1)
    neg = np.flatnonzero(data.xstar == 0)
    keep = np.zeros(n, dtype=bool)
    if mode is MisclassMode.ONE_SIDED:
        k = nint(n * q)
        if k > pos.size:
            raise ValidationError(f"requested {k} queried rows but only {pos.size} have X*=1")
        keep[rng.choice(pos, size=k, replace=False)] = True
        if structural_zeros_queried:
            keep[neg] = True
    else:
        half = n * q / 2.0
        k0 = int(math.floor(half + 1e-9))
        k1 = int(math.ceil(half - 1e-9))
        if k0 > neg.size or k1 > pos.size:
            raise ValidationError(f"strata too small: need {k0}/{k1}, have {neg.size}/{pos.size}")
        keep[rng.choice(neg, size=k0, replace=False)] = True
        keep[rng.choice(pos, size=k1, replace=False)] = True
    x = np.where(keep, data.x, np.nan)
    return data.replace(x=x, mode=mode)


def replicate_rng(seed, index):
    """Generator for replicate ``index``, independent of execution order."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(index,)))


@dataclass
class ReplicateRecord:
    rep: int
    gold_est: float = float("nan")
    gold_se: float = float("nan")
    naive_est: float = float("nan")
    naive_se: float = float("nan")
    cc_est: float = float("nan")
    cc_se: float = float("nan")
    mle_est: float = float("nan")
    mle_se: float = float("nan")
    mle_converged: bool = False
    mle_iterations: int = 0
    mle_fallback: bool = False
    ascent_violations: int = 0
    max_loglik_drop: float = 0.0
    error: str = ""

    @property
    def ok(self):
        return not self.error


RECORD_FIELDS = [f.name for f in fields(ReplicateRecord)]
_PREFIX = {Method.GOLD: "gold", Method.NAIVE: "naive", Method.COMPLETE_CASE: "cc", Method.MLE: "mle"}


def run_one(config: SimConfig, index: int) -> ReplicateRecord:
    rec = ReplicateRecord(rep=index)
    rng = replicate_rng(config.seed, index)
    try:
        with threadpool_limits(limits=1):
            full = generate(config, rng)
            data = apply_query_design(full, config.q, config.misclass_mode, rng)
            gold = fit_gold(full)
            naive = fit_naive(full)
            cc = fit_complete_case(data)
            mle = fit_mle(data, EmConfig(init_strategy=config.init_strategy))
    except (MisclassRegError, np.linalg.LinAlgError, FloatingPointError) as exc:
        rec.error = f"{type(exc).__name__}: {exc}"
        return rec
    rec.gold_est, rec.gold_se = float(gold.beta_hat[1]), float(gold.se[1])
    rec.naive_est, rec.naive_se = float(naive.beta_hat[1]), float(naive.se[1])
    rec.cc_est, rec.cc_se = float(cc.beta_hat[1]), float(cc.se[1])
    rec.mle_est, rec.mle_se = float(mle.beta_hat[1]), float(mle.beta_se[1])
    rec.mle_converged = bool(mle.converged)
    rec.mle_iterations = int(mle.iterations)
    rec.mle_fallback = bool(mle.fallback_used)
    drops = -np.diff(np.asarray(mle.loglik_trace)) if len(mle.loglik_trace) > 1 else np.zeros(0)
    rec.ascent_violations = int(np.sum(drops > 1e-8))
    rec.max_loglik_drop = float(max(drops.max(initial=0.0), 0.0))
    return rec


def _run_chunk(args):
    config, indices = args
    return [run_one(config, i) for i in indices]


def default_workers():
    env = os.environ.get("MISCLASSREG_WORKERS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def run_records(config: SimConfig, workers: Optional[int] = None, progress=None) -> list:
    """Per-replicate records in replicate order, regardless of worker count."""
    workers = default_workers() if workers is None else max(1, int(workers))
    indices = list(range(config.n_reps))
    if workers == 1:
        out = []
        for i in indices:
            out.append(run_one(config, i))
            if progress:
                progress(i + 1, config.n_reps)
        return out
    size = max(1, math.ceil(len(indices) / (workers * 4)))
    chunks = [(config, indices[s: s + size]) for s in range(0, len(indices), size)]
    out = []
    with ProcessPoolExecutor(max_workers=workers) as pool:
        for recs in pool.map(_run_chunk, chunks):
            out.extend(recs)
            if progress:
                progress(len(out), config.n_reps)
    return out


@dataclass
class MethodSummary:
    bias: float
    ese: float
    ase: float
    cp: float
    re: float


@dataclass
class SimSummary:
    config: SimConfig
    methods: dict
    n_fallback: int
    n_reps_used: int
    n_failed: int
    n_nonconverged: int
    ascent_violations: int
    bias_kind: str = "relative"
    ese_defined: bool = True
    records: list = field(default_factory=list, repr=False)

    def __getitem__(self, method):
        return self.methods[Method(method)]


def summarize(config: SimConfig, records) -> SimSummary:
    """Aggregate replicate records into bias, ESE, ASE, CP and RE per method.

    Relative bias is ``(mean - b1) / b1``, switching to absolute bias when
    ``b1 == 0``. RE is ``(ESE_gold / ESE_method)**2``.
    """
    truth = config.beta[1]
    good = [r for r in records if r.ok]
    n_used = len(good)
    bias_kind = "absolute" if truth == 0 else "relative"
    ese_defined = n_used >= 2
    methods = {}
    ese = {}
    for m in METHODS:
        pre = _PREFIX[m]
        est = np.array([getattr(r, f"{pre}_est") for r in good], dtype=float)
        se = np.array([getattr(r, f"{pre}_se") for r in good], dtype=float)
        if n_used == 0:
            methods[m] = MethodSummary(*(float("nan"),) * 5)
            ese[m] = float("nan")
            continue
        mean = float(np.mean(est))
        bias = mean - truth if bias_kind == "absolute" else (mean - truth) / truth
        e = float(np.std(est, ddof=1)) if ese_defined else float("nan")
        ese[m] = e
        lo, hi = est - Z95 * se, est + Z95 * se
        cp = float(np.mean((lo <= truth) & (truth <= hi)))
        methods[m] = MethodSummary(bias, e, float(np.mean(se)), cp, float("nan"))
    for m in METHODS:
        if ese_defined and ese[m] > 0:
            methods[m].re = (ese[Method.GOLD] / ese[m]) ** 2
    return SimSummary(
        config=config,
        methods=methods,
        n_fallback=sum(r.mle_fallback for r in good),
        n_reps_used=n_used,
        n_failed=len(records) - n_used,
        n_nonconverged=sum((not r.mle_converged) for r in good),
        ascent_violations=sum(r.ascent_violations for r in good),
        bias_kind=bias_kind,
        ese_defined=ese_defined,
        records=list(records),
    )


def run_replicates(config: SimConfig, workers: Optional[int] = None, progress=None) -> SimSummary:
    return summarize(config, run_records(config, workers, progress))
