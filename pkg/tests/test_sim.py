import math

import numpy as np
import pytest
from scipy import integrate, stats

from misclassreg.core import MisclassMode, sigmoid
from misclassreg.errors import ValidationError
from misclassreg.sim import (
    ReplicateRecord,
    SimConfig,
    apply_query_design,
    generate_one_sided,
    generate_two_sided,
    nint,
    replicate_rng,
    run_records,
    solve_eta1,
    summarize,
)

BIG = 100_000


def _expit(t):
    return float(sigmoid(np.array([t]))[0])


def _gamma_mean(f, cond=None):
    """E[f(Z)] (optionally weighted by cond(Z)) for Z ~ Gamma(0.6, scale 0.2)."""
    dens = stats.gamma(0.6, scale=0.2).pdf
    w = cond or (lambda z: 1.0)
    num = integrate.quad(lambda z: f(z) * w(z) * dens(z), 0, np.inf, limit=200)[0]
    den = integrate.quad(lambda z: w(z) * dens(z), 0, np.inf, limit=200)[0]
    return num / den


def test_one_sided_structure_and_ppv():
    cfg = SimConfig(n_obs=BIG, ppv=0.6)
    d = generate_one_sided(cfg, np.random.default_rng(1))
    assert np.all(d.x[d.xstar == 0] == 0)
    pos = d.xstar == 1
    # oracle: PPV implied by the stated formulas, averaged over Z | X*=1
    e0 = math.log(0.6 / 0.4)
    ppv = _gamma_mean(lambda z: _expit(e0 + 0.39 * z), lambda z: _expit(1 - z))
    assert ppv > 0.6
    se = math.sqrt(ppv * (1 - ppv) / pos.sum())
    assert abs(d.x[pos].mean() - ppv) < 3 * se
    px = _gamma_mean(lambda z: _expit(1 - z))
    assert abs(pos.mean() - px) < 3 * math.sqrt(px * (1 - px) / BIG)
    assert abs(d.offset.mean() - 4165) < 3 * math.sqrt(4165 / BIG)


def test_two_sided_ppv_npv():
    cfg = SimConfig(n_obs=BIG, ppv=0.5, misclass_mode="two-sided")
    d = generate_two_sided(cfg, np.random.default_rng(2))
    pos, neg = d.xstar == 1, d.xstar == 0
    ppv = d.x[pos].mean()
    assert abs(ppv - 0.5) < 3 * math.sqrt(0.25 / pos.sum())
    # NPV implied by eta0 = -1.10 and 0.34*Z, averaged over Z | X*=0
    npv_oracle = _gamma_mean(lambda z: _expit(1.10 - 0.34 * z), lambda z: _expit(z - 1))
    npv = 1 - d.x[neg].mean()
    assert abs(npv - npv_oracle) < 3 * math.sqrt(npv_oracle * (1 - npv_oracle) / neg.sum())
    assert abs(npv - 0.75) < 0.015


def test_solve_eta1_monotone():
    z = np.random.default_rng(0).gamma(0.6, 0.2, 500)
    roots = [solve_eta1(p, z) for p in (0.3, 0.5, 0.7, 0.9, 0.99)]
    assert np.all(np.diff(roots) > 0)
    vals = [np.mean(sigmoid(-1.1 + e + 0.34 * z)) for e in np.linspace(-10, 30, 50)]
    assert np.all(np.diff(vals) > 0) and vals[-1] > 0.999
    with pytest.raises(ValidationError):
        solve_eta1(0.5, [])


def test_nint():
    assert [nint(v) for v in (38.5, 39.0, 39.4999, 220.0, 0.5)] == [39, 39, 39, 220, 1]


def test_query_counts():
    cfg = SimConfig(n_obs=390)
    d = generate_one_sided(cfg, np.random.default_rng(3))
    q = apply_query_design(d, 0.1, rng=np.random.default_rng(4))
    assert q.queried.sum() == 39 and np.all(q.xstar[q.queried] == 1)
    both = apply_query_design(d, 0.1, rng=np.random.default_rng(4), structural_zeros_queried=True)
    assert both.queried.sum() == 39 + (d.xstar == 0).sum()
    full = apply_query_design(d, 1.0 * (d.xstar == 1).sum() / d.n, rng=np.random.default_rng(5))
    assert np.all(full.queried[d.xstar == 1])

    cfg2 = SimConfig(n_obs=2200, misclass_mode="two-sided", ppv=0.5)
    d2 = generate_two_sided(cfg2, np.random.default_rng(6))
    q2 = apply_query_design(d2, 0.1, rng=np.random.default_rng(7))
    assert (q2.queried & (q2.xstar == 0)).sum() == 110
    assert (q2.queried & (q2.xstar == 1)).sum() == 110
    with pytest.raises(ValidationError):
        apply_query_design(q2, 0.1)


def test_replicate_determinism_and_order():
    cfg = SimConfig(n_obs=300, n_reps=4, seed=9)
    a = run_records(cfg, workers=1)
    b = run_records(cfg, workers=2)
    assert [vars(r) for r in a] == [vars(r) for r in b]
    r2 = replicate_rng(9, 2).random(3)
    assert np.array_equal(r2, replicate_rng(9, 2).random(3))
    assert not np.array_equal(r2, replicate_rng(9, 3).random(3))


def test_summary_metrics_by_hand():
    cfg = SimConfig(n_obs=10, n_reps=3, beta=(-2.28, 0.2, 0.14))
    recs = []
    # Wald half-width 0.039: only the last interval covers 0.2
    for i, (g, m) in enumerate([(0.19, 0.15), (0.21, 0.25), (0.20, 0.21)]):
        r = ReplicateRecord(rep=i, gold_est=g, gold_se=0.01, naive_est=g / 2, naive_se=0.01, cc_est=g,
                            cc_se=0.05, mle_est=m, mle_se=0.02, mle_converged=True)
        recs.append(r)
    s = summarize(cfg, recs)
    mle = s["mle"]
    assert mle.bias == pytest.approx((np.mean([0.15, 0.25, 0.21]) - 0.2) / 0.2)
    assert mle.ese == pytest.approx(np.std([0.15, 0.25, 0.21], ddof=1))
    assert mle.ase == pytest.approx(0.02)
    assert mle.cp == pytest.approx(1 / 3)
    assert s["gold"].re == pytest.approx(1.0)
    assert s["complete-case"].re == pytest.approx(1.0)
    assert mle.re == pytest.approx((0.01 / mle.ese) ** 2)


def test_summary_zero_beta_and_single_rep():
    cfg = SimConfig(n_obs=300, n_reps=1, beta=(-2.28, 0.0, 0.14))
    s = summarize(cfg, run_records(cfg, workers=1))
    assert s.bias_kind == "absolute" and not s.ese_defined
    assert math.isnan(s["mle"].ese) and math.isnan(s["mle"].re)
    assert math.isfinite(s["mle"].bias)


def test_failed_replicate_is_counted():
    cfg = SimConfig(n_obs=10, n_reps=2)
    recs = [ReplicateRecord(rep=0, error="ValidationError: boom"),
            ReplicateRecord(rep=1, gold_est=0.18, gold_se=0.01, naive_est=0.1, naive_se=0.01, cc_est=0.2,
                            cc_se=0.1, mle_est=0.18, mle_se=0.01, mle_converged=True)]
    s = summarize(cfg, recs)
    assert s.n_failed == 1 and s.n_reps_used == 1


def test_config_validation():
    for bad in (dict(ppv=1.0), dict(npv=0.0), dict(q=1.5), dict(beta=(1, 2)), dict(n_reps=0)):
        with pytest.raises(ValidationError):
            SimConfig(**bad)
    assert SimConfig(misclass_mode="two-sided").misclass_mode is MisclassMode.TWO_SIDED
