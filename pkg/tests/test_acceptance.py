"""Acceptance criteria 1-10, each reported as one pass/fail line in the terminal summary.

Replicate counts are the stated ones. Worker count follows ``MISCLASSREG_WORKERS``
(default: CPU count), which never changes the results.
"""

import os
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.optimize import minimize

from misclassreg import cli
from misclassreg.comparators import fit_gold, fit_naive
from misclassreg.em import fit_mle, observed_data_loglik
from misclassreg.errors import MisclassRegError
from misclassreg.geo import build_access_table, discretize_access, merge_route_distances
from misclassreg.sim import SimConfig, default_workers, run_replicates

from .conftest import make_sim_data, record_acceptance, synthetic_region

pytestmark = pytest.mark.acceptance

WORKERS = default_workers()
NAIVE_BIAS = {0.5: -0.465, 0.6: -0.366, 0.9: -0.089}


def _verdict(number, checks):
    """Record and assert a list of ``(label, ok)`` pairs."""
    failed = [label for label, ok in checks if not ok]
    detail = "; ".join(label for label, _ in checks)
    record_acceptance(number, not failed, detail if not failed else "failed: " + "; ".join(failed))
    assert not failed, failed


def _oracle_fit(data):
    """Direct maximization of the observed-data log-likelihood, independent of EM."""
    rate = np.log(data.y.sum() / data.offset.sum())
    x0 = np.array([rate, 0.0, 0.0, 0.0, 0.0])

    def nll(t):
        try:
            return -observed_data_loglik(data, t[:3], t[3:])
        except MisclassRegError:
            return np.inf

    res = minimize(nll, x0, method="BFGS", options={"gtol": 1e-8, "maxiter": 2000})
    res = minimize(nll, res.x, method="Nelder-Mead",
                   options={"xatol": 1e-9, "fatol": 1e-12, "maxiter": 20000, "maxfev": 40000})
    return res.x


_C1_TRACES = []


def test_criterion_01_em_matches_direct_maximization():
    t0 = time.time()
    worst = 0.0
    for seed in range(20):
        _, data = make_sim_data(1000 + seed, n=300, q=0.1)
        fit = fit_mle(data, compute_se=False)
        if fit.fallback_used:
            continue
        _C1_TRACES.append(np.asarray(fit.loglik_trace))
        worst = max(worst, float(np.max(np.abs(fit.theta - _oracle_fit(data)))))
    elapsed = time.time() - t0
    _verdict(1, [(f"{len(_C1_TRACES)} fits, max coord diff {worst:.2e} <= 1e-3", worst <= 1e-3 and _C1_TRACES),
                 (f"runtime {elapsed:.1f}s < 60s", elapsed < 60)])


@pytest.fixture(scope="module")
def n2200_runs():
    return {ppv: run_replicates(SimConfig(n_obs=2200, ppv=ppv, q=0.1, n_reps=500, seed=4000 + int(ppv * 10)),
                                WORKERS)
            for ppv in NAIVE_BIAS}


def test_criterion_02_em_ascent(n2200_runs):
    if not _C1_TRACES:
        test_criterion_01_em_matches_direct_maximization()
    c1 = sum(int(np.sum(np.diff(t) < -1e-8)) for t in _C1_TRACES)
    c4 = sum(s.ascent_violations for s in n2200_runs.values())
    n4 = sum(s.n_reps_used for s in n2200_runs.values())
    _verdict(2, [(f"criterion-1 fits: {c1} violations", c1 == 0),
                 (f"criterion-4 fits ({n4}): {c4} violations", c4 == 0)])


def test_criterion_03_degenerate_equivalences():
    q1, exact = 0.0, 0.0
    for seed in range(10):
        full, data = make_sim_data(3000 + seed, n=300)
        q1 = max(q1, float(np.max(np.abs(fit_mle(full, compute_se=False).beta_hat - fit_gold(full).beta_hat))))
        same = data.replace(xstar=full.x, x=np.where(data.queried, full.x, np.nan))
        mle = fit_mle(same, compute_se=False).beta_hat
        naive = fit_naive(same).beta_hat
        gold = fit_gold(full.replace(xstar=full.x)).beta_hat
        exact = max(exact, float(np.max(np.abs(mle - naive))), float(np.max(np.abs(naive - gold))))
    _verdict(3, [(f"q=1: max |MLE-gold| {q1:.1e} <= 1e-6", q1 <= 1e-6),
                 (f"X*=X: max |MLE-naive|,|naive-gold| {exact:.1e} <= 1e-6", exact <= 1e-6)])


def test_criterion_04_n2200_operating_characteristics(n2200_runs):
    checks = []
    for ppv, expected in NAIVE_BIAS.items():
        s = n2200_runs[ppv]
        nb, mle, cc = s["naive"].bias, s["mle"], s["complete-case"]
        checks += [
            (f"PPV {ppv}: naive bias {nb:.3f} vs {expected}", abs(nb - expected) <= 0.03),
            (f"MLE bias {mle.bias:+.4f}", abs(mle.bias) <= 0.02),
            (f"MLE CP {mle.cp:.3f}", 0.92 <= mle.cp <= 0.97),
            (f"RE_MLE {mle.re:.3f}", mle.re >= 0.90),
            (f"RE_CC {cc.re:.3f}", cc.re <= 0.20),
        ]
    _verdict(4, checks)


def test_criterion_05_efficiency_by_query_fraction():
    runs = {q: run_replicates(SimConfig(n_obs=390, ppv=0.6, q=q, n_reps=300, seed=5000 + int(q * 100)), WORKERS)
            for q in (0.1, 0.25, 0.5)}
    re_cc = [runs[q]["complete-case"].re for q in (0.1, 0.25, 0.5)]
    checks = [(f"RE_CC {re_cc[0]:.3f} < {re_cc[1]:.3f} < {re_cc[2]:.3f}", re_cc[0] < re_cc[1] < re_cc[2])]
    for q, s in runs.items():
        checks.append((f"q={q}: ESE MLE {s['mle'].ese:.4f} <= CC {s['complete-case'].ese:.4f}",
                       s["mle"].ese <= s["complete-case"].ese))
    _verdict(5, checks)


def test_criterion_06_two_sided():
    s = run_replicates(SimConfig(n_obs=2200, ppv=0.5, q=0.1, misclass_mode="two-sided", n_reps=300, seed=6000),
                       WORKERS)
    nb, mb = s["naive"].bias, s["mle"].bias
    _verdict(6, [(f"naive bias {nb:.3f} vs -0.742", abs(nb + 0.742) <= 0.05),
                 (f"MLE bias {mb:+.4f}", abs(mb) <= 0.02),
                 (f"{s.n_failed} failed replicates", s.n_failed == 0)])


def test_criterion_07_fallback():
    s = run_replicates(SimConfig(n_obs=390, ppv=0.9, q=0.1, n_reps=1000, seed=7000), WORKERS)
    _, data = make_sim_data(7, n=390, ppv=0.9)
    x = data.x.copy()
    x[data.queried] = 1.0
    fit = fit_mle(data.replace(x=x))
    _verdict(7, [(f"{s.n_fallback}/1000 fallbacks at N=390, PPV=0.9", 1 <= s.n_fallback <= 100),
                 ("constructed all-X=1 subset falls back", fit.fallback_used and fit.separation == "complete")])


def test_criterion_08_ase_tracks_ese(n2200_runs):
    m = n2200_runs[0.6]["mle"]
    gap = abs(m.ase - m.ese) / m.ese
    _verdict(8, [(f"PPV 0.6: |ASE-ESE|/ESE = {gap:.3f} <= 0.15", gap <= 0.15)])


PIEDMONT = os.environ.get("MISCLASSREG_PIEDMONT_DIR")


def test_criterion_09_geo_integrity():
    violations_route = 0
    violations_mono = 0
    for seed in range(10):
        tracts, retailers, routes = synthetic_region(seed)
        table = merge_route_distances(build_access_table(tracts, retailers), routes)
        violations_route += int(np.sum(table.d_route < table.d_haversine - 1e-6))
        for d in (table.d_haversine, table.d_route):
            violations_mono += int(np.sum(discretize_access(d, 0.5) > discretize_access(d, 1.0)))
        violations_mono += int(np.sum(table.x(1.0) > table.xstar(1.0)))
    checks = [(f"haversine <= route: {violations_route} violations", violations_route == 0),
              (f"threshold monotonicity: {violations_mono} violations", violations_mono == 0)]
    if PIEDMONT:
        checks += _published_piedmont_checks(Path(PIEDMONT))
    else:
        checks.append(("published data not supplied; fixture checks only", True))
    _verdict(9, checks)


def _published_piedmont_checks(root):
    """PPV counts and gold-standard coefficients on the published files."""
    from misclassreg.geo import retailers_from_rows, routes_from_rows, tracts_from_rows
    from misclassreg.tables import read_csv

    tracts = tracts_from_rows(read_csv(root / "tracts.csv", ["id", "lat", "lon"])[1])
    retailers = retailers_from_rows(read_csv(root / "retailers.csv", ["id", "lat", "lon"])[1])
    routes = routes_from_rows(read_csv(root / "routes.csv", ["id", "route_miles"])[1])
    table = merge_route_distances(build_access_table(tracts, retailers), routes)
    tp1, pos1 = table.ppv(1.0)
    tp5, pos5 = table.ppv(0.5)
    checks = [(f"PPV at 1 mi {tp1}/{pos1}", round(100 * tp1 / pos1) == 64),
              (f"PPV at 1/2 mi {tp5}/{pos5}", round(100 * tp5 / pos5) == 40)]
    from misclassreg.core import Dataset, DesignSpec

    x = table.x(0.5)
    if np.all(np.isfinite(x)):
        d = Dataset(table.y_cases, table.population, table.xstar(0.5), x, table.metro[:, None], ("metro",))
        g = fit_gold(d, DesignSpec(("metro",), ("metro",), "access")).beta_hat
        checks.append((f"gold {np.round(g, 2).tolist()}", np.allclose(np.round(g, 2), [-2.11, 0.08, -0.17, 0.11])))
    return checks


def test_criterion_10_determinism(tmp_path):
    base = ["simulate", "--n", "390", "--reps", "24", "--seed", "10", "--q", "0.1"]
    for w in ("1", "8"):
        assert cli.main([*base, "--workers", w, "--out-dir", str(tmp_path / w)]) == 0
    same = {f: (tmp_path / "1" / f).read_bytes() == (tmp_path / "8" / f).read_bytes()
            for f in ("summary.csv", "replicates.csv")}
    _verdict(10, [(f"{f} identical at workers 1 and 8", ok) for f, ok in same.items()])
