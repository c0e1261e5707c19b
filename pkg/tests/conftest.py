import numpy as np
import pytest

from misclassreg.core import Dataset, MisclassMode
from misclassreg.sim import SimConfig, apply_query_design, generate, replicate_rng

ACCEPTANCE_LINES = {}


def record_acceptance(number, passed, detail):
    ACCEPTANCE_LINES[number] = (bool(passed), detail)


def make_sim_data(seed, n=300, ppv=0.6, q=0.1, mode="one-sided", beta=(-2.28, 0.18, 0.14)):
    """Generated dataset plus its partially queried copy."""
    cfg = SimConfig(n_obs=n, ppv=ppv, q=q, misclass_mode=mode, beta=beta, n_reps=1, seed=seed)
    rng = replicate_rng(seed, 0)
    full = generate(cfg, rng)
    return full, apply_query_design(full, q, cfg.misclass_mode, rng)


def tiny_dataset(x=None, mode=MisclassMode.ONE_SIDED):
    return Dataset(
        y=[3, 0, 5, 2, 1, 4],
        offset=[10.0, 12.0, 9.0, 11.0, 8.0, 10.0],
        xstar=[1, 1, 0, 1, 0, 1],
        x=[1, np.nan, 0, 0, np.nan, np.nan] if x is None else x,
        z=[[0.1], [0.3], [0.2], [0.05], [0.4], [0.25]],
        covariate_names=("z",),
        mode=mode,
    )


@pytest.fixture
def small_sim():
    return make_sim_data(11)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        ok, detail = ACCEPTANCE_LINES[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


def synthetic_region(seed=0, n_tracts=387, n_retailers=150):
    """Tracts, retailers and route distances on a small patch of the Piedmont."""
    from misclassreg.geo import Retailer, Tract, build_access_table

    rng = np.random.default_rng(seed)
    lat = 35.9 + rng.uniform(-0.15, 0.15, n_tracts)
    lon = -80.0 + rng.uniform(-0.18, 0.18, n_tracts)
    metro = (rng.random(n_tracts) < 0.5).astype(int)
    tracts = [Tract(i + 1, float(a), float(b), int(m), int(rng.poisson(300)), int(rng.poisson(4000)) + 1)
              for i, (a, b, m) in enumerate(zip(lat, lon, metro))]
    rlat = 35.9 + rng.uniform(-0.15, 0.15, n_retailers)
    rlon = -80.0 + rng.uniform(-0.18, 0.18, n_retailers)
    retailers = [Retailer(100 + j, float(a), float(b)) for j, (a, b) in enumerate(zip(rlat, rlon))]
    table = build_access_table(tracts, retailers, (0.5, 1.0))
    detour = 1.0 + rng.exponential(0.35, n_tracts)
    routes = {tid: float(d * f) for tid, d, f in zip(table.ids, table.d_haversine, detour)}
    return tracts, retailers, routes
