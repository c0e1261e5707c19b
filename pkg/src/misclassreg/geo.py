"""Distance-based access indicators for census tracts.

Straight-line (haversine) distances give the error-prone indicator X* for
every tract; externally supplied route distances, which can never be shorter,
give the true indicator X for the tracts that were looked up.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, Optional, Sequence

import numpy as np

from .errors import IntegrityError, ValidationError

EARTH_RADIUS_MILES = 3958.8
ROUTE_SLACK = 1e-6


@dataclass(frozen=True)
class Tract:
    id: object
    centroid_lat: float
    centroid_lon: float
    metro: int = 0
    y_cases: int = 0
    population: int = 1

    def __post_init__(self):
        _check_coords(self.centroid_lat, self.centroid_lon, self.id)
        if self.population <= 0:
            raise ValidationError(f"tract {self.id!r}: population must be positive")


@dataclass(frozen=True)
class Retailer:
    id: object
    lat: float
    lon: float

    def __post_init__(self):
        _check_coords(self.lat, self.lon, self.id)


def _check_coords(lat, lon, ident):
    if not (-90.0 <= lat <= 90.0 and -180.0 <= lon <= 180.0):
        raise ValidationError(f"{ident!r}: coordinates ({lat}, {lon}) out of range")


def haversine_miles(a, b):
    """Great-circle distance in miles between ``(lat, lon)`` pairs in decimal degrees."""
    lat1, lon1 = np.radians(a[0]), np.radians(a[1])
    lat2, lon2 = np.radians(b[0]), np.radians(b[1])
    h = np.sin((lat2 - lat1) / 2.0) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2.0) ** 2
    d = 2.0 * EARTH_RADIUS_MILES * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))
    return float(d) if np.ndim(d) == 0 else d


def distance_matrix(tracts: Sequence[Tract], retailers: Sequence[Retailer]):
    lat_t = np.array([t.centroid_lat for t in tracts])[:, None]
    lon_t = np.array([t.centroid_lon for t in tracts])[:, None]
    lat_r = np.array([r.lat for r in retailers])[None, :]
    lon_r = np.array([r.lon for r in retailers])[None, :]
    return haversine_miles((lat_t, lon_t), (lat_r, lon_r))


def _nearest_from_row(row, retailers):
    best = np.min(row)
    tied = [retailers[j].id for j in np.flatnonzero(row == best)]
    return min(tied), float(best)


def nearest_retailer(tract: Tract, retailers: Sequence[Retailer]):
    """``(retailer id, miles)`` of the closest retailer; exact ties go to the smallest id."""
    retailers = list(retailers)
    if not retailers:
        raise ValidationError("retailer set is empty")
    row = distance_matrix([tract], retailers)[0]
    return _nearest_from_row(row, retailers)


def discretize_access(distances, threshold):
    """``I(distance <= threshold)``; a distance exactly on the threshold counts as access."""
    if not threshold > 0:
        raise ValidationError("threshold must be positive")
    return (np.asarray(distances, dtype=float) <= threshold).astype(int)


def threshold_label(t):
    return f"{t:g}"


@dataclass
class AccessTable:
    """Per-tract distances and access indicators at each threshold.

    ``d_route`` is NaN where no route distance was supplied; the matching
    ``x`` entries are then absent (NaN) as well.
    """

    ids: list
    metro: np.ndarray
    y_cases: np.ndarray
    population: np.ndarray
    d_haversine: np.ndarray
    thresholds: tuple
    d_route: np.ndarray = None
    nearest_id: list = field(default_factory=list)

    def __post_init__(self):
        n = len(self.ids)
        if self.d_route is None:
            self.d_route = np.full(n, np.nan)
        self.thresholds = tuple(sorted(float(t) for t in self.thresholds))

    @property
    def has_route(self):
        return ~np.isnan(self.d_route)

    def xstar(self, threshold):
        return discretize_access(self.d_haversine, threshold)

    def x(self, threshold):
        """True access indicator, NaN where the route distance is absent.

        Route distances within the rounding slack below the haversine value
        are treated as equal to it so the one-sided structure holds exactly.
        """
        d = np.fmax(self.d_route, self.d_haversine)
        out = (d <= threshold).astype(float)
        out[~self.has_route] = np.nan
        return out

    def ppv(self, threshold):
        """``(true positives, X*=1 count)`` among tracts with route distances."""
        xs = self.xstar(threshold)
        x = self.x(threshold)
        m = self.has_route & (xs == 1)
        return int(np.sum(x[m] == 1)), int(np.sum(m))


def build_access_table(tracts: Sequence[Tract], retailers: Sequence[Retailer], thresholds=(0.5, 1.0)) -> AccessTable:
    retailers = list(retailers)
    if not retailers:
        raise ValidationError("retailer set is empty")
    tracts = sorted(tracts, key=lambda t: t.id)
    D = distance_matrix(tracts, retailers)
    nearest = [_nearest_from_row(D[i], retailers) for i in range(len(tracts))]
    return AccessTable(
        ids=[t.id for t in tracts],
        metro=np.array([t.metro for t in tracts], dtype=int),
        y_cases=np.array([t.y_cases for t in tracts], dtype=float),
        population=np.array([t.population for t in tracts], dtype=float),
        d_haversine=np.array([d for _, d in nearest]),
        thresholds=tuple(thresholds),
        nearest_id=[r for r, _ in nearest],
    )


def merge_route_distances(access: AccessTable, routes: Dict[object, float]) -> AccessTable:
    """Attach route distances; tracts missing from ``routes`` stay unqueried.

    Raises :class:`IntegrityError` for ids not in the table or routes shorter
    than the straight-line distance beyond a 1e-6 mile slack.
    """
    index = {tid: i for i, tid in enumerate(access.ids)}
    unknown = [tid for tid in routes if tid not in index]
    if unknown:
        raise IntegrityError(f"route file has unknown tract ids: {unknown[:10]}", offending=unknown)
    d_route = np.full(len(access.ids), np.nan)
    for tid, miles in routes.items():
        d_route[index[tid]] = float(miles)
    have = ~np.isnan(d_route)
    short = have & (d_route < access.d_haversine - ROUTE_SLACK)
    if short.any():
        bad = [access.ids[i] for i in np.flatnonzero(short)]
        raise IntegrityError(f"route distance shorter than straight-line distance for tracts {bad[:10]}",
                             offending=bad)
    if np.any(d_route[have] < 0):
        raise IntegrityError("negative route distance")
    return replace(access, d_route=d_route)


def draw_query_design(access: AccessTable, n: int, rng, threshold: Optional[float] = None):
    """Stratified validation sample of ``n`` tracts with X*=1.

    Metropolitan tracts get ``ceil(n/2)`` slots and non-metropolitan
    ``floor(n/2)``; a stratum's shortfall is reallocated to the other.
    Returns ``(ids, metro_flags)`` sorted by id.
    """
    threshold = max(access.thresholds) if threshold is None else threshold
    xs = access.xstar(threshold)
    pos = np.flatnonzero(xs == 1)
    if n > pos.size:
        raise ValidationError(f"requested {n} tracts but only {pos.size} have X*=1")
    if n < 0:
        raise ValidationError("n must be nonnegative")
    order = sorted(pos.tolist(), key=lambda i: access.ids[i])
    metro_pool = [i for i in order if access.metro[i] == 1]
    non_pool = [i for i in order if access.metro[i] != 1]
    want_m, want_n = math.ceil(n / 2), n // 2
    if want_m > len(metro_pool):
        want_n += want_m - len(metro_pool)
        want_m = len(metro_pool)
    if want_n > len(non_pool):
        want_m += want_n - len(non_pool)
        want_n = len(non_pool)
    pick = []
    if want_m:
        pick.extend(rng.choice(np.array(metro_pool), size=want_m, replace=False).tolist())
    if want_n:
        pick.extend(rng.choice(np.array(non_pool), size=want_n, replace=False).tolist())
    pick.sort(key=lambda i: access.ids[i])
    return [access.ids[i] for i in pick], [int(access.metro[i]) for i in pick]


def _maybe_int_ids(values: Iterable[str]):
    values = list(values)
    try:
        return [int(v) for v in values]
    except ValueError:
        return values


def tracts_from_rows(rows) -> list:
    rows = list(rows)
    ids = _maybe_int_ids(r["id"] for r in rows)
    return [
        Tract(tid, float(r["lat"]), float(r["lon"]), int(r.get("metro") or 0), int(float(r.get("cases") or 0)),
              int(float(r.get("population") or 1)))
        for tid, r in zip(ids, rows)
    ]


def retailers_from_rows(rows) -> list:
    rows = list(rows)
    ids = _maybe_int_ids(r["id"] for r in rows)
    return [Retailer(rid, float(r["lat"]), float(r["lon"])) for rid, r in zip(ids, rows)]


def routes_from_rows(rows, id_type=None) -> dict:
    rows = list(rows)
    ids = _maybe_int_ids(r["id"] for r in rows)
    if id_type is str:
        ids = [r["id"] for r in rows]
    out = {}
    for tid, r in zip(ids, rows):
        if tid in out:
            raise IntegrityError(f"duplicate route entry for tract {tid!r}", offending=[tid])
        out[tid] = float(r["route_miles"])
    return out
