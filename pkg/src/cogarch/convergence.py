"""Path distances and mesh-refinement studies for the discrete approximation.

Recorded paths are read as right-continuous step functions of ``(G, V)``.
The exact Skorokhod distance is out of reach, so :func:`skorokhod_distance`
returns an upper approximation: the best of the identity time change and a
set of piecewise-linear time changes that align matching jumps, refined by
coordinate descent on the knot values.
"""

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .exceptions import DomainError, StationarityError
from .levy import (
    Grid,
    TruncationSchedule,
    check_schedule,
    first_jump_innovations,
    levy_moments,
    sample_jump_path,
    truncation_sequence,
)
from .simulator import SimulatedPath, simulate_discrete, simulate_exact, stationarity_check, stationary_mean

__all__ = [
    "TimeChange",
    "ConvergenceReport",
    "sup_distance",
    "skorokhod_distance",
    "timechange_cost",
    "aux_diagnostic",
    "convergence_study",
]


@dataclass
class TimeChange:
    """Piecewise-linear increasing map with ``lambda(0) = 0`` and ``lambda(T) = T``."""

    knots: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.knots = np.asarray(self.knots, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        k, v = self.knots, self.values
        if k.shape != v.shape or k.size < 2:
            raise DomainError("time change needs matching knots and values")
        if np.any(np.diff(k) <= 0) or np.any(np.diff(v) <= 0):
            raise DomainError("time change must be strictly increasing")
        if k[0] != 0 or v[0] != 0 or k[-1] != v[-1]:
            raise DomainError("time change must fix both endpoints")

    @classmethod
    def identity(cls, T):
        return cls(np.array([0.0, T]), np.array([0.0, T]))

    def __call__(self, t):
        return np.interp(t, self.knots, self.values)

    def inverse(self, s):
        return np.interp(s, self.values, self.knots)

    @property
    def displacement(self):
        return float(np.max(np.abs(self.values - self.knots)))


def _check_horizons(A, B):
    if abs(A.horizon - B.horizon) > 1e-9 * max(1.0, A.horizon):
        raise DomainError(f"horizon mismatch: {A.horizon} vs {B.horizon}")


def sup_distance(pathA, pathB):
    """``sup_t ||(G, V)_A(t) - (G, V)_B(t)||`` with step evaluation between records."""
    _check_horizons(pathA, pathB)
    ta, tb = pathA.times, pathB.times
    t = np.union1d(ta, tb)
    ia = np.searchsorted(ta, t, side="right") - 1
    ib = np.searchsorted(tb, t, side="right") - 1
    # before a path's first record it holds its first value
    ia = np.maximum(ia, 0)
    ib = np.maximum(ib, 0)
    d = pathA.values()[ia] - pathB.values()[ib]
    return float(np.max(np.hypot(d[:, 0], d[:, 1])))


def timechange_cost(pathA, pathB, lam):
    """``sup_t ||A(t) - B(lam(t))|| + sup_t |lam(t) - t|`` evaluated exactly.

    Both step functions only change at ``A``'s records and at the preimages
    of ``B``'s records, so the sup is a max over those points.
    """
    ta, tb = pathA.times, pathB.times
    xa, xb = pathA.values(), pathB.values()
    # A's records, with B looked up at lam(t)
    ib1 = np.searchsorted(tb, lam(ta), side="right") - 1
    # preimages of B's records, with the B index known exactly
    pre = lam.inverse(tb)
    ia2 = np.searchsorted(ta, pre, side="right") - 1
    ia = np.maximum(np.concatenate([np.arange(ta.size), ia2]), 0)
    ib = np.maximum(np.concatenate([ib1, np.arange(tb.size)]), 0)
    d = xa[ia] - xb[ib]
    return float(np.max(np.hypot(d[:, 0], d[:, 1]))) + lam.displacement


def _jump_records(path, k, ratio=10.0):
    """Indices of the ``k`` largest record-to-record changes, largest first.

    Only changes above ``ratio`` times the median change count as jumps, so
    smooth decay between jumps never claims a knot.
    """
    x = path.values()
    if len(path) < 2:
        return np.zeros(0, dtype=int), np.zeros((0, 2))
    d = np.diff(x, axis=0)
    size = np.hypot(d[:, 0], d[:, 1])
    order = np.argsort(-size, kind="stable")[:k]
    order = order[size[order] > max(ratio * np.median(size), 0.0)]
    return order + 1, d[order]


def _candidate_timechange(pathA, pathB, max_knots, window):
    T = pathA.horizon
    ja, da = _jump_records(pathA, max_knots)
    tb = pathB.times
    xb = pathB.values()
    db = np.diff(xb, axis=0)
    pairs = []
    for idx, dv in zip(ja, da):
        t = pathA.times[idx]
        lo = np.searchsorted(tb, t - window, side="left")
        hi = np.searchsorted(tb, t + window, side="right")
        lo = max(lo, 1)
        if hi <= lo:
            continue
        err = np.hypot(*(db[lo - 1 : hi - 1] - dv).T)
        best = int(np.argmin(err))
        # the partner must look like the same jump
        if err[best] > 0.5 * math.hypot(*dv):
            continue
        j = lo + best
        s = tb[j]
        if not (0 < t < T and 0 < s < T):
            continue
        # keep the map strictly increasing
        if all((t - t2) * (s - s2) > 0 for t2, s2 in pairs):
            pairs.append((t, s))
    pairs.sort()
    knots = np.array([0.0] + [p[0] for p in pairs] + [T])
    values = np.array([0.0] + [p[1] for p in pairs] + [T])
    return knots, values


def _refine(pathA, pathB, knots, values, iterations, step):
    """Coordinate descent on interior knot values, halving the step on failure."""
    lam = TimeChange(knots, values)
    best = timechange_cost(pathA, pathB, lam)
    n_int = knots.size - 2
    it = 0
    while it < iterations and n_int > 0 and step > 1e-12 * knots[-1]:
        improved = False
        for j in range(1, knots.size - 1):
            for direction in (-1.0, 1.0):
                it += 1
                v = values.copy()
                v[j] += direction * step
                if not (v[j - 1] < v[j] < v[j + 1]):
                    continue
                cost = timechange_cost(pathA, pathB, TimeChange(knots, v))
                if cost < best:
                    best, values, improved = cost, v, True
                    break
        if not improved:
            step *= 0.5
    return best


def _directed_distance(pathA, pathB, max_knots, iterations):
    T = pathA.horizon
    spacing = max(np.max(np.diff(pathA.times), initial=0.0), np.max(np.diff(pathB.times), initial=0.0))
    window = min(2.0 * spacing, 0.5 * T)
    knots, values = _candidate_timechange(pathA, pathB, max_knots, window)
    # snap B onto exact record times first, then refine
    if knots.size == 2:
        return timechange_cost(pathA, pathB, TimeChange(knots, values))
    return _refine(pathA, pathB, knots, values, iterations, 0.25 * window)


def skorokhod_distance(pathA, pathB, max_knots=64, iterations=200):
    """Upper approximation of the Skorokhod distance between two recorded paths.

    Never exceeds :func:`sup_distance` (the identity map is always a
    candidate) and is symmetric, the search being run in both directions.
    """
    _check_horizons(pathA, pathB)
    best = sup_distance(pathA, pathB)
    if best == 0.0:
        return 0.0
    for X, Y in ((pathA, pathB), (pathB, pathA)):
        best = min(best, _directed_distance(X, Y, max_knots, iterations))
    return best


def aux_diagnostic(spec, innovations, noise, check=True):
    """Compare the products of the scalar majorants built from innovations and true jumps.

    ``H_n`` multiplies ``(1 + eps_k^2 dt_k ||e a'||) exp(||B|| dt_k)`` and
    ``H~_n`` the same factors with ``eps_k^2 dt_k`` replaced by the squared
    first qualifying jump, one factor per cell in order of the cell's first
    event time. Returns the sup of ``|H_n - H~_n|``, ``H~_n(T)`` and the
    bound ``exp(||B|| T + sum_s ln(1 + dL_s^2 ||e a'||))``.
    """
    grid = innovations.grid
    dts = grid.spacings
    nb = linalg.induced_norm(spec.B)
    nea = linalg.induced_norm(spec.ea)
    decay = nb * dts
    log_h = np.cumsum(np.log1p(innovations.epsilon**2 * dts * nea) + decay)
    log_ht = np.cumsum(np.log1p(innovations.raw_first_jump**2 * nea) + decay)
    H = np.exp(log_h)
    Ht = np.exp(log_ht)
    T = noise.horizon
    log_bound = nb * T + float(np.sum(np.log1p(noise.sizes**2 * nea)))
    bound = math.exp(log_bound)
    out = {
        "sup_diff": float(np.max(np.abs(H - Ht))),
        "H_tilde_T": float(Ht[-1]),
        "bound": bound,
        "nondecreasing": bool(np.all(np.diff(Ht) >= 0)),
        "H": H,
        "H_tilde": Ht,
    }
    if check and not Ht[-1] <= bound * (1 + 1e-12):
        raise AssertionError(f"H~_n(T)={Ht[-1]} exceeds bound {bound}")
    return out


@dataclass
class ConvergenceReport:
    meshes: list
    seeds: list
    distances: np.ndarray
    aux_sup_diff: np.ndarray
    aux_within_bound: np.ndarray
    thresholds: list
    medians: list = field(init=False)
    iqr: list = field(init=False)
    aux_medians: list = field(init=False)
    exceed_fraction: float = field(init=False)
    monotone: bool = field(init=False)
    passed: bool = field(init=False)
    exceed_level: float = 0.1
    exceed_max: float = 0.1

    def __post_init__(self):
        if np.any(np.diff(self.meshes) >= 0):
            raise DomainError("mesh sizes must be strictly decreasing")
        d = self.distances
        self.medians = [float(x) for x in np.median(d, axis=1)]
        q75, q25 = np.percentile(d, [75, 25], axis=1)
        self.iqr = [float(x) for x in q75 - q25]
        self.aux_medians = [float(x) for x in np.median(self.aux_sup_diff, axis=1)]
        self.exceed_fraction = float(np.mean(d[-1] > self.exceed_level))
        self.monotone = bool(np.all(np.diff(self.medians) < 0))
        self.passed = self.monotone and self.exceed_fraction < self.exceed_max

    @property
    def decay(self):
        """Smallest-mesh median below largest-mesh median."""
        return self.medians[-1] < self.medians[0]

    def rows(self):
        for i, mesh in enumerate(self.meshes):
            for j, seed in enumerate(self.seeds):
                yield mesh, seed, float(self.distances[i, j])

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["mesh", "seed", "distance"])
        for mesh, seed, dist in self.rows():
            w.writerow([repr(float(mesh)), seed, repr(dist)])
        return buf.getvalue()

    def summary(self):
        return {
            "meshes": [float(m) for m in self.meshes],
            "thresholds": self.thresholds,
            "medians": self.medians,
            "iqr": self.iqr,
            "aux_sup_diff_medians": self.aux_medians,
            "aux_within_bound_fraction": float(np.mean(self.aux_within_bound)),
            "exceed_fraction_finest": self.exceed_fraction,
            "monotone": self.monotone,
            "pass": self.passed,
            "n_seeds": len(self.seeds),
        }

    def to_json(self):
        return json.dumps(self.summary(), sort_keys=True, indent=2)


def _study_cell(spec, noise_spec, exact, noise, mesh, n_index, schedule, Y0, mu, max_knots, iterations):
    grid = Grid.uniform(noise.horizon, mesh)
    m = truncation_sequence(n_index, schedule)
    innov = first_jump_innovations(noise, grid, m, noise_spec)
    disc = simulate_discrete(spec, innov, Y0=Y0, mu=mu)
    dist = skorokhod_distance(exact, disc, max_knots, iterations)
    aux = aux_diagnostic(spec, innov, noise, check=False)
    return dist, aux["sup_diff"], aux["H_tilde_T"] <= aux["bound"] * (1 + 1e-12)


def convergence_study(spec, noise_spec, T, meshes, seeds, m_schedule=None, max_knots=64, iterations=200,
                      mu=None, exceed_level=0.1, exceed_max=0.1):
    """Distances between exact and discrete paths over a mesh refinement.

    For each seed one compound Poisson path drives the exact path and, through
    first-jump innovations, one discrete path per mesh. The truncation level
    for a mesh with ``N`` cells is ``m_N`` from ``m_schedule``.

    Raises
    ------
    StationarityError
        If ``spec`` is not admissible for the driver.
    """
    meshes = [float(x) for x in meshes]
    seeds = list(seeds)
    if len(meshes) < 3 or np.any(np.diff(meshes) >= 0):
        raise DomainError("need at least 3 strictly decreasing meshes")
    if len(seeds) < 20:
        raise DomainError("need at least 20 seeds")
    if m_schedule is None:
        m_schedule = TruncationSchedule()
    elif isinstance(m_schedule, dict):
        m_schedule = TruncationSchedule(**m_schedule)
    if mu is None:
        mu = levy_moments(noise_spec)["mu_second"]
    report = stationarity_check(spec, mu)
    if not report.ok:
        raise StationarityError("; ".join(report.reasons))
    Y0 = stationary_mean(spec, mu)
    n_cells = [Grid.uniform(T, dt).n_cells for dt in meshes]
    check_schedule(noise_spec, m_schedule, meshes, n_cells)
    # the exact path is recorded on the finest grid (plus its jump times)
    fine = Grid.uniform(T, meshes[-1])
    dist = np.empty((len(meshes), len(seeds)))
    aux = np.empty_like(dist)
    within = np.empty(dist.shape, dtype=bool)
    for j, seed in enumerate(seeds):
        noise = sample_jump_path(noise_spec, T, seed)
        exact = simulate_exact(spec, noise, fine, Y0=Y0, mu=mu, check=False)
        for i, mesh in enumerate(meshes):
            dist[i, j], aux[i, j], within[i, j] = _study_cell(
                spec, noise_spec, exact, noise, mesh, n_cells[i], m_schedule, Y0, mu, max_knots, iterations
            )
    thresholds = [truncation_sequence(n, m_schedule) for n in n_cells]
    return ConvergenceReport(meshes, seeds, dist, aux, within, thresholds,
                             exceed_level=exceed_level, exceed_max=exceed_max)
