"""Pseudo-maximum-likelihood estimation of COGARCH(p,q) parameters.

The observed increments ``dG_i`` on an arbitrary (possibly irregular) time
grid are treated as conditionally Gaussian with mean zero and the model's
conditional variance. The unobserved state is filtered with the discrete
recursion, using ``dG_i^2 / V_{i-1}`` in place of ``eps_i^2 dt_i``.

Parameters are searched in log space (``alpha0``, every ``a_k`` and ``b_k``
strictly positive) with a Nelder-Mead simplex; inadmissible points are
rejected through a large penalty.
"""

import csv
import logging
import math
from dataclasses import dataclass, field

import numba
import numpy as np
import scipy.optimize

from . import linalg
from .exceptions import (
    DomainError,
    FilterDegeneracyError,
    InfeasibleStartError,
    InvalidOrderError,
    NumericalError,
    StationarityError,
)
from .levy import make_rng
from .simulator import CogarchSpec, stationarity_check, stationary_mean

__all__ = [
    "ObservedSeries",
    "EstimationResult",
    "FilterResult",
    "cond_variance",
    "state_update",
    "run_filter",
    "pseudo_loglik",
    "initial_point",
    "embed_spec",
    "estimate",
    "read_series_csv",
]

log = logging.getLogger(__name__)

_LOG_2PI = math.log(2.0 * math.pi)
# relative floor on conditional variances, times the sample variance of dG
VARIANCE_FLOOR = 1e-12
PENALTY = 1e10


@dataclass
class ObservedSeries:
    """Observation times ``t_0 < ... < t_N`` and increments ``G_{t_i} - G_{t_{i-1}}``."""

    times: np.ndarray
    increments: np.ndarray
    levels: np.ndarray = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.increments = np.asarray(self.increments, dtype=float)
        if self.times.ndim != 1 or self.increments.ndim != 1:
            raise DomainError("times and increments must be 1-d")
        if self.times.size != self.increments.size + 1:
            raise DomainError("need exactly one more time than increments")
        if np.any(np.diff(self.times) <= 0):
            raise DomainError("observation times must be strictly increasing")
        if not np.all(np.isfinite(self.increments)):
            raise DomainError("increments must be finite")

    @classmethod
    def from_levels(cls, times, levels):
        levels = np.asarray(levels, dtype=float)
        return cls(times, np.diff(levels), levels)

    @classmethod
    def from_path(cls, path, times):
        """Sample the ``G`` column of a simulated path at ``times``."""
        times = np.asarray(times, dtype=float)
        return cls.from_levels(times, path.at(times)[:, 0])

    @property
    def dt(self):
        return np.diff(self.times)

    def __len__(self):
        return self.increments.size


def read_series_csv(filename):
    """Parse a ``time,dG`` or ``time,level`` CSV with a header row.

    For ``time,dG`` the first data row carries ``t_0`` and its ``dG`` value
    is ignored (conventionally empty or 0).

    Raises
    ------
    DomainError
        On a malformed file; the message carries the 1-based line number.
    """
    with open(filename, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DomainError("line 1: empty file")
    header = [h.strip() for h in rows[0]]
    if len(header) != 2 or header[0] != "time" or header[1] not in ("dG", "level"):
        raise DomainError("line 1: header must be 'time,dG' or 'time,level'")
    times, vals = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 2:
            raise DomainError(f"line {lineno}: expected 2 fields, got {len(row)}")
        try:
            t = float(row[0])
            v = float(row[1]) if row[1].strip() else 0.0
        except ValueError:
            raise DomainError(f"line {lineno}: non-numeric field") from None
        if not (math.isfinite(t) and math.isfinite(v)):
            raise DomainError(f"line {lineno}: non-finite value")
        if times and t <= times[-1]:
            raise DomainError(f"line {lineno}: times must be strictly increasing")
        times.append(t)
        vals.append(v)
    if len(times) < 2:
        raise DomainError(f"line {len(rows)}: need at least two observations")
    if header[1] == "level":
        return ObservedSeries.from_levels(times, vals)
    return ObservedSeries(times, vals[1:])


def _stationary_intercept(spec, mu):
    denom = spec.b[-1] - spec.a[0] * mu
    if not denom > 0:
        raise StationarityError(f"b_q - a_1 mu = {denom:.6g} <= 0")
    return spec.alpha0 * spec.b[-1] / denom


def _integrated_exp_rows(spec, dts, mu):
    """Rows ``a' Bt^{-1} (exp(Bt dt) - I)`` for each step size, ``Bt = B + mu e a'``.

    This equals ``a' exp(Bt dt) Bt^{-1} (I - exp(-Bt dt))`` since ``Bt``
    commutes with its exponential, and avoids ``exp(-Bt dt)``.
    """
    Bt = spec.B_tilde(mu)
    q = spec.q
    a = spec.a_vec
    out = np.empty((len(dts), q))
    for k, dt in enumerate(dts):
        M = linalg.solve_checked(Bt, linalg.expm(Bt, dt) - np.eye(q))
        out[k] = a @ M
    return out


def cond_variance(spec, dt, Y_prev, mu=1.0, EL1sq=1.0, floor=None):
    """Conditional variance of the next increment given the state ``Y_prev``.

    ``EL1sq * [alpha0 dt b_q / (b_q - a_1 mu) + a' exp(Bt dt) Bt^{-1} (I - exp(-Bt dt)) (Y_prev - E Y)]``
    with ``Bt = B + mu e a'``. If ``floor`` is given, values at or below it are
    replaced by ``floor``.
    """
    if not dt > 0:
        raise DomainError("dt must be positive")
    y = linalg.as_vector(Y_prev, spec.q)
    c0 = _stationary_intercept(spec, mu)
    row = _integrated_exp_rows(spec, [dt], mu)[0]
    val = EL1sq * (c0 * dt + row @ (y - stationary_mean(spec, mu)))
    if floor is not None and not val > floor:
        return float(floor)
    return float(val)


def state_update(spec, Y_prev, dG, dt):
    """One filter step: ``Y_prev`` and the increment ``dG`` give the next state."""
    y = linalg.as_vector(Y_prev, spec.q)
    v = spec.alpha0 + spec.a_vec @ y
    if not v > 0:
        raise FilterDegeneracyError(f"alpha0 + a'Y = {v:.6g} <= 0")
    w = dG * dG / v
    z = linalg.expm(spec.B, dt) @ y
    z[-1] += w * (spec.alpha0 + spec.a_vec @ z)
    return z


@numba.njit(cache=True)
def _filter_kernel(dG, dts, idx, E, W, a, alpha0, c0, EY, y0, EL1sq, floor, sig_out, y_out):
    q = a.size
    n = dG.size
    y = y0.copy()
    z = np.empty(q)
    ll = 0.0
    clamps = 0
    for j in range(q):
        y_out[0, j] = y[j]
    for i in range(n):
        k = idx[i]
        dev = 0.0
        v_prev = alpha0
        for j in range(q):
            dev += W[k, j] * (y[j] - EY[j])
            v_prev += a[j] * y[j]
        s2 = EL1sq * (c0 * dts[i] + dev)
        if np.isnan(s2):
            return -np.inf, clamps, i
        if s2 <= floor:
            if floor > 0.0:
                s2 = floor
                clamps += 1
            else:
                return -np.inf, clamps, i
        sig_out[i] = s2
        g2 = dG[i] * dG[i]
        ll -= 0.5 * (g2 / s2 + np.log(s2))
        if not v_prev > 0.0:
            return -np.inf, clamps, i
        w = g2 / v_prev
        az = alpha0
        for r in range(q):
            acc = 0.0
            for c in range(q):
                acc += E[k, r, c] * y[c]
            z[r] = acc
            az += a[r] * acc
        z[q - 1] += w * az
        for j in range(q):
            y[j] = z[j]
            y_out[i + 1, j] = z[j]
    ll -= 0.5 * n * np.log(2.0 * np.pi)
    return ll, clamps, -1


def _group_steps(dts, rtol=1e-12):
    """Map step sizes to representatives that agree to ``rtol`` (linspace jitter)."""
    order = np.argsort(dts, kind="stable")
    s = dts[order]
    new = np.empty(s.size, dtype=bool)
    new[0] = True
    new[1:] = np.diff(s) > rtol * s[1:]
    group = np.cumsum(new) - 1
    reps = s[new]
    idx = np.empty(dts.size, dtype=np.int64)
    idx[order] = group
    return reps, idx


def _step_matrices(spec, reps, mu):
    B = spec.B
    E = np.empty((reps.size, spec.q, spec.q))
    for k, dt in enumerate(reps):
        E[k] = linalg.expm(B, dt)
    return E, _integrated_exp_rows(spec, reps, mu)


@dataclass
class FilterResult:
    loglik: float
    sigma2: np.ndarray
    Y: np.ndarray
    clamp_count: int
    failed_at: int = -1


def run_filter(spec, series, mu=1.0, EL1sq=1.0, Y0=None):
    """Run the state filter along ``series`` and accumulate the pseudo-log-likelihood.

    ``Y0`` defaults to the stationary mean of ``spec``. Rejected points
    (nonpositive variance without a usable floor, degenerate filter state,
    ill-conditioned ``B + mu e a'``) give ``loglik = -inf``.
    """
    n = len(series)
    q = spec.q
    dts = series.dt
    dG = series.increments
    sig = np.full(n, np.nan)
    Ys = np.full((n + 1, q), np.nan)
    try:
        c0 = _stationary_intercept(spec, mu)
        EY = stationary_mean(spec, mu)
        reps, idx = _group_steps(dts)
        E, W = _step_matrices(spec, reps, mu)
    except (StationarityError, NumericalError):
        return FilterResult(-np.inf, sig, Ys, 0, 0)
    y0 = EY.copy() if Y0 is None else linalg.as_vector(Y0, q)
    floor = VARIANCE_FLOOR * float(np.var(dG)) if n > 1 else 0.0
    ll, clamps, failed = _filter_kernel(
        dG, dts, idx, E, W, spec.a_vec, spec.alpha0, c0, EY, y0, float(EL1sq), floor, sig, Ys
    )
    return FilterResult(float(ll), sig, Ys, int(clamps), int(failed))


def pseudo_loglik(spec, series, mu=1.0, EL1sq=1.0, Y0=None):
    """Gaussian pseudo-log-likelihood ``-1/2 sum(dG^2/s2 + ln s2) - N ln(2 pi)/2``."""
    return run_filter(spec, series, mu, EL1sq, Y0).loglik


def initial_point(series, orders):
    """Heuristic start for the optimizer.

    ``alpha0 = 0.1 Var(dG / sqrt(dt))``; ``a = (0.05, 0, ...)``; for ``q = 1``
    ``b_1 = 0.1``, otherwise ``b`` holds the coefficients of ``(x + 0.5)^q``.
    """
    p, q = orders
    if not 1 <= p <= q:
        raise InvalidOrderError(f"need 1 <= p <= q, got {orders}")
    scaled = series.increments / np.sqrt(series.dt)
    var = float(np.var(scaled))
    alpha0 = 0.1 * var if var > 0 else 1e-6
    a = [0.05] + [0.0] * (q - 1)
    if q == 1:
        b = [0.1]
    else:
        b = list(np.poly(np.full(q, -0.5))[1:])
    return CogarchSpec(a, b, alpha0)


def _poly_numerator(spec):
    # a' (zI - B)^{-1} e = (a_1 + a_2 z + ... + a_p z^{p-1}) / (z^q + b_1 z^{q-1} + ... + b_q)
    return np.array(spec.a[: spec.p][::-1])


def embed_spec(spec, orders, c_exact=1.0, c_fast=None):
    """Re-express ``spec`` at larger orders with the same variance dynamics.

    Numerator and denominator of the state transfer function are multiplied
    by ``(z + c_exact)`` as often as the numerator order allows, which is an
    exact re-parameterization. Any further denominator factors use a fast
    root ``c_fast`` with the numerator scaled by ``c_fast``, which is only
    approximately equivalent.
    """
    p2, q2 = orders
    if p2 < spec.p or q2 < spec.q or p2 > q2:
        raise InvalidOrderError(f"cannot embed order ({spec.p},{spec.q}) into {orders}")
    num = _poly_numerator(spec)
    den = np.concatenate(([1.0], spec.b))
    k_exact = min(p2 - spec.p, q2 - spec.q)
    k_fast = q2 - spec.q - k_exact
    if c_fast is None:
        c_fast = 50.0 * max(1.0, float(np.max(np.abs(spec.b))))
    for _ in range(k_exact):
        num = np.polymul(num, [1.0, c_exact])
        den = np.polymul(den, [1.0, c_exact])
    for _ in range(k_fast):
        num = num * c_fast
        den = np.polymul(den, [1.0, c_fast])
    a = list(num[::-1])
    a += [0.0] * (q2 - len(a))
    # p2 slots are searched in log space, so unused numerator slots get a tiny positive value
    for k in range(len(num), p2):
        a[k] = 1e-8 * a[0]
    return CogarchSpec(a[:q2], den[1:], spec.alpha0, p=p2)


@dataclass
class EstimationResult:
    spec: CogarchSpec
    loglik: float
    iterations: int
    converged: bool
    constraint_report: list
    initial: CogarchSpec
    seed: object = None
    clamp_count: int = 0
    n_evaluations: int = 0
    trace: list = field(default_factory=list)
    start_logliks: list = field(default_factory=list)

    def to_dict(self):
        return {
            "params": self.spec.to_dict(),
            "loglik": self.loglik,
            "iterations": self.iterations,
            "converged": self.converged,
            "constraint_report": list(self.constraint_report),
            "initial_point": self.initial.to_dict(),
            "seed": self.seed,
            "clamp_count": self.clamp_count,
            "n_evaluations": self.n_evaluations,
            "start_logliks": list(self.start_logliks),
        }


class _Objective:
    """Negative pseudo-log-likelihood in log-parameter space."""

    def __init__(self, series, orders, mu, EL1sq):
        self.series = series
        self.p, self.q = orders
        self.mu = mu
        self.EL1sq = EL1sq
        self.n_eval = 0

    def to_spec(self, u):
        theta = np.exp(np.asarray(u, dtype=float))
        alpha0 = theta[0]
        a = list(theta[1 : 1 + self.p]) + [0.0] * (self.q - self.p)
        b = theta[1 + self.p :]
        return CogarchSpec(a, b, alpha0, p=self.p)

    def to_u(self, spec):
        theta = [spec.alpha0] + list(spec.a[: self.p]) + list(spec.b)
        theta = np.maximum(np.asarray(theta, dtype=float), 1e-300)
        return np.log(theta)

    def violation(self, spec):
        b_q, a_1 = spec.b[-1], spec.a[0]
        margin = max(0.0, a_1 * self.mu - b_q)
        margin += max(0.0, float(np.max(np.linalg.eigvals(spec.B_tilde(self.mu)).real)))
        margin += max(0.0, float(np.max(np.linalg.eigvals(spec.B).real)))
        return margin

    def __call__(self, u):
        self.n_eval += 1
        if not np.all(np.isfinite(u)):
            return 2 * PENALTY
        try:
            spec = self.to_spec(u)
        except (InvalidOrderError, DomainError):
            return 2 * PENALTY
        if not stationarity_check(spec, self.mu).ok:
            return PENALTY * (1.0 + min(self.violation(spec), 1.0))
        ll = pseudo_loglik(spec, self.series, self.mu, self.EL1sq)
        if not np.isfinite(ll):
            return 2 * PENALTY
        return -ll


def _bounds(series, orders):
    p, q = orders
    scale = float(np.var(series.increments / np.sqrt(series.dt)))
    if not scale > 0:
        scale = 1.0
    lo = [math.log(1e-10 * scale)] + [math.log(1e-8)] * (p + q)
    hi = [math.log(1e6 * scale)] + [math.log(1e4)] * (p + q)
    return np.array(lo), np.array(hi)


def _jitter(objective, u0, rng, sd=0.5, tries=100):
    for _ in range(tries):
        u = u0 + rng.normal(0.0, sd, u0.size)
        if objective(u) < PENALTY:
            return u
    return None


def _nelder_mead(objective, u0, bounds, max_iter, tol):
    """Nelder-Mead from ``u0``, restarted once from its own optimum."""
    lo, hi = bounds
    u0 = np.clip(u0, lo, hi)
    trace = []

    def record(intermediate_result):
        trace.append(-float(intermediate_result.fun))

    total_iter = 0
    res = None
    f_prev = objective(u0)
    for _ in range(2):
        fatol = tol * max(1.0, abs(f_prev))
        res = scipy.optimize.minimize(
            objective,
            u0,
            method="Nelder-Mead",
            bounds=list(zip(lo, hi)),
            callback=record,
            options={"maxiter": max_iter, "xatol": 1e-7, "fatol": fatol, "adaptive": u0.size > 3},
        )
        total_iter += res.nit
        improved = f_prev - res.fun
        u0, f_prev = res.x, res.fun
        if improved <= fatol:
            break
    # the best simplex vertex never gets worse
    for k in range(1, len(trace)):
        assert trace[k] >= trace[k - 1] - 1e-9 * max(1.0, abs(trace[k - 1])), "optimizer trace decreased"
    return res, total_iter, trace


def estimate(series, orders=(1, 1), init=None, n_starts=5, max_iter=2000, tol=1e-8, mu=1.0, EL1sq=1.0,
             seed=0, nested_start=True):
    """Maximize the pseudo-log-likelihood over admissible parameters.

    Starts from ``init`` (or :func:`initial_point`) plus ``n_starts - 1``
    jittered copies drawn from ``seed``. For orders above ``(1, 1)`` a fitted
    ``(1, 1)`` model embedded with :func:`embed_spec` is added as a start,
    so the fit is never worse than the nested lower-order fit.

    Raises
    ------
    InfeasibleStartError
        If no start point gives a finite objective.
    """
    p, q = orders
    if not 1 <= p <= q:
        raise InvalidOrderError(f"need 1 <= p <= q, got {orders}")
    n_params = 1 + p + q
    if len(series) < 10 * n_params:
        raise DomainError(f"need at least {10 * n_params} increments for orders {orders}")
    objective = _Objective(series, orders, mu, EL1sq)
    bounds = _bounds(series, orders)
    rng = make_rng(np.random.SeedSequence([int(seed), 1]))

    first = init if init is not None else initial_point(series, orders)
    if (first.p, first.q) != (p, q):
        first = embed_spec(first, orders)
    u_first = objective.to_u(first)
    starts = [u_first]
    if nested_start and (p, q) != (1, 1):
        low = estimate(series, (1, 1), n_starts=max(1, n_starts // 2), max_iter=max_iter, tol=tol, mu=mu,
                       EL1sq=EL1sq, seed=seed, nested_start=False)
        starts.append(objective.to_u(embed_spec(low.spec, orders)))
    for _ in range(n_starts - 1):
        u = _jitter(objective, u_first, rng)
        if u is not None:
            starts.append(u)

    best = None
    start_lls = []
    trace = []
    total_iter = 0
    for u0 in starts:
        f0 = objective(np.clip(u0, *bounds))
        if f0 >= PENALTY:
            start_lls.append(None)
            continue
        res, nit, tr = _nelder_mead(objective, u0, bounds, max_iter, tol)
        total_iter += nit
        start_lls.append(-float(res.fun))
        log.debug("start %d: loglik %.6f after %d iterations", len(start_lls), -res.fun, nit)
        if best is None or res.fun < best[0].fun:
            best = (res, nit)
        running = trace[-1] if trace else -np.inf
        trace.extend(max(running, t) for t in tr)
    if best is None or best[0].fun >= PENALTY:
        raise InfeasibleStartError(
            "no feasible start point", {"starts": [objective.to_spec(u).to_dict() for u in starts]}
        )

    res = best[0]
    spec = objective.to_spec(res.x)
    report = []
    lo, hi = bounds
    names = ["alpha0"] + [f"a{k + 1}" for k in range(p)] + [f"b{k + 1}" for k in range(q)]
    for name, x, l, h in zip(names, res.x, lo, hi):
        if x - l < 1e-3:
            report.append(f"{name} at lower bound")
        elif h - x < 1e-3:
            report.append(f"{name} at upper bound")
    fit = run_filter(spec, series, mu, EL1sq)
    if not stationarity_check(spec, mu).ok:
        raise StationarityError("optimizer returned an inadmissible point")
    converged = bool(res.success) and not report
    return EstimationResult(
        spec=spec,
        loglik=fit.loglik,
        iterations=total_iter,
        converged=converged,
        constraint_report=report,
        initial=first,
        seed=seed,
        clamp_count=fit.clamp_count,
        n_evaluations=objective.n_eval,
        trace=trace,
        start_logliks=start_lls,
    )
