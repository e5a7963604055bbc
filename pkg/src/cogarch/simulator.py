"""COGARCH(p,q) model specification and path simulation.

Two path generators share the same state recursion
``Y <- (I + w e a') exp(B dt) Y + alpha0 w e``:

* :func:`simulate_exact` runs it at the jump times of a compound Poisson
  path with ``w = (jump size)^2``;
* :func:`simulate_discrete` runs it on a partition with
  ``w = eps_i^2 dt_i`` built from first-jump innovations.
"""

import csv
import io
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .exceptions import DomainError, InvalidOrderError, NonnegativityError, StationarityError

__all__ = [
    "CogarchSpec",
    "SimulatedPath",
    "StationarityReport",
    "stationarity_check",
    "stationary_mean",
    "simulate_exact",
    "simulate_discrete",
    "default_initial_state",
    "path_to_csv",
    "write_path_csv",
]


@dataclass(frozen=True)
class CogarchSpec:
    """Parameters ``(a, b, alpha0)`` of a COGARCH(p,q) model.

    ``a`` is zero-padded to length ``q = len(b)``. ``p`` defaults to the
    position of the last nonzero entry of ``a``.
    """

    a: tuple
    b: tuple
    alpha0: float
    p: int = None

    def __post_init__(self):
        b = tuple(float(x) for x in np.atleast_1d(self.b))
        a = [float(x) for x in np.atleast_1d(self.a)]
        q = len(b)
        if q < 1:
            raise InvalidOrderError("q must be at least 1")
        if len(a) > q:
            if any(x != 0 for x in a[q:]):
                raise InvalidOrderError("p must not exceed q")
            a = a[:q]
        p = self.p
        if p is None:
            nz = [k for k, x in enumerate(a) if x != 0]
            p = nz[-1] + 1 if nz else len(a)
        if not 1 <= p <= q:
            raise InvalidOrderError(f"need 1 <= p <= q, got p={p}, q={q}")
        if any(x != 0 for x in a[p:]):
            raise InvalidOrderError("a_{p+1}, ..., a_q must be zero")
        a = tuple(a + [0.0] * (q - len(a)))
        if not all(math.isfinite(x) for x in a + b):
            raise InvalidOrderError("coefficients must be finite")
        if a[p - 1] == 0 or b[-1] == 0:
            raise InvalidOrderError("degenerate orders: need a_p != 0 and b_q != 0")
        if not (self.alpha0 > 0 and math.isfinite(self.alpha0)):
            raise DomainError("alpha0 must be positive")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "p", int(p))
        object.__setattr__(self, "alpha0", float(self.alpha0))

    @property
    def q(self):
        return len(self.b)

    @property
    def a_vec(self):
        return np.array(self.a)

    @property
    def e(self):
        e = np.zeros(self.q)
        e[-1] = 1.0
        return e

    @property
    def B(self):
        return linalg.build_companion(self.b)

    @property
    def ea(self):
        """Rank-one matrix ``e a'`` (only the last row is nonzero)."""
        return np.outer(self.e, self.a_vec)

    def B_tilde(self, mu=1.0):
        return self.B + mu * self.ea

    def variance(self, Y):
        """``alpha0 + a'Y`` for a state vector or an array of states."""
        return self.alpha0 + np.asarray(Y) @ self.a_vec

    def to_dict(self):
        return {"p": self.p, "q": self.q, "a": list(self.a[: self.p]), "b": list(self.b), "alpha0": self.alpha0}


@dataclass
class StationarityReport:
    ok: bool
    reasons: list = field(default_factory=list)

    def __bool__(self):
        return self.ok


def stationarity_check(spec, mu=1.0):
    """Admissibility of ``spec`` for a driver with second moment ``mu``.

    Checks nonnegative ``a`` and positive ``b``, ``b_q - a_1 mu > 0`` and
    Hurwitz stability of both ``B`` and ``B + mu e a'``. Every failing
    condition is listed in ``reasons``.
    """
    if not mu > 0:
        raise DomainError("mu must be positive")
    reasons = []
    a = np.array(spec.a)
    b = np.array(spec.b)
    if np.any(a < 0):
        reasons.append("some a_k < 0")
    if np.any(b <= 0):
        reasons.append("some b_k <= 0")
    if not b[-1] - a[0] * mu > 0:
        reasons.append("b_q - a_1 mu <= 0")
    if np.max(np.linalg.eigvals(spec.B_tilde(mu)).real) >= 0:
        reasons.append("B + mu e a' has an eigenvalue with nonnegative real part")
    if np.max(np.linalg.eigvals(spec.B).real) >= 0:
        reasons.append("B has an eigenvalue with nonnegative real part")
    return StationarityReport(not reasons, reasons)


def stationary_mean(spec, mu=1.0):
    """Stationary mean of the state: ``alpha0 mu / (b_q - a_1 mu)`` times ``e_1``."""
    denom = spec.b[-1] - spec.a[0] * mu
    if not denom > 0:
        raise StationarityError(f"b_q - a_1 mu = {denom:.6g} <= 0")
    y = np.zeros(spec.q)
    y[0] = spec.alpha0 * mu / denom
    return y


def default_initial_state(spec, mu=1.0):
    """Stationary mean when the spec is admissible, else zero."""
    if stationarity_check(spec, mu).ok:
        return stationary_mean(spec, mu)
    return np.zeros(spec.q)


def _resolve_y0(spec, Y0, mu):
    if Y0 is None:
        return default_initial_state(spec, mu)
    if isinstance(Y0, str):
        if Y0 != "stationary-mean":
            raise DomainError(f"unknown initial-state policy {Y0!r}")
        return stationary_mean(spec, mu)
    return linalg.as_vector(Y0, spec.q).copy()


@dataclass
class SimulatedPath:
    """Recorded ``(t, G, V, Y)`` values of a COGARCH path.

    ``V`` holds ``alpha0 + a'Y`` with the post-jump state at each record;
    ``V_left`` holds the value built from the left limit ``Y_{t-}``, which
    differs from ``V`` only where ``is_jump`` is set.
    Between records the path is read as right-continuous and piecewise
    constant.
    """

    times: np.ndarray
    G: np.ndarray
    V: np.ndarray
    Y: np.ndarray
    kind: str
    spec: CogarchSpec
    is_jump: np.ndarray = None
    V_left: np.ndarray = None
    seed: object = None

    def __post_init__(self):
        n = self.times.size
        if self.is_jump is None:
            self.is_jump = np.zeros(n, dtype=bool)
        if self.V_left is None:
            self.V_left = self.V.copy()
        if not (self.G.size == self.V.size == self.Y.shape[0] == self.is_jump.size == n):
            raise ValueError("path columns have unequal lengths")

    @property
    def horizon(self):
        return float(self.times[-1])

    def __len__(self):
        return self.times.size

    def values(self):
        """``(n, 2)`` array of the compared pair ``(G, V)``."""
        return np.column_stack([self.G, self.V])

    def at(self, t):
        """Right-continuous step evaluation of ``(G, V)`` at times ``t``."""
        idx = np.searchsorted(self.times, np.asarray(t, dtype=float), side="right") - 1
        idx = np.clip(idx, 0, self.times.size - 1)
        return self.values()[idx]


class _ExpmCache:
    """Memoizes ``exp(B dt)`` by the exact float ``dt``."""

    def __init__(self, B, maxsize=4096):
        self.B = B
        self.maxsize = maxsize
        self._store = {}

    def __call__(self, dt):
        M = self._store.get(dt)
        if M is None:
            M = linalg.expm(self.B, dt)
            if len(self._store) < self.maxsize:
                self._store[dt] = M
        return M


def simulate_exact(spec, noise, sample_grid, Y0=None, mu=1.0, check=True):
    """Exact COGARCH path driven by the compound Poisson path ``noise``.

    The state decays as ``exp(B dt)`` between jumps and at a jump of size
    ``z`` moves to ``Y + (alpha0 + a'Y_-) z^2 e``; ``G`` jumps by
    ``sqrt(V_-) z``. Records are taken at the union of the grid knots and
    the jump times.

    Raises
    ------
    NonnegativityError
        If the pre-jump variance is negative at some jump.
    """
    if check:
        report = stationarity_check(spec, mu)
        if not report.ok:
            warnings.warn("spec fails stationarity check: " + "; ".join(report.reasons), RuntimeWarning, stacklevel=2)
    knots = sample_grid.knots
    if abs(knots[-1] - noise.horizon) > 1e-12 * max(1.0, noise.horizon):
        raise DomainError("sample grid and noise horizons differ")
    y = _resolve_y0(spec, Y0, mu)
    times = np.union1d(knots, noise.times)
    jump_at = np.full(times.size, np.nan)
    pos = np.searchsorted(times, noise.times)
    jump_at[pos] = noise.sizes
    is_jump = ~np.isnan(jump_at)

    n, q = times.size, spec.q
    a = spec.a_vec
    alpha0 = spec.alpha0
    propagate = _ExpmCache(spec.B)
    G = np.empty(n)
    V = np.empty(n)
    V_left = np.empty(n)
    Y = np.empty((n, q))
    g = 0.0
    t_prev = times[0]
    for k in range(n):
        t = times[k]
        if t > t_prev:
            y = propagate(t - t_prev) @ y
        v_left = alpha0 + a @ y
        V_left[k] = v_left
        if is_jump[k]:
            if v_left < 0:
                raise NonnegativityError(t, v_left)
            z = jump_at[k]
            g += math.sqrt(v_left) * z
            y = y.copy()
            y[-1] += v_left * z * z
        G[k] = g
        Y[k] = y
        V[k] = alpha0 + a @ y
        t_prev = t
    return SimulatedPath(times, G, V, Y, "exact", spec, is_jump, V_left, seed=noise.seed)


def simulate_discrete(spec, innovations, Y0=None, mu=1.0, squared_increments=None):
    """Discrete approximating process on the innovation grid.

    ``G_i = G_{i-1} + sqrt(V_{i-1} dt_i) eps_i`` and
    ``Y_i = (I + eps_i^2 dt_i e a') exp(B dt_i) Y_{i-1} + alpha0 eps_i^2 dt_i e``.

    ``squared_increments``, when given, replaces ``eps_i^2 dt_i`` in the
    state recursion (e.g. with true squared jumps on a jump-aligned grid).
    """
    grid = innovations.grid
    eps = np.asarray(innovations.epsilon, dtype=float)
    weights = eps * eps * grid.spacings
    if squared_increments is not None:
        weights = np.asarray(squared_increments, dtype=float)
        if weights.shape != eps.shape:
            raise DomainError("squared_increments must have one entry per cell")
    return _discrete_recursion(spec, grid.knots, weights, np.sqrt(grid.spacings) * eps, _resolve_y0(spec, Y0, mu))


def _discrete_recursion(spec, knots, weights, scaled_shocks, y):
    """Shared loop: ``weights[i]`` multiplies ``e a'``; ``G`` moves by ``sqrt(V) * scaled_shocks[i]``."""
    n = knots.size
    q = spec.q
    a = spec.a_vec
    alpha0 = spec.alpha0
    propagate = _ExpmCache(spec.B)
    dts = np.diff(knots)
    G = np.empty(n)
    V = np.empty(n)
    Y = np.empty((n, q))
    G[0] = 0.0
    Y[0] = y
    V[0] = alpha0 + a @ y
    for i in range(1, n):
        v_prev = V[i - 1]
        if v_prev < 0:
            raise NonnegativityError(knots[i - 1], v_prev)
        G[i] = G[i - 1] + math.sqrt(v_prev) * scaled_shocks[i - 1]
        w = weights[i - 1]
        y = propagate(dts[i - 1]) @ y
        y[-1] += w * (alpha0 + a @ y)
        Y[i] = y
        V[i] = alpha0 + a @ y
    return SimulatedPath(knots.copy(), G, V, Y, "discrete", spec)


def path_to_csv(path):
    """CSV text ``time,G,V,Y1..Yq,is_jump`` with 17 significant digits."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    q = path.Y.shape[1]
    writer.writerow(["time", "G", "V"] + [f"Y{k + 1}" for k in range(q)] + ["is_jump"])
    fmt = "{:.17g}".format
    for k in range(len(path)):
        row = [fmt(path.times[k]), fmt(path.G[k]), fmt(path.V[k])]
        row += [fmt(x) for x in path.Y[k]]
        row.append("1" if path.is_jump[k] else "0")
        writer.writerow(row)
    return buf.getvalue()


def write_path_csv(path, filename):
    text = path_to_csv(path)
    with open(filename, "w", newline="") as fh:
        fh.write(text)
    return text
