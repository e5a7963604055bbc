"""Compound Poisson driving noise and the first-jump innovation construction.

A compound Poisson process ``L`` is described by a jump rate and a jump-size
law. Over a partition of ``[0, T]`` the first-jump approximation keeps, in
every cell, only the first jump whose magnitude exceeds a threshold ``m`` and
standardizes it into an innovation ``eps_i``.

Randomness always comes from an explicit ``numpy.random.Generator`` (PCG64,
64-bit). Functions accept either a generator or an integer seed.
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from .exceptions import DomainError, ShapeError

__all__ = [
    "NormalJumps",
    "TwoPointJumps",
    "CompoundPoissonSpec",
    "JumpPath",
    "Grid",
    "InnovationSeries",
    "TruncationSchedule",
    "make_rng",
    "sample_jump_path",
    "tail_mass",
    "first_jump_innovations",
    "truncation_sequence",
    "levy_moments",
    "check_schedule",
]

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _phi(x):
    return _INV_SQRT_2PI * math.exp(-0.5 * x * x)


def make_rng(seed):
    """Return a PCG64 ``Generator``; generators are passed through unchanged."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(seed))


@dataclass(frozen=True)
class NormalJumps:
    """Gaussian jump sizes ``N(mean, sd^2)``."""

    mean: float = 0.0
    sd: float = 1.0

    def __post_init__(self):
        if not (self.sd > 0 and math.isfinite(self.sd) and math.isfinite(self.mean)):
            raise DomainError("NormalJumps needs finite mean and sd > 0")

    def sample(self, rng, size):
        return rng.normal(self.mean, self.sd, size)

    def first_moment(self):
        return self.mean

    def second_moment(self):
        return self.mean**2 + self.sd**2

    def partial_moments(self, m):
        """``(P(|J| > m), E[J; |J| > m], E[J^2; |J| > m])`` in closed form."""
        mu, s = self.mean, self.sd
        hi = (m - mu) / s
        lo = (-m - mu) / s
        q_hi = float(ndtr(-hi))
        p_lo = float(ndtr(lo))
        f_hi, f_lo = _phi(hi), _phi(lo)
        prob = q_hi + p_lo
        m1 = mu * q_hi + s * f_hi + mu * p_lo - s * f_lo
        m2 = (
            mu * mu * q_hi + 2 * mu * s * f_hi + s * s * (hi * f_hi + q_hi)
            + mu * mu * p_lo - 2 * mu * s * f_lo + s * s * (p_lo - lo * f_lo)
        )
        return prob, m1, m2


@dataclass(frozen=True)
class TwoPointJumps:
    """Jump size ``x1`` with probability ``p1``, otherwise ``x2``."""

    x1: float = -1.0
    p1: float = 0.5
    x2: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.p1 <= 1.0:
            raise DomainError("p1 must lie in [0, 1]")
        if not (math.isfinite(self.x1) and math.isfinite(self.x2)):
            raise DomainError("jump sizes must be finite")

    def sample(self, rng, size):
        u = rng.random(size)
        return np.where(u < self.p1, self.x1, self.x2)

    def first_moment(self):
        return self.p1 * self.x1 + (1 - self.p1) * self.x2

    def second_moment(self):
        return self.p1 * self.x1**2 + (1 - self.p1) * self.x2**2

    def partial_moments(self, m):
        prob = m1 = m2 = 0.0
        for x, p in ((self.x1, self.p1), (self.x2, 1 - self.p1)):
            if abs(x) > m:
                prob += p
                m1 += p * x
                m2 += p * x * x
        return prob, m1, m2


@dataclass(frozen=True)
class CompoundPoissonSpec:
    """Rate ``lambda`` and jump-size law of a compound Poisson process."""

    rate: float
    jumps: object = field(default_factory=NormalJumps)

    def __post_init__(self):
        if not (self.rate > 0 and math.isfinite(self.rate)):
            raise DomainError("jump rate must be positive and finite")

    def to_dict(self):
        d = {"rate": self.rate, "jump_dist": type(self.jumps).__name__}
        d.update(self.jumps.__dict__)
        return d


@dataclass
class JumpPath:
    """Jump times in ``(0, T]`` and the matching jump sizes."""

    horizon: float
    times: np.ndarray
    sizes: np.ndarray
    seed: object = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.sizes = np.asarray(self.sizes, dtype=float)
        if self.times.shape != self.sizes.shape or self.times.ndim != 1:
            raise ShapeError("times and sizes must be 1-d with equal length")
        if self.times.size:
            if np.any(np.diff(self.times) <= 0):
                raise DomainError("jump times must be strictly increasing")
            if self.times[0] <= 0 or self.times[-1] > self.horizon:
                raise DomainError("jump times must lie in (0, T]")

    def __len__(self):
        return self.times.size


@dataclass
class Grid:
    """Partition ``0 = t_0 < t_1 < ... < t_N = T``."""

    knots: np.ndarray

    def __post_init__(self):
        self.knots = np.asarray(self.knots, dtype=float)
        k = self.knots
        if k.ndim != 1 or k.size < 2:
            raise DomainError("a grid needs at least two knots")
        if k[0] != 0.0:
            raise DomainError("grid must start at 0")
        if np.any(np.diff(k) <= 0):
            raise DomainError("grid knots must be strictly increasing")

    @classmethod
    def uniform(cls, T, dt):
        """Equally spaced grid with ``round(T / dt)`` cells."""
        if T <= 0 or dt <= 0:
            raise DomainError("T and dt must be positive")
        n = max(1, int(round(T / dt)))
        return cls(np.linspace(0.0, T, n + 1))

    @property
    def horizon(self):
        return float(self.knots[-1])

    @property
    def spacings(self):
        return np.diff(self.knots)

    @property
    def mesh(self):
        return float(np.max(self.spacings))

    @property
    def n_cells(self):
        return self.knots.size - 1


@dataclass
class InnovationSeries:
    """Per-cell first-jump innovations over a grid.

    ``raw_first_jump[i]`` is the first jump in cell ``i`` with ``|size| > m``
    (zero when there is none); ``epsilon = (raw - mean_v) / sd_eta``.
    """

    grid: Grid
    epsilon: np.ndarray
    raw_first_jump: np.ndarray
    first_jump_time: np.ndarray
    mean_v: np.ndarray
    sd_eta: np.ndarray
    threshold: float


@dataclass(frozen=True)
class TruncationSchedule:
    """Power-decay thresholds ``m_n = c (1 + n)^(-gamma)``."""

    c: float = 0.5
    gamma: float = 0.5

    def __post_init__(self):
        if not 0 < self.c <= 1:
            raise DomainError("c must lie in (0, 1] so that m_n <= 1")
        if not self.gamma > 0:
            raise DomainError("gamma must be positive")

    def __call__(self, n):
        return truncation_sequence(n, self)


def sample_jump_path(spec, T, seed):
    """Draw a compound Poisson path on ``(0, T]``.

    The jump count is Poisson(rate * T); given the count, times are uniform
    order statistics and sizes are i.i.d. from ``spec.jumps``.
    """
    if not T > 0:
        raise DomainError("horizon T must be positive")
    rng = make_rng(seed)
    n = rng.poisson(spec.rate * T)
    # T - U with U in [0, T) lands in (0, T]
    times = np.sort(T - rng.uniform(0.0, T, n))
    sizes = spec.jumps.sample(rng, n)
    keep = np.concatenate(([True], np.diff(times) > 0)) if n else np.zeros(0, bool)
    return JumpPath(T, times[keep], sizes[keep], seed=seed if isinstance(seed, int) else None)


def tail_mass(spec, m):
    """Levy tail mass ``lambda * P(|J| > m)``."""
    if m < 0:
        raise DomainError("threshold must be nonnegative")
    prob = spec.jumps.partial_moments(m)[0]
    return spec.rate * prob


def levy_moments(spec):
    """Mean and variance of ``L_1`` plus ``mu = lambda E[J^2]``."""
    ej = spec.jumps.first_moment()
    ej2 = spec.jumps.second_moment()
    mu = spec.rate * ej2
    return {"mean_L1": spec.rate * ej, "var_L1": mu, "mu_second": mu}


def truncation_sequence(n, schedule=None):
    """Threshold ``m_n = c (1 + n)^(-gamma)`` of the given schedule."""
    if schedule is None:
        schedule = TruncationSchedule()
    elif isinstance(schedule, dict):
        schedule = TruncationSchedule(**schedule)
    if n < 0:
        raise DomainError("index n must be nonnegative")
    return schedule.c * (1.0 + n) ** (-schedule.gamma)


def check_schedule(spec, schedule, meshes, indices, rtol=0.0):
    """Evaluate ``dt_n * tail_mass(m_n)^2`` along a refinement.

    Returns the product sequence and warns unless it is nonincreasing.
    """
    vals = np.array(
        [dt * tail_mass(spec, truncation_sequence(n, schedule)) ** 2 for dt, n in zip(meshes, indices)]
    )
    if np.any(np.diff(vals) > rtol * np.abs(vals[:-1])):
        warnings.warn(
            "dt_n * tail_mass(m_n)^2 is not decreasing along the refinement", RuntimeWarning, stacklevel=2
        )
    return vals


def conditional_standardizers(spec, m, dt):
    """Mean and standard deviation of the first qualifying jump in a cell.

    With ``p = 1 - exp(-dt * tail_mass(m))`` a jump with ``|J| > m`` occurs in
    the cell and its size follows the jump law restricted to ``|J| > m``.
    Returns ``(v, eta)`` arrays matching ``dt``.
    """
    dt = np.asarray(dt, dtype=float)
    prob, m1, m2 = spec.jumps.partial_moments(m)
    if prob <= 0:
        raise DomainError(f"no jump mass beyond threshold m={m}")
    p = -np.expm1(-dt * spec.rate * prob)
    v = p * (m1 / prob)
    var = p * (m2 / prob) - v * v
    if np.any(var <= 0):
        raise DomainError("degenerate first-jump law (zero variance)")
    return v, np.sqrt(var)


def first_jump_innovations(path, grid, m, spec):
    """First-jump innovations of ``path`` on the cells of ``grid``.

    Cell ``i`` is ``[t_{i-1}, t_i)``; the final cell also includes ``T``.
    """
    if not m > 0:
        raise DomainError("threshold m must be positive")
    if abs(grid.horizon - path.horizon) > 1e-12 * max(1.0, path.horizon):
        raise DomainError("grid and path horizons differ")
    knots = grid.knots
    n_cells = grid.n_cells
    raw = np.zeros(n_cells)
    tau = np.full(n_cells, np.inf)
    big = np.abs(path.sizes) > m
    times, sizes = path.times[big], path.sizes[big]
    cell = np.searchsorted(knots, times, side="right") - 1
    cell = np.minimum(cell, n_cells - 1)
    # first qualifying jump per cell: times are sorted, so the first index wins
    first = np.unique(cell, return_index=True)[1]
    raw[cell[first]] = sizes[first]
    tau[cell[first]] = times[first]
    v, eta = conditional_standardizers(spec, m, grid.spacings)
    eps = (raw - v) / eta
    return InnovationSeries(grid, eps, raw, tau, v, eta, float(m))
