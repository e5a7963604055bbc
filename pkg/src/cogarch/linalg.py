"""Small dense matrix numerics used by the COGARCH state recursion.

Matrices and vectors are plain ``numpy`` arrays. All norms are taken with
respect to the Euclidean vector norm, so the induced matrix norm is the
spectral norm and the logarithmic norm is the largest eigenvalue of the
symmetric part.
"""

import numpy as np
import scipy.linalg

from .exceptions import InvalidOrderError, NumericalError, ShapeError

__all__ = [
    "as_matrix",
    "as_vector",
    "build_companion",
    "expm",
    "induced_norm",
    "log_norm",
    "linear_recursion_closed_form",
    "solve_checked",
    "MAX_CONDITION",
]

# refuse linear solves above this condition number
MAX_CONDITION = 1e12


def as_matrix(A, square=True):
    """Validate and return ``A`` as a finite 2-d float array."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] < 1 or A.shape[1] < 1:
        raise ShapeError(f"expected a non-empty 2-d array, got shape {A.shape}")
    if square and A.shape[0] != A.shape[1]:
        raise ShapeError(f"expected a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix entries must be finite")
    return A


def as_vector(x, dim=None):
    """Validate and return ``x`` as a finite 1-d float array."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size < 1:
        raise ShapeError(f"expected a non-empty 1-d array, got shape {x.shape}")
    if dim is not None and x.size != dim:
        raise ShapeError(f"expected length {dim}, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise ValueError("vector entries must be finite")
    return x


def build_companion(b):
    """Companion matrix of the autoregressive coefficients ``b = (b_1, ..., b_q)``.

    Ones on the superdiagonal, last row ``(-b_q, ..., -b_1)``.

    >>> build_companion([3.0, 2.0, 1.0])
    array([[ 0.,  1.,  0.],
           [ 0.,  0.,  1.],
           [-1., -2., -3.]])
    """
    b = np.atleast_1d(np.asarray(b, dtype=float))
    if b.ndim != 1 or b.size == 0:
        raise InvalidOrderError("coefficient vector b must be non-empty")
    if not np.all(np.isfinite(b)):
        raise InvalidOrderError("coefficients must be finite")
    q = b.size
    B = np.zeros((q, q))
    B[np.arange(q - 1), np.arange(1, q)] = 1.0
    B[-1, :] = -b[::-1]
    return B


def expm(A, t=1.0):
    """Matrix exponential ``exp(A t)``.

    Scaling and squaring with a Pade kernel (``scipy.linalg.expm``);
    ``t == 0`` returns the identity exactly.
    """
    A = as_matrix(A)
    if t == 0:
        return np.eye(A.shape[0])
    return scipy.linalg.expm(A * t)


def induced_norm(A):
    """Spectral norm: square root of the largest eigenvalue of ``A'A``."""
    A = as_matrix(A)
    lam = np.linalg.eigvalsh(A.T @ A)
    return float(np.sqrt(max(lam[-1], 0.0)))


def log_norm(A):
    """Logarithmic norm for the spectral norm, ``lambda_max((A + A') / 2)``."""
    A = as_matrix(A)
    return float(np.linalg.eigvalsh(0.5 * (A + A.T))[-1])


def linear_recursion_closed_form(a_seq, b_seq, y0):
    """Terminal value ``y_N`` of ``y_n = a_n y_{n-1} + b_n`` in closed form.

    Evaluates ``[prod_k a_{N-k}] y0 + b_N + sum_j [prod_{h<=j} a_{N+1-h}] b_{N-j}``
    without iterating.
    """
    a_seq = np.asarray(a_seq, dtype=float)
    b_seq = np.asarray(b_seq, dtype=float)
    if a_seq.shape != b_seq.shape or a_seq.ndim != 1:
        raise ShapeError("a_seq and b_seq must be 1-d with equal length")
    N = a_seq.size
    if N == 0:
        return float(y0)
    # tail[j-1] = a_N * a_{N-1} * ... * a_{N+1-j}
    tail = np.cumprod(a_seq[::-1])
    total = tail[-1] * y0 + b_seq[-1]
    if N > 1:
        total += np.sum(tail[: N - 1] * b_seq[N - 2 :: -1])
    return float(total)


def solve_checked(A, rhs):
    """Solve ``A X = rhs`` by LU with partial pivoting.

    Raises
    ------
    NumericalError
        If ``A`` is singular or its condition number exceeds ``MAX_CONDITION``.
    """
    A = as_matrix(A)
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise NumericalError(f"matrix is ill-conditioned (cond={cond:.3g})")
    lu, piv = scipy.linalg.lu_factor(A, check_finite=False)
    return scipy.linalg.lu_solve((lu, piv), rhs, check_finite=False)
