"""Tridiagonal solves for the implicit steps (LAPACK banded solver)."""
from __future__ import annotations

import numpy as np
from scipy.linalg import LinAlgError, solve_banded

from .errors import NumericalBlowup


def solve_tridiagonal(lower, diag, upper, rhs) -> np.ndarray:
    """Solve ``lower[i] x[i-1] + diag[i] x[i] + upper[i] x[i+1] = rhs[i]``.

    ``lower[0]`` and ``upper[-1]`` are ignored. End rows that are plain
    identities (Dirichlet data) are moved to the right-hand side first, so the
    banded solver never pivots them against the much larger interior rows and
    the boundary values come back bit-exact. A singular or non-finite system
    raises NumericalBlowup.
    """
    a = np.asarray(lower, dtype=float)
    b = np.asarray(diag, dtype=float)
    c = np.asarray(upper, dtype=float)
    d = np.array(rhs, dtype=float)
    n = b.size
    x = np.empty(n)
    lo, hi = 0, n
    if n > 2 and b[0] == 1.0 and c[0] == 0.0:
        x[0] = d[0]
        d[1] -= a[1] * x[0]
        lo = 1
    if n > 2 and b[-1] == 1.0 and a[-1] == 0.0:
        x[-1] = d[-1]
        d[-2] -= c[-2] * x[-1]
        hi = n - 1
    m = hi - lo
    ab = np.zeros((3, m))
    ab[0, 1:] = c[lo:hi - 1]
    ab[1] = b[lo:hi]
    ab[2, :-1] = a[lo + 1:hi]
    try:
        x[lo:hi] = solve_banded((1, 1), ab, d[lo:hi], check_finite=True)
    except (LinAlgError, ValueError) as exc:
        raise NumericalBlowup(f"tridiagonal solve failed: {exc}") from exc
    if not np.all(np.isfinite(x)):
        raise NumericalBlowup("tridiagonal solve produced non-finite values")
    return x
