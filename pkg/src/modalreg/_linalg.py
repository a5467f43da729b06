import warnings

import numpy as np
from scipy import linalg

from .errors import NumericalError


def spd_solve(A, b, what="system", rtol=1e-8):
    """Solve ``A x = b`` for symmetric positive (semi)definite ``A``.

    Cholesky first; if the factorisation fails, fall back to a pivoted
    least-squares solve.  The residual is checked against ``rtol`` relative
    to ``|b|`` and a :class:`NumericalError` carrying a condition-number
    estimate is raised when it is not met.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", linalg.LinAlgWarning)
            c = linalg.cho_factor(A, lower=True, check_finite=False)
            x = linalg.cho_solve(c, b, check_finite=False)
    except (linalg.LinAlgError, linalg.LinAlgWarning, ValueError):
        x = linalg.lstsq(A, b, lapack_driver="gelsy", check_finite=False)[0]
    if not np.all(np.isfinite(x)):
        raise NumericalError(f"{what}: non-finite solution", cond=_cond(A))
    scale = np.linalg.norm(b)
    res = np.linalg.norm(A @ x - b)
    if res > rtol * max(scale, np.finfo(float).tiny):
        raise NumericalError(
            f"{what}: residual {res:.3g} exceeds tolerance {rtol:g} * |rhs| ({scale:.3g})",
            cond=_cond(A), residual=res,
        )
    return x


def _cond(A):
    try:
        return float(np.linalg.cond(A))
    except np.linalg.LinAlgError:
        return float("inf")
