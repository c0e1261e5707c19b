"""Pure NumPy versions of the per-observation likelihood kernels.

Same signatures and return conventions as the compiled ``_kernels`` module;
used when the extension is unavailable or ``MISCLASSREG_PURE_PYTHON`` is set.
"""

import numpy as np

STATUS_OK = 0
STATUS_STRUCTURAL = 1
STATUS_OVERFLOW = 2

_LP_MAX = 700.0


def _log_sigmoid(t):
    a = np.log1p(np.exp(-np.abs(t)))
    return np.where(t >= 0, -a, t - a)


def joint_terms(y, lgy, logoff, lin0, lin1, logit, xstar, one_sided):
    """Log joint densities ``log Pr(Y|x) + log Pr(x|X*,Z)`` for x = 0, 1.

    Returns ``(a0, a1, status, index)``.
    """
    e0 = logoff + lin0
    e1 = logoff + lin1
    over = ~(np.isfinite(e0) & np.isfinite(e1) & (e0 <= _LP_MAX) & (e1 <= _LP_MAX))
    if over.any():
        return None, None, STATUS_OVERFLOW, int(np.flatnonzero(over)[0])
    a0 = y * e0 - np.exp(e0) - lgy + _log_sigmoid(-logit)
    a1 = y * e1 - np.exp(e1) - lgy + _log_sigmoid(logit)
    if one_sided:
        zero = xstar == 0
        a0 = np.where(zero, y * e0 - np.exp(e0) - lgy, a0)
        a1 = np.where(zero, -np.inf, a1)
    return a0, a1, STATUS_OK, -1


def loglik_and_phi(y, lgy, logoff, lin0, lin1, logit, xstar, x, queried, one_sided, want_phi):
    """Observed-data log-likelihood and (optionally) posterior Pr(X=1 | Y, X*, Z).

    Returns ``(loglik, phi1, status, index)``; ``phi1`` is None unless requested.
    """
    a0, a1, status, idx = joint_terms(y, lgy, logoff, lin0, lin1, logit, xstar, one_sided)
    if status != STATUS_OK:
        return np.nan, None, status, idx

    hi = np.maximum(a0, a1)
    lo = np.minimum(a0, a1)
    with np.errstate(invalid="ignore"):
        lse = hi + np.log1p(np.exp(lo - hi))

    obs = np.where(x == 1, a1, a0)
    contrib = np.where(queried, obs, lse)
    bad = queried & np.isneginf(obs)
    if bad.any():
        return np.nan, None, STATUS_STRUCTURAL, int(np.flatnonzero(bad)[0])

    phi1 = None
    if want_phi:
        phi1 = np.where(queried, (x == 1).astype(float), np.exp(a1 - lse))
    return float(np.sum(contrib)), phi1, STATUS_OK, -1


ROW_X0 = 0
ROW_X1 = 1
ROW_MIX = 2
ROW_ZERO = 3


def increment_sum(y, s0, s1, dt, mu0, mu1, t_ref, lp0_ref, lp1_ref, logw0, logw1, code):
    """Sum of per-row log-likelihood changes relative to a reference point.

    ``s0``/``s1`` are changes of the outcome linear predictor at x=0/1, ``dt``
    the change of the misclassification logit; ``mu*``, ``lp*_ref`` and
    ``logw*`` describe the reference point. ``code`` selects each row's
    contribution: queried x=0, queried x=1, mixture over x, or structural zero.
    """
    t = t_ref + dt
    a = np.log1p(np.exp(-np.abs(t)))
    ls1 = np.where(t >= 0, -a, t - a)
    ls0 = ls1 - t
    p0 = y * s0 - mu0 * np.expm1(s0)
    d0 = p0 + ls0 - lp0_ref
    d1 = y * s1 - mu1 * np.expm1(s1) + ls1 - lp1_ref
    v0 = logw0 + d0
    v1 = logw1 + d1
    top = np.maximum(v0, v1)
    with np.errstate(invalid="ignore"):
        mix = top + np.log1p(np.exp(np.minimum(v0, v1) - top))
    out = np.select([code == ROW_X0, code == ROW_X1, code == ROW_MIX], [d0, d1, mix], p0)
    return float(np.sum(out))
