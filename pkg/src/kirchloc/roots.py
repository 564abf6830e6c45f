"""Bracketed scalar root refinement shared by the spectral searches."""

import math

import numpy as np

from .errors import RootFindingFailure


def sign_changes(y):
    """Indices ``i`` with ``y[i]`` and ``y[i+1]`` of strictly opposite sign."""
    y = np.asarray(y, dtype=float)
    s = np.sign(y)
    return np.nonzero(s[:-1] * s[1:] < 0)[0]


def refine_root(f, a, b, fa=None, fb=None, xtol=1e-10, bisect_width=1e-6, maxiter=400):
    """Locate a root of ``f`` inside the sign-changing bracket ``[a, b]``.

    Bisection first shrinks the bracket to ``bisect_width``; Illinois-style
    regula falsi (a secant step that keeps the bracket) then finishes to
    ``xtol``. The returned point is within ``xtol`` of a sign change.
    """
    if fa is None:
        fa = f(a)
    if fb is None:
        fb = f(b)
    if fa == 0.0:
        return a
    if fb == 0.0:
        return b
    if not (math.isfinite(fa) and math.isfinite(fb)) or fa * fb > 0:
        raise RootFindingFailure(f"[{a}, {b}] does not bracket a root (f = {fa}, {fb})")
    if a > b:
        a, b, fa, fb = b, a, fb, fa

    it = 0
    while b - a > bisect_width:
        c = 0.5 * (a + b)
        fc = f(c)
        it += 1
        if fc == 0.0:
            return c
        if fa * fc < 0:
            b, fb = c, fc
        else:
            a, fa = c, fc
        if it > maxiter:
            raise RootFindingFailure("bisection did not converge")

    side = 0
    while b - a > xtol:
        c = b - fb * (b - a) / (fb - fa)
        if not (a < c < b):
            c = 0.5 * (a + b)
        fc = f(c)
        it += 1
        if fc == 0.0 or not math.isfinite(fc):
            if fc == 0.0:
                return c
            raise RootFindingFailure(f"non-finite function value at {c}")
        if fa * fc < 0:
            b, fb = c, fc
            if side == -1:
                fa *= 0.5
            side = -1
        else:
            a, fa = c, fc
            if side == 1:
                fb *= 0.5
            side = 1
        if it > maxiter:
            raise RootFindingFailure(f"root refinement stalled at width {b - a:.3e}")
    return 0.5 * (a + b)
