"""Adaptive Simpson quadrature and bisection."""

import math

from .errors import QuadratureFailure

QUAD_TOL = 1e-10
ROOT_TOL = 1e-12
MAX_EVALS = 10**6


class _Counter:
    __slots__ = ("n",)

    def __init__(self):
        self.n = 0


def _simpson_segment(f, a, b, tol, counter, max_evals):
    # the right end is sampled just inside so right-continuous jumps at b are
    # not picked up from the wrong side
    fa, fb = f(a), f(math.nextafter(b, a))
    m = 0.5 * (a + b)
    fm = f(m)
    counter.n += 3
    whole = (b - a) * (fa + 4.0 * fm + fb) / 6.0
    total = 0.0
    stack = [(a, b, fa, fm, fb, whole, tol)]
    while stack:
        a, b, fa, fm, fb, whole, eps = stack.pop()
        m = 0.5 * (a + b)
        lm = 0.5 * (a + m)
        rm = 0.5 * (m + b)
        flm, frm = f(lm), f(rm)
        counter.n += 2
        if counter.n > max_evals:
            raise QuadratureFailure(
                f"tolerance {tol:g} not reached within {max_evals} evaluations")
        left = (m - a) * (fa + 4.0 * flm + fm) / 6.0
        right = (b - m) * (fm + 4.0 * frm + fb) / 6.0
        diff = left + right - whole
        if abs(diff) <= 15.0 * eps or b - a < 1e-13:
            total += left + right + diff / 15.0
        else:
            stack.append((a, m, fa, flm, fm, left, 0.5 * eps))
            stack.append((m, b, fm, frm, fb, right, 0.5 * eps))
    return total


def integrate(f, a, b, tol=QUAD_TOL, breaks=(), max_evals=MAX_EVALS):
    """Integrate f over [a, b] by adaptive Simpson.

    Interior points in ``breaks`` split the interval so that kinks and jumps
    of a piecewise-smooth (right-continuous) integrand sit on segment
    boundaries.  The absolute
    tolerance is shared among segments in proportion to their length.
    """
    if b == a:
        return 0.0
    sign = 1.0
    if b < a:
        a, b, sign = b, a, -1.0
    pts = [a] + sorted(x for x in set(breaks) if a < x < b) + [b]
    length = b - a
    counter = _Counter()
    total = 0.0
    for lo, hi in zip(pts[:-1], pts[1:]):
        if hi <= lo:
            continue
        total += _simpson_segment(f, lo, hi, tol * (hi - lo) / length,
                                  counter, max_evals)
    return sign * total


def bisect(g, lo, hi, tol=ROOT_TOL, max_iter=200):
    """Root of a monotone function g on [lo, hi] by plain bisection.

    The sign of g at ``lo`` fixes the orientation.  If g does not change sign
    the endpoint closer to zero is returned.
    """
    glo = g(lo)
    if glo == 0.0:
        return lo
    ghi = g(hi)
    if ghi == 0.0:
        return hi
    if (glo > 0) == (ghi > 0):
        return lo if abs(glo) <= abs(ghi) else hi
    pos_lo = glo > 0
    for _ in range(max_iter):
        if hi - lo <= tol:
            break
        mid = 0.5 * (lo + hi)
        gm = g(mid)
        if gm == 0.0:
            return mid
        if (gm > 0) == pos_lo:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def bisect_predicate(pred, lo, hi, tol=ROOT_TOL, max_iter=200):
    """Boundary of a predicate that is False at lo and True at hi."""
    for _ in range(max_iter):
        if hi - lo <= tol:
            break
        mid = 0.5 * (lo + hi)
        if pred(mid):
            hi = mid
        else:
            lo = mid
    return lo, hi


def geometric_sum(rho, n):
    """1 + rho + ... + rho**n, accumulated Horner-style (n >= 0)."""
    s = 1.0
    for _ in range(n):
        s = 1.0 + rho * s
    return s


def is_inf(x):
    return isinstance(x, float) and math.isinf(x)
