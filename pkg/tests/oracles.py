"""Independent reference values (mpmath quadrature and closed forms).

Nothing here imports dbarlab.  The tests freeze the numbers these functions
produce and also recompute a few of them.
"""
from __future__ import annotations

import mpmath as mp

mp.mp.dps = 30


def ap_power_centered(a, p):
    """A_p quantity of |z|^a on a disc centred at 0 (any radius)."""
    b = a / (1 - p)
    return 2 / (a + 2) * (2 / (b + 2)) ** (p - 1)


def ap_power_disc(a, p, center, radius):
    """A_p quantity of |z|^a on a disc containing 0, via exact radial integrals."""
    c = mp.mpc(center)
    b = mp.mpf(a) / (1 - p)

    def rmax(phi):
        proj = mp.re(mp.conj(c) * mp.expj(phi))
        return proj + mp.sqrt(proj**2 + radius**2 - abs(c) ** 2)

    area = mp.pi * radius**2
    i1 = mp.quad(lambda t: rmax(t) ** (a + 2) / (a + 2), [0, mp.pi / 2, mp.pi, 3 * mp.pi / 2, 2 * mp.pi])
    i2 = mp.quad(lambda t: rmax(t) ** (b + 2) / (b + 2), [0, mp.pi / 2, mp.pi, 3 * mp.pi / 2, 2 * mp.pi])
    return (i1 / area) * (i2 / area) ** (p - 1)


def riesz_one_unit_disc(rho, alpha=1):
    """int_{|zeta|<1} |zeta - z|^{-alpha} dA at |z| = rho."""
    def d(phi):
        return -rho * mp.cos(phi) + mp.sqrt(1 - rho**2 * mp.sin(phi) ** 2)

    return mp.quad(lambda t: d(t) ** (2 - alpha) / (2 - alpha), [0, mp.pi, 2 * mp.pi])


def lens_area(d, r1, r2):
    """Area of the intersection of discs of radii r1, r2 with centres d apart."""
    d, r1, r2 = mp.mpf(d), mp.mpf(r1), mp.mpf(r2)
    if d >= r1 + r2:
        return mp.mpf(0)
    if d <= abs(r1 - r2):
        return mp.pi * min(r1, r2) ** 2
    a1 = r1**2 * mp.acos((d**2 + r1**2 - r2**2) / (2 * d * r1))
    a2 = r2**2 * mp.acos((d**2 + r2**2 - r1**2) / (2 * d * r2))
    a3 = mp.sqrt((-d + r1 + r2) * (d + r1 - r2) * (d - r1 + r2) * (d + r1 + r2)) / 2
    return a1 + a2 - a3


def disc_power_norm(beta, q_weight_extra=0):
    """int over the unit disc of |z - 1|^beta dA (beta > -2)."""
    return mp.quad(lambda r: r ** (beta + 1) * (2 * mp.pi - 2 * mp.acos(-r / 2)), [0, 1, 2])


def contour_norm(q, disc_integral):
    """(int_0^1 (2 pi r^2)^q dr * disc_integral)^(1/q)."""
    return ((2 * mp.pi) ** q / (2 * q + 1) * disc_integral) ** (1 / mp.mpf(q))


def ex35_disc_integral(q, p):
    """int over 1/2 < |w| < 1 of |w (w - 1)^{-2/p}|^q |w|^2 dA, polar about w = 0."""
    def inner(r):
        return mp.quad(lambda t: r ** (q + 3) * abs(r * mp.expj(t) - 1) ** (-2 * q / p), [0, mp.pi, 2 * mp.pi])

    return mp.quad(inner, [0.5, 0.9, 0.99, 1])


def bump_integral(rho):
    """int (1 - |w|^2/rho^2)^4 dA = pi rho^2 / 5."""
    return mp.pi * rho**2 / 5
