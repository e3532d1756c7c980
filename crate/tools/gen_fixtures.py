#!/usr/bin/env python3
"""Regenerate the symbolic fixtures under crates/core/fixtures.

Everything is derived from the Kähler potential in the holomorphic leaf
chart w = log(z1^b z2^-a), whose real part t satisfies
    t = (b log s - a log(1 - s)) / 2,   ds/dt = 2 s (1 - s) / N(s),
with N(s) = a s + b (1 - s). Radial functions obey d/dt = (ds/dt) d/ds and
    g      = Psi_tt / 4                 (metric component g_{w wbar})
    R      = -(log g)_tt / (4 g)        (scalar curvature, Kähler trace)
    Lap f  = f_tt / (4 g)
    |df|^2 = f_t^2 / (4 g)
The volume density is the pushforward of eta ^ d eta, normalised to 4 pi.

Usage: python3 tools/gen_fixtures.py [output_dir]
"""

import sys
from pathlib import Path

import sympy as sp

s = sp.symbols("s", positive=True)
DIGITS = 12
SAMPLES = [sp.Rational(k, 40) for k in range(1, 40)] + [sp.Rational(1, 1000), sp.Rational(999, 1000)]
SAMPLES.sort()


def model(a, b):
    n = a * s + b * (1 - s)
    c = a + b
    sigma = 2 * s * (1 - s) / n
    psi0 = -(c / b) * sp.log(1 - s)
    return n, c, sigma, psi0


def dt(expr, sigma):
    return sigma * sp.diff(expr, s)


def geometry(a, b, phi):
    n, c, sigma, psi0 = model(a, b)
    pot = psi0 + phi
    pot_t = dt(pot, sigma)
    g = dt(pot_t, sigma) / 4
    log_g_t = dt(sp.log(g), sigma)
    r = -dt(log_g_t, sigma) / (4 * g)
    g0 = dt(dt(psi0, sigma), sigma) / 4
    return n, c, sigma, g, g0, r


def density(a, b):
    n, _, _, _ = model(a, b)
    # eta = (s dth1 + (1 - s) dth2) / N; eta ^ d eta = (B A' - A B') ds dth1 dth2.
    A, B = s / n, (1 - s) / n
    raw = sp.simplify(B * sp.diff(A, s) - A * sp.diff(B, s))
    total = sp.integrate(raw, (s, 0, 1))
    return sp.simplify(4 * sp.pi * raw / total)


def fmt(x):
    return sp.N(x, DIGITS + 4).__format__(f".{DIGITS - 1}e")


def write_table(path, oracle, columns, rows):
    with open(path, "w") as fh:
        fh.write(f"# oracle: sympy {sp.__version__} ({oracle})\n")
        fh.write("# columns: " + " ".join(columns) + "\n")
        for row in rows:
            fh.write(" ".join(fmt(v) for v in row) + "\n")


def background_table(out, name, a, b):
    n, c, sigma, g, g0, r = geometry(a, b, 0)
    rho = density(a, b)
    rows = []
    for sv in SAMPLES:
        rows.append([sv, r.subs(s, sv), (2 * g).subs(s, sv), rho.subs(s, sv)])
    write_table(out / name, f"background curvature of the model sphere a={a} b={b}",
                ["s", "scalar", "theta", "density"], rows)


PERT = sp.Rational(1, 10) * (s**2 - s**3) + sp.Rational(1, 20) * s
TEST_F = sp.cos(3 * s) + s**2


def perturbed_table(out, name, a, b):
    n, c, sigma, g, g0, r = geometry(a, b, PERT)
    f_t = dt(TEST_F, sigma)
    lap = dt(f_t, sigma) / (4 * g)
    grad = f_t**2 / (4 * g)
    rel = g / g0
    rows = []
    for sv in SAMPLES:
        rows.append([sv, rel.subs(s, sv), r.subs(s, sv), lap.subs(s, sv), grad.subs(s, sv)])
    write_table(out / name,
                f"potential 0.1(s^2-s^3)+0.05s on a={a} b={b}; test function cos(3s)+s^2",
                ["s", "rel_det", "scalar", "laplacian", "grad_norm_sq"], rows)


def constants(out):
    r = sp.Rational(1, 2)
    a_b = sp.sqrt(2)
    lines = {
        # Round quotient is the unit 2-sphere; polar angle psi = 2 asin(sqrt s).
        "round_volume": 4 * sp.pi,
        "round_diameter": sp.pi,
        "round_distance_0.1_0.7": 2 * sp.asin(sp.sqrt(sp.Rational(7, 10))) - 2 * sp.asin(sp.sqrt(sp.Rational(1, 10))),
        "round_noncollapse_pole_0.5": 2 * sp.pi * (1 - sp.cos(r)) / r**2,
        "round_noncollapse_equator_0.5": 4 * sp.pi * sp.sin(r) / r**2,
        "weighted_volume": 4 * sp.pi,
    }
    # Quotient diameter of the weighted sphere: int_0^1 sqrt(c / (2 N s (1 - s))) ds.
    n, c, _, _ = model(1, a_b)
    diam = sp.Integral(sp.sqrt(c / (2 * n * s * (1 - s))), (s, 0, 1))
    lines["weighted_diameter"] = diam.evalf(DIGITS + 4)
    # Level-set area per unit distance: density / (dd/ds).
    rho = density(1, a_b)
    for sv in (sp.Rational(3, 10), sp.Rational(1, 2)):
        area = rho / sp.sqrt(c / (2 * n * s * (1 - s)))
        lines[f"weighted_orbit_area_{float(sv)}"] = area.subs(s, sv)
    for rv in (0.3, 0.7):
        lines[f"round_cutoff_entropy_pole_{rv}"] = cutoff_entropy_cap(rv)
    with open(out / "constants.txt", "w") as fh:
        fh.write(f"# oracle: sympy {sp.__version__} (closed forms of the model quotients)\n")
        for k, v in lines.items():
            fh.write(f"{k} {fmt(v)}\n")


def cutoff_entropy_cap(r):
    """W(g, f, r^2) on the unit sphere for the polar-cap cutoff of radius r.

    Kähler traces: R = 1 and |grad f|^2 is half the Riemannian value.
    """
    import numpy as np
    from scipy.integrate import quad

    def h(t):
        return np.exp(-1.0 / t) if t > 0 else 0.0

    def dh(t):
        return np.exp(-1.0 / t) / t**2 if t > 0 else 0.0

    def cut(x):
        a, b = h(1 - x), h(x - 0.5)
        if b == 0:
            return 1.0, 0.0
        if a == 0:
            return 0.0, 0.0
        return a / (a + b), (-dh(1 - x) * b - a * dh(x - 0.5)) / (a + b) ** 2

    tau = r * r
    area = lambda t: 2 * np.pi * np.sin(t)
    mass = quad(lambda t: cut(t / r)[0] ** 2 * area(t), 0, r, points=[r / 2], limit=200, epsabs=1e-14)[0]
    amp = np.sqrt(4 * np.pi * r * r / mass / (4 * np.pi * tau))
    shift = np.log(4 * np.pi * tau) + 2

    def integrand(t):
        v, dv = cut(t / r)
        w2 = (amp * v) ** 2
        grad = 0.5 * (amp * dv / r) ** 2
        log_term = w2 * np.log(w2) if w2 > 0 else 0.0
        return (tau * (w2 + 4 * grad) - log_term - shift * w2) * area(t)

    return sp.Float(quad(integrand, 0, r, points=[r / 2], limit=400, epsabs=1e-14)[0], 17)


def main():
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).resolve().parent.parent / "crates/core/fixtures"
    out.mkdir(parents=True, exist_ok=True)
    background_table(out, "round_background.txt", 1, 1)
    background_table(out, "weighted_background.txt", 1, sp.sqrt(2))
    perturbed_table(out, "round_perturbed.txt", 1, 1)
    perturbed_table(out, "weighted_perturbed.txt", 1, sp.sqrt(2))
    constants(out)


if __name__ == "__main__":
    main()
