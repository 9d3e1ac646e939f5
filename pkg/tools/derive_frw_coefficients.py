#!/usr/bin/env python3
"""One-time symbolic reduction of the homogeneous-isotropic gravity action.

Starting from the supermetric form of the 3+1 action density,

    N * sqrt(h) * (K^{ij} G_{ijkl} K^{kl} + R3) / (16*pi*G),

restricted to h_ij = a(t)^2 delta_ij with zero shift over a fiducial
comoving volume V0, this script performs the Legendre transform to the
scale-factor Hamiltonian

    H_perp = g_aa(a) * p_a^2 + U(a)

and emits the coefficient table consumed by entroq.configspace.  The
intrinsic curvature of h_ij = a^2 delta_ij with spatial curvature sign k
is checked against R3 = 6k/a^2, and sqrt(h) against a^3, before writing.

Run from the repository root:  python tools/derive_frw_coefficients.py
"""

import json
import pathlib

import sympy as smp


def dewitt_lower(h):
    """G_ijkl = (h_ik h_jl + h_il h_jk - h_ij h_kl) / 2."""
    G = [[[[0] * 3 for _ in range(3)] for _ in range(3)] for _ in range(3)]
    for i in range(3):
        for j in range(3):
            for k in range(3):
                for l in range(3):
                    G[i][j][k][l] = smp.Rational(1, 2) * (
                        h[i, k] * h[j, l] + h[i, l] * h[j, k] - h[i, j] * h[k, l]
                    )
    return G


def main():
    a, N, G_newton, V0 = smp.symbols("a N G V0", positive=True, real=True)
    adot, kcurv, p_a = smp.symbols("adot k p_a", real=True)
    # h_ij = a^2 delta_ij, zero shift
    h = a**2 * smp.eye(3)
    hinv = h.inv()
    sqrth = smp.sqrt(h.det())
    assert smp.simplify(sqrth - a**3) == 0, "sqrt(h) != a^3"

    # extrinsic curvature K_ij = hdot_ij / (2N); raise with h^{-1}
    Kdn = (2 * a * adot / (2 * N)) * smp.eye(3)
    Kup = hinv * Kdn * hinv

    Glow = dewitt_lower(h)
    contraction = smp.S.Zero
    for i in range(3):
        for j in range(3):
            for k in range(3):
                for l in range(3):
                    contraction += Kup[i, j] * Glow[i][j][k][l] * Kup[k, l]
    contraction = smp.simplify(contraction)

    # intrinsic curvature of the constant-curvature slice
    R3 = 6 * kcurv / a**2

    lagrangian = smp.simplify(
        V0 * N * sqrth * (contraction + R3) / (16 * smp.pi * G_newton)
    )
    p_expr = smp.diff(lagrangian, adot)
    adot_of_p = smp.solve(smp.Eq(p_a, p_expr), adot)[0]
    hamiltonian = smp.simplify(
        (p_a * adot_of_p - lagrangian.subs(adot, adot_of_p)) / N
    )

    g_aa = smp.simplify(hamiltonian.coeff(p_a, 2))
    potential = smp.simplify(hamiltonian.coeff(p_a, 0))

    # factor out pi and G so the table stays exact
    g_aa_known = -8 * smp.pi * G_newton / (3 * V0 * a)
    pot_known = -3 * kcurv * V0 * a / (8 * smp.pi * G_newton)
    assert smp.simplify(g_aa - g_aa_known) == 0, f"kinetic mismatch: {g_aa}"
    assert smp.simplify(potential - pot_known) == 0, f"potential mismatch: {potential}"

    # scalar sector of the coupled model: homogeneous massless field with
    # L_phi = V0 * sqrt(h) * phidot^2 / (2N); Legendre transform again
    phidot, p_phi = smp.symbols("phidot p_phi", real=True)
    L_phi = V0 * sqrth * phidot**2 / (2 * N)
    p_phi_expr = smp.diff(L_phi, phidot)
    phidot_of_p = smp.solve(smp.Eq(p_phi, p_phi_expr), phidot)[0]
    H_phi = smp.simplify(
        (p_phi * phidot_of_p - L_phi.subs(phidot, phidot_of_p)) / N
    )
    g_phiphi = smp.simplify(H_phi.coeff(p_phi, 2))
    assert smp.simplify(g_phiphi - 1 / (2 * V0 * a**3)) == 0, f"scalar mismatch: {g_phiphi}"

    table = {
        "generated_by": "tools/derive_frw_coefficients.py",
        "hamiltonian_convention": "H_perp = g_aa(a) p_a^2 + U(a); lapse multiplies H_perp in the action",
        "kinetic_aa": {
            "rational": [-8, 3],
            "pi_power": 1,
            "grav_power": 1,
            "volume_power": -1,
            "a_power": -1,
        },
        "potential": {
            "rational": [-3, 8],
            "pi_power": -1,
            "grav_power": -1,
            "volume_power": 1,
            "a_power": 1,
            "curvature_power": 1,
        },
        "kinetic_phiphi": {
            "rational": [1, 2],
            "pi_power": 0,
            "grav_power": 0,
            "volume_power": -1,
            "a_power": -3,
        },
        "measure_a_power": 3,
        "three_curvature": {"rational": [6, 1], "a_power": -2, "curvature_power": 1},
    }
    out = pathlib.Path(__file__).resolve().parents[1] / "src" / "entroq" / "data"
    out.mkdir(parents=True, exist_ok=True)
    (out / "frw_reduction.json").write_text(json.dumps(table, indent=2) + "\n")
    print("kinetic  g_aa =", g_aa)
    print("potential U   =", potential)
    print("scalar  g_pp  =", g_phiphi)
    print("wrote", out / "frw_reduction.json")


if __name__ == "__main__":
    main()
