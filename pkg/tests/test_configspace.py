import json

import numpy as np
import pytest

from entroq.configspace import (
    ConfigSpace,
    LatticeSpec,
    SuperMetricSample,
    build_coupled_space,
    build_frw_space,
    build_scalar_lattice_space,
    contraction_identity_error,
    dewitt_supermetric,
    rank4_to_matrix,
    space_from_json,
    space_to_json,
    sym_tensor_basis,
)
from entroq.constants import PhysicalConstants


def random_spd(rng):
    A = rng.normal(size=(3, 3))
    return A @ A.T + 0.5 * np.eye(3)


# ---------------------------------------------------------------------------
# supermetric algebra
# ---------------------------------------------------------------------------

def test_supermetric_identity_point_values():
    s = dewitt_supermetric(np.eye(3))
    assert s.lower[0, 1, 0, 1] == pytest.approx(0.5)
    assert s.lower[0, 0, 1, 1] == pytest.approx(-0.5)
    assert s.lower[0, 0, 0, 0] == pytest.approx(0.5)


def test_supermetric_contraction_at_identity_exact():
    s = dewitt_supermetric(np.eye(3))
    assert contraction_identity_error(s) == 0.0


def test_supermetric_pair_symmetry():
    rng = np.random.default_rng(7)
    s = dewitt_supermetric(random_spd(rng))
    assert np.allclose(s.lower, np.einsum("klij->ijkl", s.lower))
    assert np.allclose(s.upper, np.einsum("klij->ijkl", s.upper))


def test_contraction_identity_100_random_spd():
    rng = np.random.default_rng(20260810)
    worst = 0.0
    for _ in range(100):
        h = random_spd(rng)
        err = contraction_identity_error(dewitt_supermetric(h))
        scale = max(1.0, float(np.abs(h).max()) ** 2)
        worst = max(worst, err / scale)
    assert worst < 1e-12


def test_contraction_identity_bruteforce_loop_oracle():
    # exhaustive loop over all index pairs, independent of einsum
    rng = np.random.default_rng(99)
    h = random_spd(rng)
    s = dewitt_supermetric(h)
    for i in range(3):
        for j in range(3):
            for m in range(3):
                for n in range(3):
                    acc = 0.0
                    for k in range(3):
                        for l in range(3):
                            acc += s.lower[i, j, k, l] * s.upper[k, l, m, n]
                    expect = 0.5 * ((i == m) * (j == n) + (i == n) * (j == m))
                    assert acc == pytest.approx(expect, abs=5e-13 * max(1.0, np.abs(h).max()) ** 2)


def test_supermetric_rejects_bad_input():
    with pytest.raises(ValueError):
        dewitt_supermetric(np.array([[1.0, 2.0, 0], [0, 1, 0], [0, 0, 1]]))
    with pytest.raises(ValueError):
        dewitt_supermetric(-np.eye(3))


def test_sym_basis_orthonormal():
    b = sym_tensor_basis()
    gram = np.einsum("aij,bij->ab", b, b)
    assert np.allclose(gram, np.eye(6), atol=1e-14)


def test_rank4_matrix_inverse_pair():
    rng = np.random.default_rng(3)
    h = random_spd(rng)
    s = dewitt_supermetric(h)
    lo = rank4_to_matrix(s.lower)
    up = rank4_to_matrix(s.upper)
    assert np.allclose(lo @ up, np.eye(6), atol=1e-11 * max(1.0, np.abs(h).max()) ** 2)


# ---------------------------------------------------------------------------
# scalar lattice
# ---------------------------------------------------------------------------

def test_lattice_single_site_massless_zero_potential():
    sp = build_scalar_lattice_space(LatticeSpec(1, 1.0), 0.0, (-3, 3, 21))
    assert np.all(sp.potential_grid() == 0.0)


def test_lattice_single_site_massive_half_phi_sq():
    sp = build_scalar_lattice_space(LatticeSpec(1, 1.0), 1.0, (-3, 3, 21))
    phi = sp.axes[0].nodes
    assert np.allclose(sp.potential_grid(), 0.5 * phi**2)


def edge_sum_oracle(phi, dx, mass):
    """Direct edge-sum of the trapezoid discretization, written longhand."""
    n = len(phi)
    total = 0.0
    for i in range(n):
        total += dx * 0.5 * mass**2 * phi[i] ** 2
        if n > 1:
            d = (phi[(i + 1) % n] - phi[i]) / dx
            total += dx * 0.5 * d * d
    return total


@pytest.mark.parametrize("n", [1, 2, 3])
def test_lattice_potential_matches_edge_sum_oracle(n):
    rng = np.random.default_rng(100 + n)
    dx = 0.7
    sp = build_scalar_lattice_space(LatticeSpec(n, dx), 0.0, (-2, 2, 5))
    spm = build_scalar_lattice_space(LatticeSpec(n, dx), 1.3, (-2, 2, 5))
    for _ in range(50):
        phi = rng.uniform(-2, 2, size=n)
        idx = tuple(int(np.argmin(np.abs(ax.nodes - p))) for ax, p in zip(sp.axes, phi))
        snapped = np.array([ax.nodes[i] for ax, i in zip(sp.axes, idx)])
        assert sp.potential_grid()[idx] == pytest.approx(
            edge_sum_oracle(snapped, dx, 0.0), rel=1e-12, abs=1e-12
        )
        assert spm.potential_grid()[idx] == pytest.approx(
            edge_sum_oracle(snapped, dx, 1.3), rel=1e-12, abs=1e-12
        )


def test_lattice_kinetic_positive_definite():
    sp = build_scalar_lattice_space(LatticeSpec(3, 0.5), 1.0, (-1, 1, 3))
    kin = np.asarray(sp.kinetic)
    assert np.all(np.linalg.eigvalsh(kin) > 0)
    assert np.allclose(kin, np.eye(3) / (2 * 0.5))


def test_lattice_rejects_bad_args():
    with pytest.raises(ValueError):
        LatticeSpec(0, 1.0)
    with pytest.raises(ValueError):
        LatticeSpec(2, -1.0)
    with pytest.raises(ValueError):
        build_scalar_lattice_space(LatticeSpec(1, 1.0), -1.0, (-1, 1, 5))
    with pytest.raises(ValueError):
        build_scalar_lattice_space(LatticeSpec(1, 1.0), 0.0, (-np.inf, 1, 5))


# ---------------------------------------------------------------------------
# FRW minisuperspace
# ---------------------------------------------------------------------------

def test_frw_flat_potential_vanishes():
    sp = build_frw_space(0, 1.0, (0.5, 3.0, 41))
    assert np.all(sp.potential_grid() == 0.0)


def test_frw_closed_potential_tracks_curvature_oracle():
    # symbolic curvature oracle: R3 = 6k/a^2, so U = -sqrt(h) R3/(16 pi G) * V0
    consts = PhysicalConstants(grav=2.0)
    v0 = 1.7
    sp = build_frw_space(1, v0, (0.5, 3.0, 41), consts)
    a = sp.axes[0].nodes
    oracle = -v0 * a**3 * (6.0 / a**2) / (16 * np.pi * consts.grav)
    assert np.allclose(sp.potential_grid(), oracle, rtol=1e-12)


def test_frw_measure_cubes():
    sp = build_frw_space(1, 1.0, (1.0, 2.0, 3))
    mu = sp.measure_grid()
    assert mu[-1] / mu[0] == pytest.approx(8.0, rel=1e-14)


def test_frw_kinetic_negative_definite():
    sp = build_frw_space(-1, 2.0, (0.2, 5.0, 17))
    assert np.all(sp.kinetic_diag(0) < 0)


def test_frw_rejects_nonpositive_a():
    with pytest.raises(ValueError):
        build_frw_space(0, 1.0, (0.0, 2.0, 5))
    with pytest.raises(ValueError):
        build_frw_space(2, 1.0, (0.5, 2.0, 5))


def test_frw_consistent_with_supermetric_contraction():
    # contract the rank-4 supermetric along the isotropic velocity direction
    # and redo the Legendre transform numerically at 10 scale factors
    consts = PhysicalConstants(grav=1.3)
    v0 = 0.9
    sp = build_frw_space(1, v0, (0.4, 3.2, 10), consts)
    for i, a in enumerate(sp.axes[0].nodes):
        s = dewitt_supermetric(a**2 * np.eye(3))
        vel = np.eye(3) / a**3  # dK^{ij}/dadot at N = 1
        quad = np.einsum("ij,ijkl,kl->", vel, s.lower, vel)
        mass_matrix = 2.0 * (v0 * a**3 / (16 * np.pi * consts.grav)) * quad
        g_aa = 1.0 / (2.0 * mass_matrix)
        assert sp.kinetic_diag(0)[i] == pytest.approx(g_aa, rel=1e-12)


def test_frw_table_matches_fresh_symbolic_reduction():
    sympy = pytest.importorskip("sympy")
    a, N, G, V0 = sympy.symbols("a N G V0", positive=True)
    adot, k, p = sympy.symbols("adot k p", real=True)
    h = a**2 * sympy.eye(3)
    Kdn = (a * adot / N) * sympy.eye(3)
    hinv = h.inv()
    Kup = hinv * Kdn * hinv
    quad = sympy.S.Zero
    for i in range(3):
        for j in range(3):
            for kk in range(3):
                for l in range(3):
                    Glow = sympy.Rational(1, 2) * (
                        h[i, kk] * h[j, l] + h[i, l] * h[j, kk] - h[i, j] * h[kk, l]
                    )
                    quad += Kup[i, j] * Glow * Kup[kk, l]
    L = V0 * N * sympy.sqrt(h.det()) * (sympy.simplify(quad) + 6 * k / a**2) / (16 * sympy.pi * G)
    pexpr = sympy.diff(L, adot)
    sol = sympy.solve(sympy.Eq(p, pexpr), adot)[0]
    H = sympy.simplify((p * sol - L.subs(adot, sol)) / N)
    g_aa = sympy.simplify(H.coeff(p, 2))
    U = sympy.simplify(H.coeff(p, 0))
    assert sympy.simplify(g_aa + 8 * sympy.pi * G / (3 * V0 * a)) == 0
    assert sympy.simplify(U + 3 * k * V0 * a / (8 * sympy.pi * G)) == 0


# ---------------------------------------------------------------------------
# coupled space
# ---------------------------------------------------------------------------

def test_coupled_scalar_potential_contribution_zero():
    frw = build_frw_space(0, 1.0, (0.5, 2.0, 9))
    cp = build_coupled_space(frw, (-3, 3, 7))
    assert np.all(cp.potential_grid() == 0.0)


def test_coupled_scalar_kinetic_at_unit_a():
    v0 = 2.5
    frw = build_frw_space(0, v0, (0.5, 1.5, 21))
    cp = build_coupled_space(frw, (-3, 3, 7))
    i = int(np.argmin(np.abs(cp.axes[0].nodes - 1.0)))
    assert cp.axes[0].nodes[i] == pytest.approx(1.0)
    assert cp.kinetic_diag(1)[i, 0] == pytest.approx(1.0 / (2.0 * v0), rel=1e-12)


def test_coupled_a_block_matches_frw_nodewise():
    frw = build_frw_space(1, 1.0, (0.5, 2.0, 13))
    cp = build_coupled_space(frw, (-2, 2, 5))
    assert np.allclose(cp.kinetic_diag(0)[:, 0], frw.kinetic_diag(0), rtol=0, atol=0)
    assert np.allclose(cp.potential_grid()[:, 2], frw.potential_grid())


def test_coupled_rejects_non_frw():
    lat = build_scalar_lattice_space(LatticeSpec(1, 1.0), 0.0, (-1, 1, 5))
    with pytest.raises(ValueError):
        build_coupled_space(lat, (-1, 1, 5))


def test_coupled_signature_is_lorentzian():
    frw = build_frw_space(0, 1.0, (0.5, 2.0, 9))
    cp = build_coupled_space(frw, (-2, 2, 5))
    assert np.all(cp.kinetic_diag(0) < 0)
    assert np.all(cp.kinetic_diag(1) > 0)


# ---------------------------------------------------------------------------
# serialization and immutability
# ---------------------------------------------------------------------------

def test_space_json_roundtrip():
    frw = build_frw_space(1, 1.0, (0.5, 2.0, 7))
    text = space_to_json(frw)
    back = space_from_json(text)
    assert back.kind == frw.kind
    assert np.allclose(back.potential_grid(), frw.potential_grid())
    assert np.allclose(back.kinetic_diag(0), frw.kinetic_diag(0))
    assert np.allclose(back.measure_grid(), frw.measure_grid())
    # keys are stable / sorted
    assert text == space_to_json(space_from_json(text))
    doc = json.loads(text)
    assert list(doc) == sorted(doc)


def test_fields_are_frozen():
    sp = build_frw_space(0, 1.0, (0.5, 2.0, 5))
    with pytest.raises(ValueError):
        sp.potential[0] = 1.0
