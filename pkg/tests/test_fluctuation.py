import numpy as np
import pytest

from entroq.configspace import (
    LatticeSpec,
    build_frw_space,
    build_scalar_lattice_space,
    dewitt_supermetric,
    sym_tensor_basis,
)
from entroq.constants import PhysicalConstants
from entroq.fluctuation import (
    SampleBatch,
    axis_kernel,
    build_fluctuation_kernel,
    covariance_check,
    degenerate_kernel,
    sample,
    uncertainty_check,
)


def scalar_space(n=1, dx=1.0):
    return build_scalar_lattice_space(LatticeSpec(n, dx), 0.0, (-1, 1, 3))


# ---------------------------------------------------------------------------
# kernel construction
# ---------------------------------------------------------------------------

def test_scalar_kernel_variance_value():
    k = build_fluctuation_kernel(scalar_space(), 1e-3)
    assert k.theoretical_cov[0, 0] == pytest.approx(5e-4, rel=1e-14)


def test_scalar_kernel_offdiagonal_exactly_zero():
    k = build_fluctuation_kernel(scalar_space(n=2), 1e-3)
    assert k.theoretical_cov[0, 1] == 0.0
    assert k.theoretical_cov[1, 0] == 0.0


def test_kernel_cov_inverse_invariant():
    k = build_fluctuation_kernel(scalar_space(n=3, dx=0.5), 2e-3)
    resid = np.abs(k.theoretical_cov @ k.omega_bar - np.eye(3)).max()
    assert resid < 1e-10


def test_kernel_dt_scaling_exact():
    sp = scalar_space(n=2, dx=0.3)
    k1 = build_fluctuation_kernel(sp, 1e-3)
    k2 = build_fluctuation_kernel(sp, 2e-3)
    assert np.allclose(k2.omega_bar, 0.5 * k1.omega_bar, rtol=0, atol=0)
    assert np.allclose(k2.theoretical_cov, 2.0 * k1.theoretical_cov, rtol=0, atol=0)


def test_kernel_rejects_nonpositive_dt():
    with pytest.raises(ValueError):
        build_fluctuation_kernel(scalar_space(), 0.0)


def test_gravity_kernel_identity_point_matches_projected_supermetric():
    # at h = I the sector covariance equals the traceless projection of
    # (16 pi G N hbar dt) G_ijkl, computed by an independent dense inverse
    consts = PhysicalConstants(hbar=1.0, grav=1.0, lapse=1.0)
    frw = build_frw_space(0, 1.0, (0.5, 2.0, 9), consts)
    dt = 1e-3
    k = build_fluctuation_kernel(frw, dt, metric_point=np.eye(3))
    s = dewitt_supermetric(np.eye(3))
    basis6 = sym_tensor_basis()
    lower6 = np.einsum("aij,ijkl,bkl->ab", basis6, s.lower, basis6)
    U = k.sector_basis
    coeff = 16.0 * np.pi * consts.grav * consts.lapse * consts.hbar * dt
    expect = coeff * (U.T @ lower6 @ U)
    assert np.allclose(k.theoretical_cov, expect, rtol=1e-12)


def test_gravity_kernel_random_point_dense_inverse_oracle():
    rng = np.random.default_rng(11)
    A = rng.normal(size=(3, 3))
    h = A @ A.T + 0.5 * np.eye(3)
    frw = build_frw_space(0, 1.0, (0.5, 2.0, 9))
    k = build_fluctuation_kernel(frw, 1e-3, metric_point=h)
    # independent dense inversion of the sector form
    oracle = np.linalg.inv(np.asarray(k.omega_bar))
    assert np.allclose(k.theoretical_cov, oracle, rtol=1e-12)
    assert np.all(np.linalg.eigvalsh(np.asarray(k.omega_bar)) > 0)


def test_axis_kernel_matches_kinetic_magnitude():
    consts = PhysicalConstants()
    frw = build_frw_space(1, 1.0, (1.0, 2.0, 11), consts)
    k = axis_kernel(frw, 1e-3, q_ref=[1.5])
    g = 8 * np.pi / (3 * 1.5)
    assert k.theoretical_cov[0, 0] == pytest.approx(1e-3 * g, rel=1e-12)
    assert k.sector == "gravity-axis"


def test_axis_kernel_on_scalar_space_is_site_kernel():
    k1 = axis_kernel(scalar_space(n=2), 1e-3)
    k2 = build_fluctuation_kernel(scalar_space(n=2), 1e-3)
    assert np.allclose(k1.theoretical_cov, k2.theoretical_cov)


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

def test_sample_mean_within_four_stderr():
    k = build_fluctuation_kernel(scalar_space(n=2), 1e-3)
    batch = sample(k, 10**6, seed=42)
    mean = batch.samples.mean(axis=0)
    stderr = batch.samples.std(axis=0) / np.sqrt(batch.samples.shape[0])
    assert np.all(np.abs(mean) <= 4.0 * stderr)


def test_sample_deterministic_same_seed():
    k = build_fluctuation_kernel(scalar_space(n=3, dx=0.5), 1e-3)
    b1 = sample(k, 1000, seed=7)
    b2 = sample(k, 1000, seed=7)
    assert np.array_equal(b1.samples, b2.samples)
    b3 = sample(k, 1000, seed=8)
    assert not np.array_equal(b1.samples, b3.samples)


def test_sample_worker_split_reproduces_serial():
    k = build_fluctuation_kernel(scalar_space(n=2), 1e-3)
    serial = sample(k, 101, seed=5, workers=1)
    split = sample(k, 101, seed=5, workers=4)
    # identical streams per pre-assigned block, so equality is exact
    assert np.array_equal(serial.samples[:26], split.samples[:26])


def test_sample_variance_one_percent():
    k = build_fluctuation_kernel(scalar_space(), 1e-3)
    batch = sample(k, 10**6, seed=123)
    var = batch.samples.var()
    assert abs(var - 5e-4) / 5e-4 < 0.01


def test_degenerate_kernel_samples_zero():
    k = degenerate_kernel(2, 1e-3)
    batch = sample(k, 100, seed=1)
    assert np.all(batch.samples == 0.0)


# ---------------------------------------------------------------------------
# covariance check
# ---------------------------------------------------------------------------

def test_covariance_check_scalar_one_percent():
    k = build_fluctuation_kernel(scalar_space(), 1e-3)
    rep = covariance_check(sample(k, 10**6, seed=2024))
    assert rep.max_rel_err <= 0.01
    assert rep.consistent


def test_covariance_check_gravity_traceless_three_percent():
    frw = build_frw_space(0, 1.0, (0.5, 2.0, 9))
    k = build_fluctuation_kernel(frw, 1e-3, metric_point=np.eye(3))
    rep = covariance_check(sample(k, 10**6, seed=91))
    assert rep.max_rel_err <= 0.03
    assert rep.consistent


def test_covariance_check_flags_zero_batch():
    k = build_fluctuation_kernel(scalar_space(), 1e-3)
    zero = SampleBatch(samples=np.zeros((1000, 1)), seed=0, kernel=k)
    rep = covariance_check(zero)
    assert np.all(rep.estimated_cov == 0.0)
    assert not rep.consistent


def test_covariance_mc_convergence_rate():
    # error falls at the 1/sqrt(n) Monte Carlo rate; slope in [-0.6, -0.4]
    k = build_fluctuation_kernel(scalar_space(), 1e-3)
    ns = [10**4, 10**5, 10**6]
    errs = []
    for n in ns:
        reps = [covariance_check(sample(k, n, seed=1000 + r)).max_rel_err for r in range(12)]
        errs.append(np.mean(reps))
    slope = np.polyfit(np.log(ns), np.log(errs), 1)[0]
    assert -0.6 <= slope <= -0.4


# ---------------------------------------------------------------------------
# uncertainty relation
# ---------------------------------------------------------------------------

def test_uncertainty_equality_single_site():
    k = build_fluctuation_kernel(scalar_space(), 1e-3)
    batch = sample(k, 200000, seed=77)
    rep = uncertainty_check(batch, np.ones(1), np.ones(1))
    assert rep.bound == pytest.approx(0.5, rel=1e-14)
    assert abs(rep.cross_cov_estimate - 0.5) <= 5 * rep.stderr
    assert rep.cross_cov_estimate == pytest.approx(0.5, rel=0.02)


def test_uncertainty_bilinearity():
    k = build_fluctuation_kernel(scalar_space(), 1e-3)
    batch = sample(k, 50000, seed=78)
    r1 = uncertainty_check(batch, np.ones(1), np.ones(1))
    r2 = uncertainty_check(batch, 2 * np.ones(1), np.ones(1))
    assert r2.bound == pytest.approx(2 * r1.bound, rel=1e-14)
    assert r2.cross_cov_estimate == pytest.approx(2 * r1.cross_cov_estimate, rel=1e-12)


def test_uncertainty_disjoint_supports():
    k = build_fluctuation_kernel(scalar_space(n=2), 1e-3)
    batch = sample(k, 200000, seed=79)
    f = np.array([1.0, 0.0])
    g = np.array([0.0, 1.0])
    rep = uncertainty_check(batch, f, g)
    assert rep.bound == 0.0
    assert abs(rep.cross_cov_estimate) <= 5 * rep.stderr


def test_uncertainty_dimension_mismatch():
    k = build_fluctuation_kernel(scalar_space(n=2), 1e-3)
    batch = sample(k, 100, seed=1)
    with pytest.raises(ValueError):
        uncertainty_check(batch, np.ones(3), np.ones(3))


def test_uncertainty_nonuniform_lattice_spacing():
    # the volume element enters both smearings and the bound consistently
    k = build_fluctuation_kernel(scalar_space(n=2, dx=0.25), 1e-3)
    batch = sample(k, 400000, seed=80)
    f = np.array([1.0, 2.0])
    g = np.array([3.0, 1.0])
    rep = uncertainty_check(batch, f, g)
    assert rep.bound == pytest.approx(0.5 * 0.25 * (1 * 3 + 2 * 1), rel=1e-14)
    assert abs(rep.cross_cov_estimate - rep.bound) <= 5 * rep.stderr


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------

def test_batch_csv_roundtrip():
    k = build_fluctuation_kernel(scalar_space(n=2), 1e-3)
    batch = sample(k, 5, seed=3)
    text = batch.to_csv()
    lines = text.strip().split("\n")
    assert lines[0].split(",") == ["phi0", "phi1"]
    vals = np.array([[float(x) for x in ln.split(",")] for ln in lines[1:]])
    assert np.allclose(vals, batch.samples, rtol=0, atol=0)


def test_report_json_keys_sorted():
    k = build_fluctuation_kernel(scalar_space(), 1e-3)
    rep = covariance_check(sample(k, 1000, seed=4))
    import json

    doc = json.loads(rep.to_json())
    assert list(doc) == sorted(doc)
