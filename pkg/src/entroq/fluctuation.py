"""Gaussian fluctuation kernels and their Monte Carlo verification.

A kernel packages the quadratic form that governs short-time field
fluctuations together with its exact covariance.  Three flavors exist:

* ``scalar``          -- one degree of freedom per lattice site, with
                         covariance (hbar dt / 2) / dx per site;
* ``gravity-traceless`` -- the five traceless metric-fluctuation modes at
                         a metric point, the positive-definite sector of
                         the supermetric form (the conformal direction is
                         excluded: the full form is indefinite there and
                         the Gaussian law is not normalizable over it);
* ``gravity-axis``    -- a kernel over the configuration-space axes of a
                         minisuperspace model, with per-axis covariance
                         N hbar dt |g^{AA}(q_ref)|.  The sign flip on the
                         conformal block mirrors the positive-sector
                         restriction; it is what configuration-space
                         Monte Carlo (the entropy module) consumes.

Sampling uses an eigendecomposition of the covariance and a counter-based
generator, with sample indices pre-assigned to worker streams so that a
parallel fan-out reproduces the single-threaded batch bit for bit.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .configspace import ConfigSpace, dewitt_supermetric, sym_tensor_basis
from .constants import PhysicalConstants
from .grids import rng_stream


@dataclass(frozen=True)
class FluctuationKernel:
    """Quadratic fluctuation law: p(w) ~ exp(-w.omega_bar.w / 2)."""

    omega_bar: np.ndarray | None  # None only for degenerate test kernels
    dt: float
    constants: PhysicalConstants
    sector: str
    theoretical_cov: np.ndarray
    dof_names: tuple[str, ...] = ()
    metric_point: np.ndarray | None = None
    sector_basis: np.ndarray | None = None  # (6, 5) embedding, traceless sector

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        cov = np.asarray(self.theoretical_cov)
        if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
            raise ValueError("theoretical_cov must be square")
        if self.omega_bar is not None:
            ob = np.asarray(self.omega_bar)
            eigs = np.linalg.eigvalsh(ob)
            if eigs.min() <= 0:
                raise ValueError("omega_bar must be positive definite on its sector")
            resid = np.abs(cov @ ob - np.eye(cov.shape[0])).max()
            if resid > 1e-10:
                raise ValueError(f"cov.omega_bar deviates from identity by {resid:.2e}")
        for arr in (self.omega_bar, self.theoretical_cov, self.sector_basis, self.metric_point):
            if isinstance(arr, np.ndarray):
                arr.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.theoretical_cov.shape[0]


@dataclass(frozen=True)
class SampleBatch:
    samples: np.ndarray  # (n, d)
    seed: int
    kernel: FluctuationKernel

    def __post_init__(self):
        self.samples.setflags(write=False)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        names = self.kernel.dof_names or tuple(f"w{i}" for i in range(self.samples.shape[1]))
        writer.writerow(names)
        for row in self.samples:
            writer.writerow([f"{x:.17g}" for x in row])
        return buf.getvalue()


def _traceless_basis(h: np.ndarray) -> np.ndarray:
    """Orthonormal basis (6, 5) of {W symmetric : tr(hW) = 0}."""
    basis6 = sym_tensor_basis()
    c = np.einsum("ij,aij->a", h, basis6)  # constraint covector
    c = c / np.linalg.norm(c)
    proj = np.eye(6) - np.outer(c, c)
    evals, evecs = np.linalg.eigh(proj)
    return evecs[:, evals > 0.5]


def build_fluctuation_kernel(
    space: ConfigSpace,
    dt: float,
    constants: PhysicalConstants | None = None,
    metric_point: np.ndarray | None = None,
    a_ref: float | None = None,
) -> FluctuationKernel:
    """Fluctuation kernel for a configuration space.

    Scalar lattices get the diagonal site kernel with
    omega_bar = (2 dx / (hbar dt)) I.  Gravitational spaces get the
    traceless-sector kernel at the metric point ``metric_point`` (or
    h = a_ref^2 I with a_ref defaulting to the middle of the a-grid),
    built from sqrt(h) G^{ijkl} / (16 pi G N hbar dt) restricted to the
    h-traceless subspace where the form is positive definite.
    """
    if constants is None:
        constants = space.constants
    if not dt > 0:
        raise ValueError("dt must be positive")
    hbar, grav, lapse = constants.hbar, constants.grav, constants.lapse
    if space.kind == "scalar-lattice":
        dx = space.meta["spacing"]
        n = space.meta["sites"]
        omega = (2.0 * dx / (hbar * dt)) * np.eye(n)
        cov = (hbar * dt / 2.0) * np.eye(n) / dx
        return FluctuationKernel(
            omega_bar=omega,
            dt=dt,
            constants=constants,
            sector="scalar",
            theoretical_cov=cov,
            dof_names=tuple(ax.name for ax in space.axes),
        )
    if space.kind in ("frw", "coupled"):
        if metric_point is None:
            if a_ref is None:
                ax = space.axes[0]
                a_ref = 0.5 * (ax.lo + ax.hi)
            metric_point = a_ref**2 * np.eye(3)
        h = np.asarray(metric_point, dtype=float)
        sample = dewitt_supermetric(h)
        sqrth = float(np.sqrt(np.linalg.det(h)))
        coeff = sqrth / (16.0 * np.pi * grav * lapse * hbar * dt)
        basis6 = sym_tensor_basis()
        # quadratic form w^{ij} G_ijkl w^{kl} on upper-index fluctuations
        form6 = np.einsum("aij,ijkl,bkl->ab", basis6, sample.lower, basis6)
        U = _traceless_basis(h)
        omega5 = coeff * (U.T @ form6 @ U)
        eigs = np.linalg.eigvalsh(omega5)
        if eigs.min() <= 0:
            raise RuntimeError(
                "traceless projection lost positive definiteness; "
                "this cannot happen for an SPD metric point"
            )
        cov5 = np.linalg.inv(omega5)
        cov5 = 0.5 * (cov5 + cov5.T)
        return FluctuationKernel(
            omega_bar=omega5,
            dt=dt,
            constants=constants,
            sector="gravity-traceless",
            theoretical_cov=cov5,
            dof_names=tuple(f"tl{i}" for i in range(5)),
            metric_point=h,
            sector_basis=U,
        )
    raise ValueError(f"no fluctuation kernel for space kind {space.kind!r}")


def axis_kernel(
    space: ConfigSpace,
    dt: float,
    constants: PhysicalConstants | None = None,
    q_ref=None,
) -> FluctuationKernel:
    """Kernel over the grid axes of a space, for configuration-space MC.

    Covariance per axis is N hbar dt |g^{AA}(q_ref)|; the absolute value
    flips the sign of the (negative) conformal block so the law stays a
    normalizable Gaussian, matching the positive-sector policy.  For
    scalar lattices this reproduces the site kernel exactly.
    """
    if constants is None:
        constants = space.constants
    if not dt > 0:
        raise ValueError("dt must be positive")
    if space.kind == "scalar-lattice":
        return build_fluctuation_kernel(space, dt, constants)
    if q_ref is None:
        idx = tuple(ax.n // 2 for ax in space.axes)
    else:
        q_ref = np.atleast_1d(np.asarray(q_ref, dtype=float))
        idx = tuple(
            int(np.argmin(np.abs(ax.nodes - q))) for ax, q in zip(space.axes, q_ref)
        )
    diag = np.array([space.kinetic_diag(a)[idx] for a in range(space.ndim)])
    cov = np.diag(constants.lapse * constants.hbar * dt * np.abs(diag))
    omega = np.diag(1.0 / np.diag(cov))
    return FluctuationKernel(
        omega_bar=omega,
        dt=dt,
        constants=constants,
        sector="gravity-axis",
        theoretical_cov=cov,
        dof_names=tuple(ax.name for ax in space.axes),
    )


def degenerate_kernel(dim: int, dt: float, constants: PhysicalConstants | None = None) -> FluctuationKernel:
    """Zero-covariance kernel (test hook for the dt -> 0 degenerate limit)."""
    return FluctuationKernel(
        omega_bar=None,
        dt=dt,
        constants=constants or PhysicalConstants(),
        sector="scalar",
        theoretical_cov=np.zeros((dim, dim)),
    )


def sample(
    kernel: FluctuationKernel,
    n_samples: int,
    seed: int,
    workers: int = 1,
) -> SampleBatch:
    """Draw mean-zero Gaussian fluctuations with covariance C*.

    Samples are generated in fixed per-worker index blocks, so any worker
    count yields the batch produced by ``workers=1`` row for row.
    """
    if n_samples < 1:
        raise ValueError("need at least one sample")
    d = kernel.dim
    cov = np.asarray(kernel.theoretical_cov)
    evals, evecs = np.linalg.eigh(cov)
    evals = np.clip(evals, 0.0, None)
    scale = evecs * np.sqrt(evals)
    out = np.empty((n_samples, d))
    # fixed block partition: worker i owns rows [starts[i], starts[i+1])
    workers = max(1, int(workers))
    counts = np.full(workers, n_samples // workers)
    counts[: n_samples % workers] += 1
    start = 0
    for w, cnt in enumerate(counts):
        if cnt == 0:
            continue
        z = rng_stream(seed, w).standard_normal(size=(cnt, d))
        out[start : start + cnt] = z @ scale.T
        start += cnt
    return SampleBatch(samples=out, seed=seed, kernel=kernel)


@dataclass(frozen=True)
class CovarianceReport:
    estimated_cov: np.ndarray
    max_rel_err: float
    stderr: np.ndarray
    n_samples: int
    consistent: bool

    def to_json(self) -> str:
        return json.dumps(
            {
                "estimated_cov": self.estimated_cov.tolist(),
                "max_rel_err": self.max_rel_err,
                "stderr": self.stderr.tolist(),
                "n_samples": self.n_samples,
                "consistent": self.consistent,
            },
            sort_keys=True,
        )


def covariance_check(batch: SampleBatch) -> CovarianceReport:
    """Empirical covariance against the kernel's exact C*.

    Entrywise errors are normalized by sqrt(C*_ii C*_jj) (falling back to
    the largest diagonal scale for degenerate entries) and flagged when
    any entry sits more than five standard errors from C*.
    """
    w = batch.samples
    n = w.shape[0]
    if n == 0:
        raise ValueError("batch is empty")
    est = (w.T @ w) / n
    cov = np.asarray(batch.kernel.theoretical_cov)
    diag = np.diag(cov).copy()
    floor = max(diag.max(initial=0.0), 1e-300)
    scale = np.sqrt(np.maximum(np.outer(diag, diag), floor**2 * 1e-12))
    rel = np.abs(est - cov) / scale
    # gaussian fourth-moment stderr of each covariance entry
    stderr = np.sqrt(np.maximum(np.outer(diag, diag) + cov**2, 0.0) / n)
    dev = np.abs(est - cov)
    consistent = bool(np.all(dev <= 5.0 * np.maximum(stderr, 1e-300)))
    return CovarianceReport(
        estimated_cov=est,
        max_rel_err=float(rel.max()),
        stderr=stderr,
        n_samples=n,
        consistent=consistent,
    )


@dataclass(frozen=True)
class UncertaintyReport:
    cross_cov_estimate: float
    bound: float
    stderr: float
    margin: float  # (estimate - bound) in stderr units

    def to_json(self) -> str:
        return json.dumps(
            {
                "cross_cov_estimate": self.cross_cov_estimate,
                "bound": self.bound,
                "stderr": self.stderr,
                "margin": self.margin,
            },
            sort_keys=True,
        )


def uncertainty_check(batch: SampleBatch, f: np.ndarray, g: np.ndarray) -> UncertaintyReport:
    """Smeared field-momentum cross covariance against (hbar/2) <f|g>.

    The momentum fluctuation is reconstructed from the same samples as
    w / dt (momentum density), and both smearings carry the lattice
    volume element, so the exact cross covariance is (hbar/2) <f|g> with
    <f|g> = sum_i dx f_i g_i.  Equality within Monte Carlo error
    certifies the Cauchy-Schwarz uncertainty bound.

    Only site-structured kernels (sector 'scalar' / 'gravity-axis' with
    diagonal covariance) are supported.
    """
    kernel = batch.kernel
    if kernel.sector not in ("scalar", "gravity-axis"):
        raise ValueError("uncertainty_check needs a site-structured kernel")
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    d = batch.samples.shape[1]
    if f.shape != (d,) or g.shape != (d,):
        raise ValueError("test functions must match the sample dimension")
    if (f < 0).any() or (g < 0).any():
        raise ValueError("test functions must be nonnegative")
    dx = 1.0
    if kernel.sector == "scalar":
        dx = (kernel.constants.hbar * kernel.dt / 2.0) / kernel.theoretical_cov[0, 0]
    dq = batch.samples * dx  # smeared with the volume element
    dpi = batch.samples / kernel.dt * dx
    prod = (dq @ f) * (dpi @ g)
    est = float(prod.mean())
    stderr = float(prod.std(ddof=1) / np.sqrt(len(prod))) if len(prod) > 1 else 0.0
    bound = 0.5 * kernel.constants.hbar * float(np.sum(dx * f * g))
    margin = (est - bound) / stderr if stderr > 0 else 0.0
    return UncertaintyReport(cross_cov_estimate=est, bound=bound, stderr=stderr, margin=margin)
