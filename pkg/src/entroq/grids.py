"""Uniform tensor-product grids and the second-order stencils used everywhere.

All configuration-space fields in this package live on rectangular grids
with uniform spacing per axis.  Derivatives are second-order central in
the interior and second-order one-sided on boundary nodes; divergence-form
(flux) operators average coefficients to half nodes.  Quadrature is the
flat trapezoid rule (the kappa=0 configuration measure), so normalization
never carries a hidden weight.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True)
class Axis:
    """One grid axis: name, closed bounds and node count (>= 3)."""

    name: str
    lo: float
    hi: float
    n: int

    def __post_init__(self):
        if not (math.isfinite(self.lo) and math.isfinite(self.hi)):
            raise ValueError(f"axis {self.name!r}: bounds must be finite")
        if not self.hi > self.lo:
            raise ValueError(f"axis {self.name!r}: need hi > lo")
        if self.n < 3:
            raise ValueError(f"axis {self.name!r}: need at least 3 points")

    @property
    def step(self) -> float:
        return (self.hi - self.lo) / (self.n - 1)

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.n)


def as_axis(spec, default_name: str = "q") -> Axis:
    """Coerce an Axis or a (lo, hi, n) / (name, lo, hi, n) tuple."""
    if isinstance(spec, Axis):
        return spec
    spec = tuple(spec)
    if len(spec) == 3:
        return Axis(default_name, float(spec[0]), float(spec[1]), int(spec[2]))
    if len(spec) == 4:
        return Axis(str(spec[0]), float(spec[1]), float(spec[2]), int(spec[3]))
    raise ValueError(f"cannot interpret axis spec {spec!r}")


def mesh(axes) -> list[np.ndarray]:
    return list(np.meshgrid(*[ax.nodes for ax in axes], indexing="ij"))


def grid_shape(axes) -> tuple[int, ...]:
    return tuple(ax.n for ax in axes)


def trapezoid_weights(axes) -> np.ndarray:
    """Tensor-product trapezoid weights, shape = grid shape."""
    w = np.ones(())
    for ax in axes:
        w1 = np.full(ax.n, ax.step)
        w1[0] *= 0.5
        w1[-1] *= 0.5
        w = np.multiply.outer(w, w1)
    return w


def grad(f: np.ndarray, axes, axis: int) -> np.ndarray:
    """Second-order first derivative along one axis (one-sided at edges)."""
    h = axes[axis].step
    g = np.empty_like(f, dtype=float)
    fm = np.moveaxis(f, axis, 0)
    gm = np.moveaxis(g, axis, 0)
    gm[1:-1] = (fm[2:] - fm[:-2]) / (2.0 * h)
    gm[0] = (-3.0 * fm[0] + 4.0 * fm[1] - fm[2]) / (2.0 * h)
    gm[-1] = (3.0 * fm[-1] - 4.0 * fm[-2] + fm[-3]) / (2.0 * h)
    return g


def gradient(f: np.ndarray, axes) -> list[np.ndarray]:
    return [grad(f, axes, a) for a in range(len(axes))]


def diff_matrix(ax: Axis) -> sp.csr_matrix:
    """Sparse matrix form of `grad` along a single axis (1-D)."""
    n, h = ax.n, ax.step
    rows, cols, vals = [], [], []
    for i in range(1, n - 1):
        rows += [i, i]
        cols += [i - 1, i + 1]
        vals += [-0.5 / h, 0.5 / h]
    rows += [0, 0, 0]
    cols += [0, 1, 2]
    vals += [-1.5 / h, 2.0 / h, -0.5 / h]
    rows += [n - 1, n - 1, n - 1]
    cols += [n - 1, n - 2, n - 3]
    vals += [1.5 / h, -2.0 / h, 0.5 / h]
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def apply_axis_matrix(mat: sp.spmatrix, f: np.ndarray, axis: int) -> np.ndarray:
    """Apply a 1-D operator matrix along one axis of an nD field."""
    fm = np.moveaxis(f, axis, 0)
    lead = fm.shape[0]
    out = (mat @ fm.reshape(lead, -1)).reshape(fm.shape)
    return np.moveaxis(out, 0, axis)


def axis_operator(op1d: sp.spmatrix, axes, axis: int) -> sp.csr_matrix:
    """Kronecker-lift a 1-D operator to the full flattened grid."""
    mats = []
    for a, ax in enumerate(axes):
        mats.append(op1d if a == axis else sp.identity(ax.n, format="csr"))
    out = mats[0]
    for m in mats[1:]:
        out = sp.kron(out, m, format="csr")
    return out


def _half_coeffs(c: np.ndarray, axis: int):
    """Half-node coefficient averages along `axis`, plus edge extensions."""
    cm = np.moveaxis(c, axis, 0)
    ch = 0.5 * (cm[:-1] + cm[1:])  # c_{i+1/2}, i = 0..n-2
    return ch, cm[0], cm[-1]


def flux_divergence_apply(f: np.ndarray, coeffs, axes) -> np.ndarray:
    """Apply sum_A d_A(c_A d_A f) in flux form with Dirichlet-0 ghosts.

    `coeffs[A]` is the diagonal kinetic coefficient field for axis A,
    broadcastable to the grid shape.
    """
    shape = grid_shape(axes)
    out = np.zeros(shape, dtype=np.result_type(f, float))
    for a, ax in enumerate(axes):
        c = np.broadcast_to(coeffs[a], shape)
        h2 = ax.step**2
        fm = np.moveaxis(f, a, 0)
        ch, c_lo, c_hi = _half_coeffs(c, a)
        om = np.moveaxis(np.zeros_like(out), a, 0)
        flux = ch * (fm[1:] - fm[:-1])  # at half nodes
        om[:-1] += flux
        om[1:] -= flux
        # ghost fluxes: f outside = 0, half coefficient = edge node value
        om[0] -= c_lo * fm[0]
        om[-1] -= c_hi * fm[-1]
        out += np.moveaxis(om, 0, a) / h2
    return out


def flux_divergence_matrix(coeffs, axes) -> sp.csr_matrix:
    """Sparse matrix of `flux_divergence_apply` on the flattened grid."""
    shape = grid_shape(axes)
    size = int(np.prod(shape))
    idx = np.arange(size).reshape(shape)
    rows, cols, vals = [], [], []
    for a, ax in enumerate(axes):
        c = np.broadcast_to(coeffs[a], shape).astype(float)
        h2 = ax.step**2
        cm = np.moveaxis(c, a, 0)
        im = np.moveaxis(idx, a, 0)
        ch = 0.5 * (cm[:-1] + cm[1:])
        # off-diagonal couplings through each interior half node
        lo, hi = im[:-1].ravel(), im[1:].ravel()
        v = (ch / h2).ravel()
        rows += [lo, hi]
        cols += [hi, lo]
        vals += [v, v]
        # diagonal: -(c_{i+1/2} + c_{i-1/2})/h^2 with ghost halves = edge value
        diag = np.zeros_like(cm)
        diag[:-1] -= ch
        diag[1:] -= ch
        diag[0] -= cm[0]
        diag[-1] -= cm[-1]
        rows.append(im.ravel())
        cols.append(im.ravel())
        vals.append((diag / h2).ravel())
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    return sp.csr_matrix((vals, (rows, cols)), shape=(size, size))


def naive_second_matrix(coeffs, axes) -> sp.csr_matrix:
    """Sparse matrix of sum_A c_A(q) d_A^2 with the coefficient outside.

    Second differences use Dirichlet-0 ghosts, matching the flux form so
    that the two orderings coincide exactly for constant coefficients.
    """
    shape = grid_shape(axes)
    size = int(np.prod(shape))
    idx = np.arange(size).reshape(shape)
    rows, cols, vals = [], [], []
    for a, ax in enumerate(axes):
        c = np.broadcast_to(coeffs[a], shape).astype(float)
        h2 = ax.step**2
        cm = np.moveaxis(c, a, 0)
        im = np.moveaxis(idx, a, 0)
        rows.append(im.ravel())
        cols.append(im.ravel())
        vals.append((-2.0 * cm / h2).ravel())
        rows.append(im[1:].ravel())
        cols.append(im[:-1].ravel())
        vals.append((cm[1:] / h2).ravel())
        rows.append(im[:-1].ravel())
        cols.append(im[1:].ravel())
        vals.append((cm[:-1] / h2).ravel())
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    return sp.csr_matrix((vals, (rows, cols)), shape=(size, size))


def cubic_interp(axes, values: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Separable 4-point Lagrange interpolation on a uniform grid.

    points: (npts, d).  Near edges the stencil shifts inward; points
    outside the grid are clamped to the boundary cell (callers guard
    against that with padding-margin preconditions).
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    npts, d = points.shape
    if d != len(axes):
        raise ValueError("point dimension does not match the grid")
    starts = []
    local = []
    for a, ax in enumerate(axes):
        x = (points[:, a] - ax.lo) / ax.step
        s = np.clip(np.floor(x).astype(int) - 1, 0, ax.n - 4)
        starts.append(s)
        local.append(x - s)  # in [0, 3] for interior points
    # per-axis Lagrange weights for offsets 0..3
    wts = []
    for a in range(d):
        xi = local[a]
        w = np.empty((4, npts))
        w[0] = -(xi - 1) * (xi - 2) * (xi - 3) / 6.0
        w[1] = xi * (xi - 2) * (xi - 3) / 2.0
        w[2] = -xi * (xi - 1) * (xi - 3) / 2.0
        w[3] = xi * (xi - 1) * (xi - 2) / 6.0
        wts.append(w)
    out = np.zeros(npts)
    for corner in np.ndindex(*(4,) * d):
        idx = tuple(starts[a] + corner[a] for a in range(d))
        w = wts[0][corner[0]].copy()
        for a in range(1, d):
            w *= wts[a][corner[a]]
        out += w * values[idx]
    return out


def rng_stream(seed: int, worker: int = 0) -> np.random.Generator:
    """Counter-based generator with a per-worker stream from (seed, worker)."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(worker),))
    return np.random.Generator(np.random.Philox(ss))
