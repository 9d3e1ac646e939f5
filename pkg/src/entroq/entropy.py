"""Relative-entropy estimators and the discrete Fisher functional.

The divergences are estimated by configuration-space Monte Carlo: draw a
fluctuation vector w from its Gaussian kernel, evaluate the grid integral
of the log- or power-ratio between the density and its shifted copy
(cubic interpolation for the shifted evaluation), and average over draws.
In the small-time-step limit the mean Kullback-Leibler divergence grows
linearly with the step, with a slope fixed by the weighted Fisher
functional; `small_dt_limit_report` measures that slope.

The uniform prior of the Gibbs construction is an additive constant in
log(p/sigma) and is dropped from every estimator here; it reappears only
in the variational module's objective.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass

import numpy as np

from .configspace import ConfigSpace
from .fluctuation import FluctuationKernel, sample
from .grids import cubic_interp, gradient, mesh, trapezoid_weights

DENSITY_FLOOR = 1e-30


@dataclass(frozen=True)
class DivergenceEstimate:
    value: float
    stderr: float
    n_samples: int
    alpha: float = 1.0

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise ValueError("divergence estimate must be finite")
        if self.stderr < 0:
            raise ValueError("stderr must be nonnegative")

    def to_json(self) -> str:
        return json.dumps(
            {
                "value": self.value,
                "stderr": self.stderr,
                "n_samples": self.n_samples,
                "alpha": self.alpha,
            },
            sort_keys=True,
        )


def _check_normalized(rho: np.ndarray, space: ConfigSpace, tol: float = 1e-8):
    rho = np.asarray(rho, dtype=float)
    if rho.shape != space.shape:
        raise ValueError("density shape does not match the space grid")
    if (rho < 0).any():
        raise ValueError("density must be nonnegative")
    total = float(np.sum(rho * space.quad_weights()))
    if abs(total - 1.0) > tol:
        raise ValueError(f"density is not normalized: integral = {total!r}")
    return rho


def fisher_weights(space: ConfigSpace) -> list[np.ndarray]:
    """Per-axis Fisher weight fields W^{AA}(q).

    Scalar lattices carry the flat weight 1/dx per site.  Gravitational
    spaces carry N |g^{AA}(q)|: the kernel weight of the information
    functional, with the conformal block's sign flipped to match the
    positive-sector fluctuation law.
    """
    if space.kind == "scalar-lattice":
        dx = space.meta["spacing"]
        return [np.full(space.shape, 1.0 / dx) for _ in range(space.ndim)]
    lapse = space.constants.lapse
    return [lapse * np.abs(space.kinetic_diag(a)) for a in range(space.ndim)]


def fisher_functional(rho: np.ndarray, space: ConfigSpace) -> float:
    """Discrete sum of (1/rho) d_A rho W^{AB} d_B rho over the grid.

    Central differences in the interior, one-sided at boundaries; nodes
    with rho below the density floor contribute nothing.
    """
    rho = _check_normalized(rho, space)
    w = trapezoid_weights(space.axes)
    grads = gradient(rho, space.axes)
    weights = fisher_weights(space)
    mask = rho > DENSITY_FLOOR
    total = 0.0
    for g, wt in zip(grads, weights):
        term = np.zeros_like(rho)
        term[mask] = g[mask] ** 2 * wt[mask] / rho[mask]
        total += float(np.sum(w * term))
    return total


def _shifted_integrals(rho, space, batch, func, chunk=None):
    """Evaluate sum_q w_q func(rho(q), rho(q+w)) for every sample row."""
    axes = space.axes
    shape = space.shape
    w_quad = trapezoid_weights(axes).ravel()
    coords = np.stack([c.ravel() for c in mesh(axes)], axis=1)  # (m, d)
    rho_flat = rho.ravel()
    support = rho_flat > DENSITY_FLOOR
    coords_s = coords[support]
    rho_s = rho_flat[support]
    wq_s = w_quad[support]
    samples = batch.samples
    n = samples.shape[0]
    m = coords_s.shape[0]
    if chunk is None:
        chunk = max(1, int(4e6 // max(m, 1)))
    out = np.empty(n)
    for start in range(0, n, chunk):
        blk = samples[start : start + chunk]
        pts = coords_s[None, :, :] + blk[:, None, :]
        vals = cubic_interp(axes, rho.reshape(shape), pts.reshape(-1, len(axes)))
        vals = vals.reshape(len(blk), m)
        np.clip(vals, DENSITY_FLOOR, None, out=vals)
        out[start : start + chunk] = func(rho_s[None, :], vals) @ wq_s
    return out


def _require_margin(rho, space, kernel):
    """Grid must extend >= 6 sqrt(max C*) beyond the density's support.

    Densities that are flat across the margin band are exempt: for them
    the constant extension used by the shifted evaluation realizes the
    unbounded/periodic idealization exactly (the truncated-uniform prior
    case), so no probability mass is shifted off the grid.
    """
    cov = np.asarray(kernel.theoretical_cov)
    if cov.size == 0 or cov.max(initial=0.0) <= 0:
        return
    margin = 6.0 * float(np.sqrt(np.linalg.eigvalsh(cov).max()))
    mask = rho > DENSITY_FLOOR
    if not mask.any():
        return
    idx = np.where(mask)
    for a, ax in enumerate(space.axes):
        lo = ax.nodes[idx[a].min()]
        hi = ax.nodes[idx[a].max()]
        if lo - ax.lo >= margin and ax.hi - hi >= margin:
            continue
        band = max(1, int(np.ceil(margin / ax.step)) + 1)
        rm = np.moveaxis(rho, a, 0)
        edges = np.concatenate([rm[:band].ravel(), rm[-band:].ravel()])
        if edges.max() - edges.min() <= 1e-12 * max(rho.max(), DENSITY_FLOOR):
            continue  # boundary-flat: constant extension is exact
        raise ValueError(
            f"grid margin along {ax.name!r} is below 6*sqrt(max C*) = {margin:.3g}; "
            "enlarge the grid or shrink dt"
        )


def kl_mc(
    rho: np.ndarray,
    kernel: FluctuationKernel,
    n: int,
    seed: int,
    space: ConfigSpace,
) -> DivergenceEstimate:
    """Monte Carlo mean Kullback-Leibler divergence under fluctuations.

    Estimates < int rho(q) ln(rho(q)/rho(q+w)) dq > over kernel draws w.
    """
    rho = _check_normalized(rho, space)
    if kernel.dim != space.ndim:
        raise ValueError("kernel dimension does not match the density axes")
    _require_margin(rho, space, kernel)
    batch = sample(kernel, n, seed)
    if np.all(batch.samples == 0.0):
        return DivergenceEstimate(value=0.0, stderr=0.0, n_samples=n, alpha=1.0)

    def integrand(r0, rshift):
        return r0 * (np.log(r0) - np.log(rshift))

    vals = _shifted_integrals(rho, space, batch, integrand)
    value = float(vals.mean())
    stderr = float(vals.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return DivergenceEstimate(value=value, stderr=stderr, n_samples=n, alpha=1.0)


def tsallis_mc(
    rho: np.ndarray,
    alpha: float,
    kernel: FluctuationKernel,
    n: int,
    seed: int,
    space: ConfigSpace,
) -> DivergenceEstimate:
    """Monte Carlo mean Tsallis divergence of order alpha.

    Estimates < (1/(alpha-1)) (int rho^alpha(q) / rho^{alpha-1}(q+w) dq - 1) >.
    Power ratios are evaluated in log space with an overflow clamp.
    """
    if alpha <= 0 or alpha == 1.0:
        raise ValueError("alpha must lie in (0,1) or (1,inf)")
    rho = _check_normalized(rho, space)
    if kernel.dim != space.ndim:
        raise ValueError("kernel dimension does not match the density axes")
    _require_margin(rho, space, kernel)
    batch = sample(kernel, n, seed)
    if np.all(batch.samples == 0.0):
        return DivergenceEstimate(value=0.0, stderr=0.0, n_samples=n, alpha=alpha)

    def integrand(r0, rshift):
        expo = alpha * np.log(r0) - (alpha - 1.0) * np.log(rshift)
        return np.exp(np.clip(expo, -700.0, 700.0))

    vals = (_shifted_integrals(rho, space, batch, integrand) - 1.0) / (alpha - 1.0)
    value = float(vals.mean())
    stderr = float(vals.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return DivergenceEstimate(value=value, stderr=stderr, n_samples=n, alpha=alpha)


@dataclass(frozen=True)
class SmallDtReport:
    dts: tuple[float, ...]
    values: tuple[float, ...]
    stderrs: tuple[float, ...]
    slope: float
    intercept: float
    fisher_prediction: float

    def to_json(self) -> str:
        return json.dumps(
            {
                "dts": list(self.dts),
                "values": list(self.values),
                "stderrs": list(self.stderrs),
                "slope": self.slope,
                "intercept": self.intercept,
                "fisher_prediction": self.fisher_prediction,
            },
            sort_keys=True,
        )

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["dt", "kl_mean", "kl_stderr"])
        for dt, v, s in zip(self.dts, self.values, self.stderrs):
            writer.writerow([f"{dt:.17g}", f"{v:.17g}", f"{s:.17g}"])
        return buf.getvalue()


def small_dt_limit_report(
    rho: np.ndarray,
    space: ConfigSpace,
    kernel_family,
    n: int,
    seed: int,
) -> SmallDtReport:
    """Fit <D_KL> against dt and compare with the Fisher prediction.

    ``kernel_family`` maps dt -> FluctuationKernel (or is a list of dts,
    in which case the kernel for each dt is built with `axis_kernel`).
    The predicted slope is (hbar/4) I_F for scalar spaces and
    (hbar/2) I_F for gravitational ones, with I_F the weighted Fisher
    functional; the factor difference mirrors the variance conventions
    of the two sectors.
    """
    from .fluctuation import axis_kernel

    if callable(kernel_family):
        raise TypeError("pass a list of dt values")
    dts = [float(dt) for dt in kernel_family]
    if len(dts) < 2 or max(dts) / min(dts) < 10.0 - 1e-12:
        raise ValueError("dt list must span at least one decade")
    if len(set(dts)) != len(dts):
        raise ValueError("dt values must be distinct")
    values, errs = [], []
    for i, dt in enumerate(sorted(dts, reverse=True)):
        kern = axis_kernel(space, dt)
        est = kl_mc(rho, kern, n, seed + i, space=space)
        values.append(est.value)
        errs.append(est.stderr)
    dts_sorted = sorted(dts, reverse=True)
    coeffs = np.polyfit(dts_sorted, values, 1)
    slope, intercept = float(coeffs[0]), float(coeffs[1])
    hbar = space.constants.hbar
    factor = 0.25 if space.kind == "scalar-lattice" else 0.5
    prediction = factor * hbar * fisher_functional(rho, space)
    return SmallDtReport(
        dts=tuple(dts_sorted),
        values=tuple(values),
        stderrs=tuple(errs),
        slope=slope,
        intercept=intercept,
        fisher_prediction=prediction,
    )
