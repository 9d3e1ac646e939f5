"""Madelung-pair dynamics and the functional Schrodinger evolution.

The same physical state is carried two ways: as the pair (rho, S) of
density and phase/action evolved by the coupled continuity + quantum
Hamilton-Jacobi equations, and as the complex amplitude Psi evolved by
the (linear) Schrodinger equation.  The two evolutions agree to second
order in grid and step, which is the equivalence this module exists to
check.

Conventions: H_perp = pi.g.pi + U, velocity field v = 2 N g dS, density
transport d rho/dt = -div(rho v), quantum potential
Q = -(hbar^2 / sqrt(rho)) d.(g d sqrt(rho)).  The sign convention for
the phase makes the oscillator ground pair evolve as S(t) = -E0 t.

The Madelung stepper is a staggered (symplectic-Euler-like) update on
the canonical pair: density first, by a conservative second-order
upwind-biased flux; phase second, with the quantum potential evaluated
at the half-step density average.  Both states clamp to zero on the
grid boundary; nodes under the density floor are masked from phase
updates and from every reported norm.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .configspace import ConfigSpace
from .constants import PhysicalConstants
from .grids import grad, gradient, mesh, trapezoid_weights, flux_divergence_matrix

DENSITY_FLOOR = 1e-30
AMPLITUDE_FLOOR = 1e-15


# ---------------------------------------------------------------------------
# states
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EnsembleState:
    """Madelung pair: density and phase/action on a configuration grid."""

    rho: np.ndarray
    S: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        if self.rho.shape != self.S.shape:
            raise ValueError("rho and S must share a grid")
        if (np.asarray(self.rho) < 0).any():
            raise ValueError("rho must be nonnegative")
        self.rho.setflags(write=False)
        self.S.setflags(write=False)

    def validate_normalized(self, space: ConfigSpace, tol: float = 1e-8):
        total = float(np.sum(self.rho * space.quad_weights()))
        if abs(total - 1.0) > tol:
            raise ValueError(f"ensemble density integral is {total!r}, not 1")


@dataclass(frozen=True)
class WaveState:
    """Complex amplitude on a configuration grid."""

    psi: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.psi.setflags(write=False)

    def norm(self, space: ConfigSpace) -> float:
        return float(np.sqrt(np.sum(np.abs(self.psi) ** 2 * space.quad_weights())))

    def normalized(self, space: ConfigSpace) -> "WaveState":
        return replace(self, psi=self.psi / self.norm(space))

    def validate_normalized(self, space: ConfigSpace, tol: float = 1e-8):
        n = self.norm(space)
        if abs(n - 1.0) > tol:
            raise ValueError(f"wave state norm is {n!r}, not 1")


def wave_from_ensemble(state: EnsembleState, constants: PhysicalConstants | None = None) -> WaveState:
    """Psi = sqrt(rho) exp(i S / (sqrt(alpha) hbar))."""
    constants = constants or PhysicalConstants()
    scale = np.sqrt(constants.alpha) * constants.hbar
    psi = np.sqrt(state.rho) * np.exp(1j * state.S / scale)
    return WaveState(psi=psi, time=state.time)


def ensemble_from_wave(
    state: WaveState,
    constants: PhysicalConstants | None = None,
    floor: float = AMPLITUDE_FLOOR,
    return_flags: bool = False,
):
    """Invert the wavefunctional map; phase unwrapped in axis-major order.

    Nodes with |Psi| below ``floor`` cannot support phase extraction and
    are flagged; their S is carried over from the nearest unwrap sweep
    but should not be trusted.
    """
    constants = constants or PhysicalConstants()
    scale = np.sqrt(constants.alpha) * constants.hbar
    amp = np.abs(state.psi)
    flags = amp < floor
    phase = np.angle(state.psi)
    for ax in range(phase.ndim):
        phase = np.unwrap(phase, axis=ax)
    ens = EnsembleState(rho=amp**2, S=scale * phase, time=state.time)
    if return_flags:
        return ens, flags
    return ens


# ---------------------------------------------------------------------------
# operators
# ---------------------------------------------------------------------------

def hamiltonian_matrix(space: ConfigSpace, constants: PhysicalConstants | None = None) -> sp.csr_matrix:
    """Sparse H = -hbar^2 d.(g d .) + U with Dirichlet-0 boundaries."""
    constants = constants or space.constants
    if not space.kinetic_is_diagonal():
        raise NotImplementedError("only diagonal kinetic forms are implemented")
    coeffs = space.kinetic_diag_fields()
    K = -(constants.hbar**2) * flux_divergence_matrix(coeffs, space.axes)
    V = sp.diags(space.potential_grid().ravel())
    return (K + V).tocsr()


def bohm_potential(rho: np.ndarray, space: ConfigSpace, constants: PhysicalConstants | None = None) -> np.ndarray:
    """Quantum potential Q = -(hbar^2/sqrt(rho)) d.(g d sqrt(rho)).

    Second-order stencils (one-sided at edges); nodes under the density
    floor are masked to zero.
    """
    constants = constants or space.constants
    rho = np.asarray(rho, dtype=float)
    if rho.shape != space.shape:
        raise ValueError("rho shape does not match the space grid")
    mask = rho > DENSITY_FLOOR
    root = np.sqrt(np.clip(rho, 0.0, None))
    hbar2 = constants.hbar**2
    div = np.zeros_like(rho)
    for a in range(space.ndim):
        ga = space.kinetic_diag(a)
        div += grad(ga * grad(root, space.axes, a), space.axes, a)
    out = np.zeros_like(rho)
    out[mask] = -hbar2 * div[mask] / root[mask]
    return out


def velocity_fields(S: np.ndarray, space: ConfigSpace, constants: PhysicalConstants) -> list[np.ndarray]:
    """Transport velocity v_A = 2 N g^{AA} d_A S."""
    n = constants.lapse
    return [2.0 * n * space.kinetic_diag(a) * grad(S, space.axes, a) for a in range(space.ndim)]


def classical_hamiltonian_field(S: np.ndarray, space: ConfigSpace) -> np.ndarray:
    """H_perp(q, dS) = sum_A g^{AA} (d_A S)^2 + U on the grid."""
    out = space.potential_grid().astype(float).copy()
    for a in range(space.ndim):
        g = grad(S, space.axes, a)
        out += space.kinetic_diag(a) * g * g
    return out


# ---------------------------------------------------------------------------
# Madelung evolution
# ---------------------------------------------------------------------------



class StencilPack:
    """Per-axis derivative matrices, their adjoints, and quadrature."""

    def __init__(self, space: ConfigSpace):
        from .grids import diff_matrix

        self.space = space
        self.D = [diff_matrix(ax).tocsr() for ax in space.axes]
        self.DT = [m.T.tocsr() for m in self.D]
        self.weights = trapezoid_weights(space.axes)

    def grad(self, f: np.ndarray, axis: int) -> np.ndarray:
        from .grids import apply_axis_matrix

        return apply_axis_matrix(self.D[axis], f, axis)

    def grad_adjoint(self, f: np.ndarray, axis: int) -> np.ndarray:
        from .grids import apply_axis_matrix

        return apply_axis_matrix(self.DT[axis], f, axis)


def continuity_rate(rho, S, space, constants, pack: StencilPack | None = None):
    """d rho/dt = -(2N/w) sum_A D_A^T(w rho g^A D_A S).

    This is the exact gradient of the discrete ensemble Hamiltonian with
    respect to the nodal phase, so the rate sums to zero over the grid
    (mass conservation to roundoff) and pairs canonically with the
    phase kick below.
    """
    pack = pack or StencilPack(space)
    w = pack.weights
    out = np.zeros_like(rho)
    for a in range(space.ndim):
        ga = space.kinetic_diag(a)
        out += pack.grad_adjoint(w * rho * ga * pack.grad(S, a), a)
    return -2.0 * constants.lapse * out / w


def quantum_potential_variational(rho, space, constants, pack: StencilPack | None = None,
                                  rel_floor: float = 0.0):
    """Bohm potential in discrete-variational form.

    Q_var = (hbar^2/4) [ -(D rho / rho) g (D rho / rho)
                         + (2/w) D^T(w g D rho / rho) ],
    the exact nodal gradient of the Fisher term of the discrete action.
    With ``rel_floor`` > 0 the density is regularized by eps = rel_floor
    * max(rho) and the result tapered to zero over three decades above
    the floor: the transported far tail carries only stencil noise, and
    tapering there keeps the phase smooth instead of cliff-edged.
    """
    pack = pack or StencilPack(space)
    peak = float(rho.max())
    eps = rel_floor * peak
    reg = rho + eps if eps > 0 else np.clip(rho, DENSITY_FLOOR, None)
    w = pack.weights
    hbar2 = constants.hbar**2
    out = np.zeros_like(rho)
    for a in range(space.ndim):
        ga = space.kinetic_diag(a)
        ratio = pack.grad(rho, a) / reg
        out -= ga * ratio * ratio
        out += 2.0 * pack.grad_adjoint(w * ga * ratio, a) / w
    q = 0.25 * hbar2 * out
    if rel_floor > 0 and peak > 0:
        with np.errstate(divide="ignore"):
            level = np.log10(np.maximum(rho / peak, 1e-300))
        x = np.clip((level - np.log10(rel_floor)) / 3.0, 0.0, 1.0)
        q = q * (x * x * (3.0 - 2.0 * x))
    return q


@dataclass
class MadelungRun:
    states: list
    renorm_log: list

    def final(self) -> EnsembleState:
        return self.states[-1]

    def to_csv(self, space: ConfigSpace) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        names = [ax.name for ax in space.axes]
        writer.writerow(["time"] + names + ["rho", "S"])
        coords = [c.ravel() for c in mesh(space.axes)]
        for st in self.states:
            r, s = st.rho.ravel(), st.S.ravel()
            for i in range(r.size):
                writer.writerow(
                    [f"{st.time:.17g}"]
                    + [f"{c[i]:.17g}" for c in coords]
                    + [f"{r[i]:.17g}", f"{s[i]:.17g}"]
                )
        return buf.getvalue()


def madelung_stability_ratios(state: EnsembleState, space: ConfigSpace, constants: PhysicalConstants, dt: float) -> dict:
    vel = velocity_fields(state.S, space, constants)
    adv = 0.0
    disp = 0.0
    for a, ax in enumerate(space.axes):
        vmax = float(np.abs(vel[a]).max())
        adv = max(adv, vmax * dt / ax.step)
        gmax = float(np.abs(space.kinetic_diag(a)).max())
        disp = max(disp, constants.hbar * constants.lapse * gmax * (np.pi / ax.step) ** 2 * dt)
    return {"advective_cfl": adv, "dispersive_cfl": disp}


def evolve_madelung(
    state: EnsembleState,
    space: ConfigSpace,
    constants: PhysicalConstants | None = None,
    dt: float = 1e-4,
    steps: int = 1,
    quantum_potential: bool = True,
    store_every: int | None = None,
    renorm_tol: float = 1e-6,
    phase_floor: float = 1e-13,
) -> MadelungRun:
    """March the continuity + quantum Hamilton-Jacobi pair.

    Density moves first through the conservative upwind flux; the phase
    kick then sees the quantum potential of the transported density.
    The density is renormalized every step and the factor logged; a
    factor drifting past 1 +- renorm_tol aborts the run.

    Phase updates are frozen on nodes carrying less than ``phase_floor``
    of the peak density (as well as under the absolute density floor):
    transported tails develop kinks whose quantum potential is pure
    stencil noise.  Frozen tail nodes hold a relative mass of order
    ``phase_floor`` and are excluded from every reported norm.
    """
    constants = constants or space.constants
    state.validate_normalized(space)
    ratios = madelung_stability_ratios(state, space, constants, dt)
    if ratios["advective_cfl"] > 0.9:
        raise ValueError(f"advective_cfl = {ratios['advective_cfl']:.3g} exceeds 0.9")
    if ratios["dispersive_cfl"] > 2.0:
        raise ValueError(f"dispersive_cfl = {ratios['dispersive_cfl']:.3g} exceeds 2.0")
    if store_every is None:
        store_every = steps
    pack = StencilPack(space)
    w = pack.weights
    lapse = constants.lapse
    pot = space.potential_grid()
    gdiag = space.kinetic_diag_fields()
    t = state.time
    # log-density formulation: r = ln(rho + eps) with a smooth relative
    # floor.  Every 1/rho of the (rho, S) system becomes a polynomial in
    # D r, so under-resolved tails cannot amplify stencil noise (the
    # failure mode of direct density stepping).
    peak = float(state.rho.max())
    eps = phase_floor * peak
    ln_eps = np.log(eps)
    r = np.log(state.rho + eps)
    S = state.S.astype(float).copy()
    states = [EnsembleState(rho=state.rho.copy(), S=S.copy(), time=t)]
    renorms = []
    edge = _boundary_mask(space.shape)

    def density(rfield):
        rho = np.exp(rfield) - eps
        np.clip(rho, 0.0, None, out=rho)
        return rho

    for k in range(steps):
        # drift: d r/dt = -2N [ g Dr.DS + Div(g DS) ]
        rate = np.zeros_like(r)
        for a in range(space.ndim):
            ds = pack.grad(S, a)
            rate += gdiag[a] * pack.grad(r, a) * ds + pack.grad(gdiag[a] * ds, a)
        r = r - dt * 2.0 * lapse * rate
        r[edge] = ln_eps
        np.logaddexp(r, ln_eps, out=r)  # smooth floor
        mass = float(np.sum(np.exp(r) * w))
        total = mass - eps * float(np.sum(w))  # subtract the floor's volume
        if abs(total - 1.0) > renorm_tol:
            raise RuntimeError(
                f"renormalization factor {total!r} outside 1 +- {renorm_tol} at step {k}"
            )
        renorms.append(total)
        r = r - np.log(total)
        # kick: the phase sees the freshly transported density (rho on
        # integer steps, S on half steps) -- the staggering that keeps the
        # canonical pair inside the omega*dt <= 2 stability window
        hj = pot.astype(float).copy()
        for a in range(space.ndim):
            ds = pack.grad(S, a)
            hj += gdiag[a] * ds * ds
            if quantum_potential:
                dr = pack.grad(r, a)
                hj -= constants.hbar**2 * (
                    0.25 * gdiag[a] * dr * dr + 0.5 * pack.grad(gdiag[a] * dr, a)
                )
        S = S - dt * lapse * hj
        t += dt
        if (k + 1) % store_every == 0 or k == steps - 1:
            rho_out = density(r)
            rho_out = rho_out / float(np.sum(rho_out * w))
            states.append(EnsembleState(rho=rho_out, S=S.copy(), time=t))
    return MadelungRun(states=states, renorm_log=renorms)


def _boundary_mask(shape):
    mask = np.zeros(shape, dtype=bool)
    for a in range(len(shape)):
        sl = [slice(None)] * len(shape)
        sl[a] = 0
        mask[tuple(sl)] = True
        sl[a] = -1
        mask[tuple(sl)] = True
    return mask


# ---------------------------------------------------------------------------
# Schrodinger evolution
# ---------------------------------------------------------------------------

@dataclass
class SchrodingerRun:
    states: list
    norm_drift: float  # max |norm - 1| over stored steps

    def final(self) -> WaveState:
        return self.states[-1]

    def to_csv(self, space: ConfigSpace) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        names = [ax.name for ax in space.axes]
        writer.writerow(["time"] + names + ["re_psi", "im_psi"])
        coords = [c.ravel() for c in mesh(space.axes)]
        for st in self.states:
            p = st.psi.ravel()
            for i in range(p.size):
                writer.writerow(
                    [f"{st.time:.17g}"]
                    + [f"{c[i]:.17g}" for c in coords]
                    + [f"{p[i].real:.17g}", f"{p[i].imag:.17g}"]
                )
        return buf.getvalue()


def evolve_schrodinger(
    state: WaveState,
    space: ConfigSpace,
    constants: PhysicalConstants | None = None,
    dt: float = 1e-4,
    steps: int = 1,
    store_every: int | None = None,
    norm_tol: float = 1e-10,
) -> SchrodingerRun:
    """Unitary midpoint (Crank-Nicolson) stepping of i hbar dPsi/dt = H Psi."""
    constants = constants or space.constants
    state.validate_normalized(space)
    if store_every is None:
        store_every = steps
    H = hamiltonian_matrix(space, constants) * constants.lapse
    z = 1j * dt / (2.0 * constants.hbar)
    n = H.shape[0]
    eye = sp.identity(n, format="csc", dtype=complex)
    A = (eye + z * H).tocsc()
    B = (eye - z * H).tocsr()
    try:
        solver = spla.splu(A)
    except RuntimeError as exc:  # pragma: no cover - singular only if dt absurd
        raise RuntimeError(f"Crank-Nicolson factorization failed: {exc}") from exc
    w = trapezoid_weights(space.axes).ravel()
    psi = state.psi.ravel().astype(complex)
    t = state.time
    states = [WaveState(psi=psi.reshape(space.shape).copy(), time=t)]
    drift = 0.0
    for k in range(steps):
        psi = solver.solve(B @ psi)
        t += dt
        nrm = float(np.sqrt(np.sum(np.abs(psi) ** 2 * w)))
        drift = max(drift, abs(nrm - 1.0))
        if abs(nrm - 1.0) > norm_tol * (k + 1):
            raise RuntimeError(
                f"norm drift {abs(nrm - 1.0):.3e} exceeds {norm_tol}/step at step {k}"
            )
        if (k + 1) % store_every == 0 or k == steps - 1:
            states.append(WaveState(psi=psi.reshape(space.shape).copy(), time=t))
    return SchrodingerRun(states=states, norm_drift=drift)


def energy_expectation(state: WaveState, space: ConfigSpace, constants: PhysicalConstants | None = None) -> float:
    constants = constants or space.constants
    H = hamiltonian_matrix(space, constants)
    w = trapezoid_weights(space.axes).ravel()
    psi = state.psi.ravel()
    val = np.vdot(psi * w, H @ psi) / np.vdot(psi * w, psi)
    return float(val.real)


# ---------------------------------------------------------------------------
# ground state
# ---------------------------------------------------------------------------

def ground_state(
    space: ConfigSpace,
    constants: PhysicalConstants | None = None,
    tol: float = 1e-10,
    max_iter: int = 200,
    initial: np.ndarray | None = None,
):
    """Lowest eigenpair of the discrete Hamiltonian.

    Inverse iteration with a sparse factorization where the grid allows
    it; large grids fall back to LOBPCG seeded by ``initial`` (or a
    potential-shaped Gaussian).  Returns (energy, WaveState); the
    relative eigenresidual is at most ``tol``.
    """
    constants = constants or space.constants
    for a in range(space.ndim):
        if not (space.kinetic_diag(a) > 0).all():
            raise ValueError("ground_state needs a positive-definite kinetic form")
    H = hamiltonian_matrix(space, constants)
    n = H.shape[0]
    w = trapezoid_weights(space.axes).ravel()

    def residual(vec, lam):
        r = H @ vec - lam * vec
        return float(np.linalg.norm(r) / (abs(lam) * np.linalg.norm(vec)))

    if initial is not None:
        x = initial.ravel().astype(float).copy()
    else:
        coords = mesh(space.axes)
        r2 = sum(c**2 for c in coords)
        x = np.exp(-0.5 * r2 / max(1.0, float(np.sqrt(r2.max())))).ravel()
    x /= np.linalg.norm(x)

    if n <= 300_000:
        try:
            lu = spla.splu(H.tocsc())
        except (RuntimeError, MemoryError):
            lu = None
        if lu is not None:
            lam = float(x @ (H @ x))
            for it in range(max_iter):
                x = lu.solve(x)
                x /= np.linalg.norm(x)
                lam = float(x @ (H @ x))
                if residual(x, lam) <= tol:
                    break
            else:
                raise RuntimeError(
                    f"inverse iteration did not reach tol={tol} in {max_iter} steps "
                    f"(residual {residual(x, lam):.3e})"
                )
            psi = x / np.sqrt(np.sum(x**2 * w))
            if psi[np.argmax(np.abs(psi))] < 0:
                psi = -psi
            return lam, WaveState(psi=psi.reshape(space.shape).astype(complex), time=0.0)

    # matrix-free path for large grids
    X = x[:, None]
    vals, vecs = spla.lobpcg(H, X, tol=tol * 0.1, maxiter=max(600, max_iter), largest=False)
    lam = float(vals[0])
    x = vecs[:, 0]
    if residual(x, lam) > tol:
        raise RuntimeError(f"lobpcg residual {residual(x, lam):.3e} exceeds tol={tol}")
    psi = x / np.sqrt(np.sum(x**2 * w))
    if psi[np.argmax(np.abs(psi))] < 0:
        psi = -psi
    return lam, WaveState(psi=psi.reshape(space.shape).astype(complex), time=0.0)
