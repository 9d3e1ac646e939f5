"""Finite-dimensional configuration spaces and the supermetric algebra.

Three families of spaces are built here:

* periodic lattices of a massive scalar field (one axis per site),
* the homogeneous-isotropic gravitational minisuperspace (scale factor a),
* the coupled (a, phi) model with a homogeneous massless scalar.

Every space stores the full Hamiltonian data in the convention

    H_perp(q, pi) = pi_A g^{AB}(q) pi_B + U(q),

with the lapse kept outside (it multiplies H_perp wherever the dynamics
needs it).  The stored ``measure`` field is the spatial volume density
sqrt(h) restricted to the model; configuration-space integrals themselves
use the flat (kappa = 0) trapezoid quadrature, and ``measure`` only enters
formulas that carry sqrt(h) explicitly.

The gravitational kinetic coefficients are read from a table generated by
a one-time symbolic reduction (tools/derive_frw_coefficients.py), not
hard-coded; the table is cross-checked against sqrt(h) = a^3 and the
constant-curvature value of the intrinsic scalar curvature.
"""

from __future__ import annotations

import importlib.resources
import json
from dataclasses import dataclass, field

import numpy as np

from .constants import PhysicalConstants
from .grids import Axis, as_axis, grid_shape, mesh, trapezoid_weights

_TWO_PI = 2.0 * np.pi


# ---------------------------------------------------------------------------
# DeWitt supermetric algebra
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SuperMetricSample:
    """Rank-4 supermetric pair at a single metric point."""

    lower: np.ndarray  # G_ijkl
    upper: np.ndarray  # G^ijkl


def dewitt_supermetric(h: np.ndarray) -> SuperMetricSample:
    """Supermetric pair at the 3-metric ``h``.

    Uses the index-symmetric form

        G_ijkl = (h_ik h_jl + h_il h_jk - h_ij h_kl) / 2
        G^ijkl = (h^ik h^jl + h^il h^jk - 2 h^ij h^kl) / 2

    which is the unique symmetrization satisfying the stated contraction
    property G_ijkl G^klmn = (delta_i^m delta_j^n + delta_i^n delta_j^m)/2.
    (The repeated-index variant sometimes quoted cannot satisfy it.)
    """
    h = np.asarray(h, dtype=float)
    if h.shape != (3, 3):
        raise ValueError("h must be a 3x3 matrix")
    if not np.allclose(h, h.T, rtol=0, atol=1e-12 * max(1.0, np.abs(h).max())):
        raise ValueError("h must be symmetric")
    eigs = np.linalg.eigvalsh(h)
    if eigs.min() <= 0:
        raise ValueError("h must be positive definite")
    hinv = np.linalg.inv(h)
    lower = 0.5 * (
        np.einsum("ik,jl->ijkl", h, h)
        + np.einsum("il,jk->ijkl", h, h)
        - np.einsum("ij,kl->ijkl", h, h)
    )
    upper = 0.5 * (
        np.einsum("ik,jl->ijkl", hinv, hinv)
        + np.einsum("il,jk->ijkl", hinv, hinv)
        - 2.0 * np.einsum("ij,kl->ijkl", hinv, hinv)
    )
    lower.setflags(write=False)
    upper.setflags(write=False)
    return SuperMetricSample(lower=lower, upper=upper)


def sym_tensor_basis() -> np.ndarray:
    """Frobenius-orthonormal basis of symmetric 3x3 matrices, shape (6,3,3).

    In this basis the symmetrized identity on symmetric tensors maps to
    the 6x6 identity, so rank-4 contractions become matrix products.
    """
    basis = np.zeros((6, 3, 3))
    m = 0
    for i in range(3):
        basis[m, i, i] = 1.0
        m += 1
    s = 1.0 / np.sqrt(2.0)
    for i in range(3):
        for j in range(i + 1, 3):
            basis[m, i, j] = s
            basis[m, j, i] = s
            m += 1
    basis.setflags(write=False)
    return basis


def rank4_to_matrix(g4: np.ndarray) -> np.ndarray:
    """6x6 matrix of a rank-4 symmetric form in the orthonormal basis."""
    basis = sym_tensor_basis()
    return np.einsum("aij,ijkl,bkl->ab", basis, g4, basis)


def contraction_identity_error(sample: SuperMetricSample) -> float:
    """Max-norm deviation of G_ijkl G^klmn from the symmetrized identity."""
    prod = np.einsum("ijkl,klmn->ijmn", sample.lower, sample.upper)
    eye = np.eye(3)
    sym_id = 0.5 * (
        np.einsum("im,jn->ijmn", eye, eye) + np.einsum("in,jm->ijmn", eye, eye)
    )
    return float(np.abs(prod - sym_id).max())


# ---------------------------------------------------------------------------
# Configuration spaces
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LatticeSpec:
    sites: int
    spacing: float
    boundary: str = "periodic"

    def __post_init__(self):
        if self.sites < 1:
            raise ValueError("need at least one lattice site")
        if not self.spacing > 0:
            raise ValueError("lattice spacing must be positive")
        if self.boundary != "periodic":
            raise ValueError("only periodic lattices are implemented")


@dataclass(frozen=True)
class ConfigSpace:
    """Discretized configuration manifold with Hamiltonian data."""

    axes: tuple[Axis, ...]
    measure: np.ndarray      # broadcastable to the grid shape
    kinetic: np.ndarray      # (..., d, d), broadcastable to (*grid, d, d)
    potential: np.ndarray    # grid shape
    kind: str                # 'scalar-lattice' | 'frw' | 'coupled'
    constants: PhysicalConstants
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        d = len(self.axes)
        if self.kinetic.shape[-2:] != (d, d):
            raise ValueError("kinetic field must end in a (d, d) block")
        k = self.kinetic
        if not np.allclose(k, np.swapaxes(k, -1, -2), rtol=0, atol=1e-13 * max(1.0, np.abs(k).max())):
            raise ValueError("kinetic form must be symmetric at every node")
        interior = np.broadcast_to(self.measure, self.shape)
        if d == 1:
            inner = interior[1:-1]
        else:
            inner = interior[(slice(1, -1),) * d]
        if inner.size and not (inner > 0).all():
            raise ValueError("measure must be positive on interior nodes")
        for arr in (self.measure, self.kinetic, self.potential):
            if isinstance(arr, np.ndarray):
                arr.setflags(write=False)

    @property
    def shape(self) -> tuple[int, ...]:
        return grid_shape(self.axes)

    @property
    def ndim(self) -> int:
        return len(self.axes)

    def coords(self) -> list[np.ndarray]:
        return mesh(self.axes)

    def quad_weights(self) -> np.ndarray:
        """Flat (kappa = 0) trapezoid quadrature weights."""
        return trapezoid_weights(self.axes)

    def kinetic_diag(self, axis: int) -> np.ndarray:
        """Diagonal kinetic coefficient g^{AA}(q) broadcast to the grid."""
        full = np.broadcast_to(self.kinetic, self.shape + (self.ndim, self.ndim))
        return full[..., axis, axis]

    def kinetic_diag_fields(self) -> list[np.ndarray]:
        return [self.kinetic_diag(a) for a in range(self.ndim)]

    def kinetic_is_diagonal(self) -> bool:
        k = np.asarray(self.kinetic)
        mask = ~np.eye(k.shape[-1], dtype=bool)
        return bool(np.abs(k[..., mask]).max(initial=0.0) == 0.0)

    def potential_grid(self) -> np.ndarray:
        return np.broadcast_to(self.potential, self.shape)

    def measure_grid(self) -> np.ndarray:
        return np.broadcast_to(self.measure, self.shape)


def _load_frw_table() -> dict:
    ref = importlib.resources.files("entroq").joinpath("data/frw_reduction.json")
    return json.loads(ref.read_text())


def _table_value(entry: dict, grav: float, volume: float, curvature: int = 1) -> float:
    num, den = entry["rational"]
    val = (num / den) * np.pi ** entry["pi_power"]
    val *= grav ** entry["grav_power"] * volume ** entry["volume_power"]
    if "curvature_power" in entry:
        val *= curvature ** entry["curvature_power"]
    return val


def build_scalar_lattice_space(
    spec: LatticeSpec,
    mass: float,
    axes,
    constants: PhysicalConstants | None = None,
) -> ConfigSpace:
    """Periodic massive-scalar lattice with trapezoid-rule Hamiltonian.

    One configuration axis per site.  The potential is the discretized
    integral of (grad phi)^2/2 + m^2 phi^2/2 and the kinetic form is
    delta^{AB}/(2 dx), so that pi g pi + U reproduces the field-theory
    Hamiltonian under the trapezoid rule.

    ``axes`` is a single (lo, hi, n) bound applied to every site, or a
    list with one bound per site.
    """
    if constants is None:
        constants = PhysicalConstants()
    if mass < 0:
        raise ValueError("mass must be nonnegative")
    n = spec.sites
    dx = spec.spacing
    if isinstance(axes, (tuple, list)) and len(axes) and np.isscalar(axes[0]):
        bounds = [axes] * n
    else:
        bounds = list(axes)
        if len(bounds) != n:
            raise ValueError("need one axis bound per lattice site")
    axs = tuple(as_axis(b, default_name=f"phi{i}") for i, b in enumerate(bounds))
    phis = mesh(axs)
    pot = np.zeros(grid_shape(axs))
    for i in range(n):
        pot = pot + 0.5 * dx * mass**2 * phis[i] ** 2
        # periodic gradient term; the n = 1 wrap difference vanishes identically
        jnext = (i + 1) % n
        if n > 1:
            pot = pot + 0.5 * dx * ((phis[jnext] - phis[i]) / dx) ** 2
    kin = np.eye(n) / (2.0 * dx)
    return ConfigSpace(
        axes=axs,
        measure=np.ones(()),
        kinetic=kin,
        potential=pot,
        kind="scalar-lattice",
        constants=constants,
        meta={"sites": n, "spacing": dx, "mass": float(mass), "boundary": spec.boundary},
    )


def build_frw_space(
    curvature: int,
    fiducial_volume: float,
    a_axis,
    constants: PhysicalConstants | None = None,
) -> ConfigSpace:
    """Homogeneous-isotropic minisuperspace in the scale factor a.

    Kinetic coefficient and potential come from the generated reduction
    table; the kinetic form is negative definite (conformal-mode sign of
    the supermetric) and the measure is sqrt(h) = a^3.
    """
    if constants is None:
        constants = PhysicalConstants()
    if curvature not in (-1, 0, 1):
        raise ValueError("curvature must be one of -1, 0, +1")
    if not fiducial_volume > 0:
        raise ValueError("fiducial volume must be positive")
    ax = as_axis(a_axis, default_name="a")
    if ax.lo <= 0:
        raise ValueError("the scale-factor axis must start at a > 0")
    table = _load_frw_table()
    a = ax.nodes
    g_aa = _table_value(table["kinetic_aa"], constants.grav, fiducial_volume) * a ** table["kinetic_aa"]["a_power"]
    pot = (
        _table_value(table["potential"], constants.grav, fiducial_volume, curvature)
        * a ** table["potential"]["a_power"]
    )
    kin = g_aa[:, None, None]
    return ConfigSpace(
        axes=(ax,),
        measure=a ** table["measure_a_power"],
        kinetic=kin,
        potential=pot,
        kind="frw",
        constants=constants,
        meta={
            "curvature": curvature,
            "fiducial_volume": float(fiducial_volume),
            "a_axis": (ax.lo, ax.hi, ax.n),
        },
    )


def build_coupled_space(
    frw: ConfigSpace,
    phi_axis,
    constants: PhysicalConstants | None = None,
) -> ConfigSpace:
    """Couple a homogeneous massless scalar to an FRW space.

    The kinetic form is block-diagonal: the a-block is taken node-for-node
    from the FRW space and the phi-block is 1/(2 V0 a^3) from the same
    symbolic reduction.  The scalar is massless and homogeneous, so it
    contributes no potential.
    """
    if frw.kind != "frw":
        raise ValueError("build_coupled_space needs an frw ConfigSpace")
    if constants is None:
        constants = frw.constants
    table = _load_frw_table()
    pax = as_axis(phi_axis, default_name="phi")
    aax = frw.axes[0]
    v0 = frw.meta["fiducial_volume"]
    a = aax.nodes
    g_aa = frw.kinetic_diag(0)
    g_pp = _table_value(table["kinetic_phiphi"], constants.grav, v0) * a ** table["kinetic_phiphi"]["a_power"]
    kin = np.zeros((aax.n, 1, 2, 2))
    kin[:, 0, 0, 0] = g_aa
    kin[:, 0, 1, 1] = g_pp
    pot = np.broadcast_to(frw.potential_grid()[:, None], (aax.n, pax.n)).copy()
    return ConfigSpace(
        axes=(aax, pax),
        measure=(a ** table["measure_a_power"])[:, None],
        kinetic=kin,
        potential=pot,
        kind="coupled",
        constants=constants,
        meta={
            "curvature": frw.meta["curvature"],
            "fiducial_volume": v0,
            "a_axis": (aax.lo, aax.hi, aax.n),
            "phi_axis": (pax.lo, pax.hi, pax.n),
        },
    )


def frw_kinetic_coefficient(a, constants: PhysicalConstants, fiducial_volume: float) -> np.ndarray:
    """g^{aa}(a) from the reduction table (negative definite)."""
    table = _load_frw_table()
    return _table_value(table["kinetic_aa"], constants.grav, fiducial_volume) * np.asarray(a, dtype=float) ** table["kinetic_aa"]["a_power"]


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def space_to_json(space: ConfigSpace) -> str:
    """Serialize a ConfigSpace (axes, measure, kinetic, potential) to JSON."""
    doc = {
        "kind": space.kind,
        "axes": [[ax.name, ax.lo, ax.hi, ax.n] for ax in space.axes],
        "measure": np.broadcast_to(space.measure, space.shape).tolist(),
        "kinetic": np.broadcast_to(
            space.kinetic, space.shape + (space.ndim, space.ndim)
        ).tolist(),
        "potential": space.potential_grid().tolist(),
        "constants": {
            "hbar": space.constants.hbar,
            "grav": space.constants.grav,
            "lapse": space.constants.lapse,
            "shift": space.constants.shift,
            "alpha": space.constants.alpha,
        },
        "meta": space.meta,
    }
    return json.dumps(doc, sort_keys=True)


def space_from_json(text: str) -> ConfigSpace:
    doc = json.loads(text)
    axes = tuple(Axis(str(n), float(lo), float(hi), int(num)) for n, lo, hi, num in doc["axes"])
    return ConfigSpace(
        axes=axes,
        measure=np.asarray(doc["measure"], dtype=float),
        kinetic=np.asarray(doc["kinetic"], dtype=float),
        potential=np.asarray(doc["potential"], dtype=float),
        kind=doc["kind"],
        constants=PhysicalConstants(**doc["constants"]),
        meta=doc.get("meta", {}),
    )
