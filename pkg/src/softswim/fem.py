"""Corotated triangle FEM with variational implicit Euler stepping.

Each time step minimizes inertia + elastic + muscle energy (plus a
stiffness-proportional dissipation term) over the new positions with a
Newton line-search solver; velocities follow by finite differencing the
accepted positions, so damping is already baked into them. The dissipation
term uses the rest-state stiffness matrix, whose null space contains the
rigid modes, which keeps free-body momentum exactly conserved.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .actuation import ActuationParams, DEFAULT_MUSCLE_STIFFNESS, activation_signal
from .errors import (
    ConvergenceError,
    DegenerateGeometryError,
    InvertedElementError,
    SingularSystemError,
)
from .geometry import Region, SwimmerMesh


@dataclass(frozen=True)
class Material:
    """Isotropic material with stiffness-proportional damping."""

    youngs_modulus: float
    poisson_ratio: float
    density: float
    damping: float = 0.01  # seconds

    def __post_init__(self):
        if self.youngs_modulus <= 0:
            raise ValueError("youngs_modulus must be positive")
        if not 0.0 <= self.poisson_ratio < 0.5:
            raise ValueError("poisson_ratio must be in [0, 0.5)")
        if self.density <= 0:
            raise ValueError("density must be positive")
        if self.damping < 0:
            raise ValueError("damping must be non-negative")

    def lame(self) -> tuple[float, float]:
        """Plane-strain Lame parameters (mu, lambda)."""
        e, nu = self.youngs_modulus, self.poisson_ratio
        mu = e / (2.0 * (1.0 + nu))
        lam = e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
        return mu, lam


def default_materials() -> dict[Region, Material]:
    """Stiffness values for the filled simulated body; the spine is about
    twice as stiff as the soft flesh and both carry the same density."""
    soft = Material(youngs_modulus=6.5e4, poisson_ratio=0.45, density=900.0)
    spine = Material(youngs_modulus=1.3e5, poisson_ratio=0.45, density=900.0)
    return {
        Region.SPINE: spine,
        Region.SOFT: soft,
        Region.UPPER_MUSCLE: soft,
        Region.LOWER_MUSCLE: soft,
    }


class BoundaryKind(str, Enum):
    FREE = "free"
    PINNED_HEAD = "pinned_head"


@dataclass(frozen=True)
class SimState:
    """Positions (n, 2), velocities (n, 2) and simulation time."""

    positions: np.ndarray
    velocities: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        q = np.asarray(self.positions, dtype=float)
        v = np.asarray(self.velocities, dtype=float)
        if q.shape != v.shape or q.ndim != 2 or q.shape[1] != 2:
            raise ValueError("positions and velocities must both be (n, 2)")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(v))):
            raise ValueError("state contains non-finite entries")
        object.__setattr__(self, "positions", q)
        object.__setattr__(self, "velocities", v)

    @classmethod
    def rest(cls, mesh: SwimmerMesh) -> "SimState":
        return cls(mesh.vertices.copy(), np.zeros_like(mesh.vertices), 0.0)


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.01
    solver_tol: float = 1e-8
    max_newton_iters: int = 40
    materials: dict = field(default_factory=default_materials)
    gravity: tuple[float, float] = (0.0, 0.0)
    boundary: BoundaryKind = BoundaryKind.FREE
    thickness: float = 1.0
    fixed_vertices: tuple[int, ...] = ()

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.solver_tol <= 0:
            raise ValueError("solver_tol must be positive")
        if self.max_newton_iters < 1:
            raise ValueError("max_newton_iters must be at least 1")
        if self.thickness <= 0:
            raise ValueError("thickness must be positive")

    def with_(self, **kwargs) -> "SimConfig":
        return replace(self, **kwargs)


@dataclass
class StepInfo:
    residual: float
    iterations: int
    converged: bool


# ---------------------------------------------------------------------------
# Element kinematics and corotated energy density
# ---------------------------------------------------------------------------

# dD_s/d(local dof) for local dof order [x0, y0, x1, y1, x2, y2]
_DOF_EDGE_DERIVS = np.array([
    [[-1.0, -1.0], [0.0, 0.0]],
    [[0.0, 0.0], [-1.0, -1.0]],
    [[1.0, 0.0], [0.0, 0.0]],
    [[0.0, 0.0], [1.0, 0.0]],
    [[0.0, 1.0], [0.0, 0.0]],
    [[0.0, 0.0], [0.0, 1.0]],
])


def deformation_gradient(mesh: SwimmerMesh, positions: np.ndarray, element: int) -> np.ndarray:
    """F = D_s D_m^{-1} for one element at the given deformed positions."""
    tri = mesh.triangles[element]
    rest = mesh.vertices[tri]
    dm = np.column_stack([rest[1] - rest[0], rest[2] - rest[0]])
    det = dm[0, 0] * dm[1, 1] - dm[0, 1] * dm[1, 0]
    if abs(det) < 1e-18:
        raise DegenerateGeometryError(
            f"element {element} has a singular rest edge matrix"
        )
    p = np.asarray(positions, dtype=float)[tri]
    ds = np.column_stack([p[1] - p[0], p[2] - p[0]])
    return ds @ np.linalg.inv(dm)


def _det2(F):
    return F[..., 0, 0] * F[..., 1, 1] - F[..., 0, 1] * F[..., 1, 0]


def _polar_rotation(F):
    """Closest rotation to each F (2D closed form, requires det F > 0)."""
    g1 = F[..., 0, 0] + F[..., 1, 1]
    g2 = F[..., 0, 1] - F[..., 1, 0]
    r = np.sqrt(g1 * g1 + g2 * g2)
    R = np.empty_like(F)
    R[..., 0, 0] = g1 / r
    R[..., 0, 1] = g2 / r
    R[..., 1, 0] = -g2 / r
    R[..., 1, 1] = g1 / r
    return R, g1, g2, r


def _area_gradient_matrix(F):
    """dJ/dF for 2x2 matrices (the cofactor matrix)."""
    out = np.empty_like(F)
    out[..., 0, 0] = F[..., 1, 1]
    out[..., 0, 1] = -F[..., 1, 0]
    out[..., 1, 0] = -F[..., 0, 1]
    out[..., 1, 1] = F[..., 0, 0]
    return out


class FemModel:
    """Precomputed assembly operators for one mesh + config pair."""

    def __init__(self, mesh: SwimmerMesh, cfg: SimConfig):
        self.mesh = mesh
        self.cfg = cfg
        nv = mesh.n_vertices
        ne = mesh.n_triangles
        self.n_dof = 2 * nv

        tris = mesh.triangles
        rest = mesh.vertices[tris]
        dm = np.stack([rest[:, 1] - rest[:, 0], rest[:, 2] - rest[:, 0]], axis=-1)
        det = _det2(dm)
        if np.any(np.abs(det) < 1e-18):
            raise DegenerateGeometryError("mesh contains a degenerate rest element")
        inv = np.empty_like(dm)
        inv[:, 0, 0] = dm[:, 1, 1] / det
        inv[:, 0, 1] = -dm[:, 0, 1] / det
        inv[:, 1, 0] = -dm[:, 1, 0] / det
        inv[:, 1, 1] = dm[:, 0, 0] / det
        self.B = inv
        self.area = mesh.rest_area.copy()
        self.coeff = self.area * cfg.thickness

        # dF/d(local dof): G[e, k] = S_k @ B_e
        self.G = np.einsum("kab,ebc->ekac", _DOF_EDGE_DERIVS, self.B)

        self.dof = np.empty((ne, 6), dtype=np.int64)
        self.dof[:, 0::2] = 2 * tris
        self.dof[:, 1::2] = 2 * tris + 1
        self._rows = np.repeat(self.dof, 6, axis=1).ravel()
        self._cols = np.tile(self.dof, (1, 6)).ravel()

        mats = [cfg.materials[Region(r)] for r in mesh.region]
        lame = np.array([m.lame() for m in mats])
        self.mu = lame[:, 0]
        self.lam = lame[:, 1]
        self.rho = np.array([m.density for m in mats])
        self.beta = np.array([m.damping for m in mats])

        mass_v = np.zeros(nv)
        np.add.at(mass_v, tris.ravel(),
                  np.repeat(self.rho * self.coeff / 3.0, 3))
        self.mass = np.repeat(mass_v, 2)

        self.is_muscle = ((mesh.region == Region.UPPER_MUSCLE)
                          | (mesh.region == Region.LOWER_MUSCLE))
        self.muscle_idx = np.flatnonzero(self.is_muscle)
        self.fiber = mesh.fiber[self.muscle_idx]
        self.muscle_region = mesh.region[self.muscle_idx]

        fixed = set(int(i) for i in cfg.fixed_vertices)
        if cfg.boundary == BoundaryKind.PINNED_HEAD:
            x_min = mesh.vertices[:, 0].min()
            fixed.update(np.flatnonzero(mesh.vertices[:, 0] <= x_min + 1e-12))
        self.fixed_vertices = np.array(sorted(fixed), dtype=np.int64)
        free = np.ones(self.n_dof, dtype=bool)
        if len(self.fixed_vertices):
            free[2 * self.fixed_vertices] = False
            free[2 * self.fixed_vertices + 1] = False
        self.free = free

        g = np.asarray(cfg.gravity, dtype=float)
        self.gravity_force = (self.mass.reshape(-1, 2) * g).ravel()

        bbox = mesh.vertices.max(axis=0) - mesh.vertices.min(axis=0)
        diag = float(np.hypot(*bbox))
        mean_mass = float(self.mass.mean())
        # converts a force residual into a displacement-per-body-size number
        self._residual_scale = cfg.dt**2 / (mean_mass * max(diag, 1e-12))

        # Rayleigh damping: rest-state stiffness weighted by each element's
        # damping coefficient (entries are linear in mu and lambda).
        q0 = mesh.vertices.ravel()
        self.damping_matrix = self._assemble_hessian(
            q0, None, None, mu=self.beta * self.mu, lam=self.beta * self.lam,
            include_muscle=False,
        ).tocsc()

    # -- element quantities -------------------------------------------------

    def deformation_gradients(self, q: np.ndarray) -> np.ndarray:
        p = q.reshape(-1, 2)[self.mesh.triangles]
        ds = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=-1)
        return ds @ self.B

    def _activation_per_muscle_element(self, activations: dict) -> np.ndarray:
        a = np.empty(len(self.muscle_idx))
        a[self.muscle_region == Region.UPPER_MUSCLE] = activations[Region.UPPER_MUSCLE]
        a[self.muscle_region == Region.LOWER_MUSCLE] = activations[Region.LOWER_MUSCLE]
        return a

    def elastic_energy_density(self, F: np.ndarray) -> np.ndarray:
        R, _, _, _ = _polar_rotation(F)
        dev = F - R
        j = _det2(F)
        return (self.mu * np.einsum("eij,eij->e", dev, dev)
                + 0.5 * self.lam * (j - 1.0) ** 2)

    def energy(self, q, activations=None, muscle_stiffness=0.0) -> float:
        """Total potential energy; +inf when any element is inverted."""
        F = self.deformation_gradients(q)
        if np.any(_det2(F) <= 0.0):
            return math.inf
        total = float(self.coeff @ self.elastic_energy_density(F))
        if activations is not None and len(self.muscle_idx):
            a = self._activation_per_muscle_element(activations)
            u = np.einsum("eij,ej->ei", F[self.muscle_idx], self.fiber)
            n = np.linalg.norm(u, axis=1)
            total += float(0.5 * muscle_stiffness
                           * (self.area[self.muscle_idx] @ (n - a) ** 2))
        return total

    def first_inverted_element(self, q) -> int | None:
        det = _det2(self.deformation_gradients(q))
        bad = np.flatnonzero(det <= 0.0)
        return int(bad[0]) if len(bad) else None

    def _scaled_piola(self, q, activations, muscle_stiffness):
        """Element nominal-stress matrices pre-multiplied by their area
        factors, so local gradients are just contractions with G."""
        F = self.deformation_gradients(q)
        det = _det2(F)
        if np.any(det <= 0.0):
            e = int(np.argmin(det))
            raise InvertedElementError(e, float(det[e]))
        R, _, _, _ = _polar_rotation(F)
        jmat = _area_gradient_matrix(F)
        P = (2.0 * self.mu[:, None, None] * (F - R)
             + (self.lam * (det - 1.0))[:, None, None] * jmat)
        P *= self.coeff[:, None, None]
        if activations is not None and len(self.muscle_idx):
            a = self._activation_per_muscle_element(activations)
            Fm = F[self.muscle_idx]
            u = np.einsum("eij,ej->ei", Fm, self.fiber)
            n = np.linalg.norm(u, axis=1)
            scale = (muscle_stiffness * self.area[self.muscle_idx]
                     * (n - a) / n)
            P[self.muscle_idx] += scale[:, None, None] * np.einsum(
                "ei,ej->eij", u, self.fiber)
        return P, F

    def elastic_forces_gradient(self, q, activations=None, muscle_stiffness=0.0):
        """Gradient of the potential energy w.r.t. flattened positions."""
        P, _ = self._scaled_piola(q, activations, muscle_stiffness)
        local = np.einsum("eij,ekij->ek", P, self.G)
        grad = np.zeros(self.n_dof)
        np.add.at(grad, self.dof.ravel(), local.ravel())
        return grad

    def _assemble_hessian(self, q, activations, muscle_stiffness,
                          mu=None, lam=None, include_muscle=True):
        """Sparse Hessian of the potential energy at q."""
        mu = self.mu if mu is None else mu
        lam = self.lam if lam is None else lam
        F = self.deformation_gradients(q)
        det = _det2(F)
        if np.any(det <= 0.0):
            e = int(np.argmin(det))
            raise InvertedElementError(e, float(det[e]))
        R, g1, g2, r = _polar_rotation(F)
        jmat = _area_gradient_matrix(F)

        do_muscle = include_muscle and activations is not None and len(self.muscle_idx)
        if do_muscle:
            a = self._activation_per_muscle_element(activations)
            Fm = F[self.muscle_idx]
            u = np.einsum("eij,ej->ei", Fm, self.fiber)
            n = np.linalg.norm(u, axis=1)
            w_area = muscle_stiffness * self.area[self.muscle_idx]

        ne = self.mesh.n_triangles
        H_local = np.empty((ne, 6, 6))
        for l in range(6):
            dF = self.G[:, l]
            dg1 = dF[:, 0, 0] + dF[:, 1, 1]
            dg2 = dF[:, 0, 1] - dF[:, 1, 0]
            dr = (g1 * dg1 + g2 * dg2) / r
            dG = np.empty_like(dF)
            dG[:, 0, 0] = dg1
            dG[:, 0, 1] = dg2
            dG[:, 1, 0] = -dg2
            dG[:, 1, 1] = dg1
            dR = (dG - R * dr[:, None, None]) / r[:, None, None]
            djmat = _area_gradient_matrix(dF)
            jdot = np.einsum("eij,eij->e", jmat, dF)
            dP = (2.0 * mu[:, None, None] * (dF - dR)
                  + (lam * jdot)[:, None, None] * jmat
                  + (lam * (det - 1.0))[:, None, None] * djmat)
            dP *= self.coeff[:, None, None]
            if do_muscle:
                du = np.einsum("eij,ej->ei", dF[self.muscle_idx], self.fiber)
                ndot = np.einsum("ei,ei->e", u, du) / n
                uf = np.einsum("ei,ej->eij", u, self.fiber)
                duf = np.einsum("ei,ej->eij", du, self.fiber)
                dPm = (ndot / n)[:, None, None] * uf
                dPm += ((n - a) / n)[:, None, None] * duf
                dPm -= ((n - a) * ndot / n**2)[:, None, None] * uf
                dP[self.muscle_idx] += w_area[:, None, None] * dPm
            H_local[:, :, l] = np.einsum("ekij,eij->ek", self.G, dP)

        H = sp.coo_matrix(
            (H_local.ravel(), (self._rows, self._cols)),
            shape=(self.n_dof, self.n_dof),
        )
        return H.tocsc()

    def activation_coupling(self, q, activations, muscle_stiffness):
        """d(grad E)/d(activation) per muscle region, as dense vectors."""
        F = self.deformation_gradients(q)
        out = {}
        for region in (Region.UPPER_MUSCLE, Region.LOWER_MUSCLE):
            sel = self.muscle_region == region
            idx = self.muscle_idx[sel]
            vec = np.zeros(self.n_dof)
            if len(idx):
                fib = self.fiber[sel]
                u = np.einsum("eij,ej->ei", F[idx], fib)
                n = np.linalg.norm(u, axis=1)
                # d/da of dE/dq = -w * area * dn/dq
                dn_dq = np.einsum("ei,ekij,ej->ek", u, self.G[idx], fib) / n[:, None]
                local = -(muscle_stiffness * self.area[idx])[:, None] * dn_dq
                np.add.at(vec, self.dof[idx].ravel(), local.ravel())
            out[region] = vec
        return out

    def kinetic_energy(self, state: SimState) -> float:
        v = state.velocities.ravel()
        return float(0.5 * (self.mass * v * v).sum())

    def momentum(self, state: SimState) -> np.ndarray:
        return (self.mass.reshape(-1, 2) * state.velocities).sum(axis=0)

    # -- implicit stepping ----------------------------------------------------

    def step_hessian(self, q, q_prev, activations, muscle_stiffness):
        """Hessian of the step objective (used by the adjoint as well)."""
        dt = self.cfg.dt
        H = self._assemble_hessian(q, activations, muscle_stiffness)
        H = H + self.damping_matrix / dt
        H = H + sp.diags(self.mass / dt**2)
        return H.tocsc()

    def _newton(self, q0, q_prev, objective, gradient, hessian, tol):
        """Minimize the step objective from q0; fixed dofs never move."""
        free = self.free
        q = q0.copy()
        g = gradient(q)
        res = float(np.abs(g[free]).max(initial=0.0)) * self._residual_scale
        iters = 0
        while res > tol and iters < self.cfg.max_newton_iters:
            H = hessian(q)[free][:, free].tocsc()
            reg = 0.0
            base = float(self.mass[free].mean()) / self.cfg.dt**2
            for attempt in range(12):
                try:
                    lu = spla.splu(H if reg == 0.0 else
                                   (H + sp.identity(H.shape[0], format="csc") * reg))
                    d = lu.solve(-g[free])
                except RuntimeError:
                    d = None
                if d is not None and np.all(np.isfinite(d)) and g[free] @ d < 0:
                    break
                reg = base * 10.0 ** (attempt - 6)
            else:
                raise SingularSystemError(
                    "could not produce a descent direction from the step Hessian")

            e0 = objective(q)
            slope = float(g[free] @ d)
            g_norm = float(np.abs(g[free]).max(initial=0.0))
            alpha = 1.0
            g_try = None
            for _ in range(40):
                q_try = q.copy()
                q_try[free] += alpha * d
                e_try = objective(q_try)
                g_try = None
                if math.isfinite(e_try):
                    # the noise floor keeps float cancellation in the
                    # objective from rejecting steps near convergence ...
                    noise = 32.0 * np.finfo(float).eps * max(abs(e0), abs(e_try))
                    if e_try <= e0 + 1e-4 * alpha * slope + noise:
                        break
                    # ... and once it dominates, a residual decrease is
                    # the reliable acceptance signal
                    g_try = gradient(q_try)
                    if (float(np.abs(g_try[free]).max(initial=0.0))
                            <= (1.0 - 1e-4 * alpha) * g_norm):
                        break
                alpha *= 0.5
            else:
                raise ConvergenceError(res, tol, iters)
            q = q_try
            g = gradient(q) if g_try is None else g_try
            res = float(np.abs(g[free]).max(initial=0.0)) * self._residual_scale
            iters += 1
        return q, res, iters

    def step(self, state: SimState, activations: dict,
             muscle_stiffness: float = 0.0,
             external_force: np.ndarray | None = None
             ) -> tuple[SimState, StepInfo]:
        """One implicit Euler step."""
        _check_activations(activations)
        dt = self.cfg.dt
        q_prev = state.positions.ravel()
        v_prev = state.velocities.ravel().copy()
        if len(self.fixed_vertices):
            v_prev.reshape(-1, 2)[self.fixed_vertices] = 0.0
        q_star = q_prev + dt * v_prev

        f_tot = self.gravity_force.copy()
        if external_force is not None:
            f_tot += np.asarray(external_force, dtype=float).ravel()

        M = self.mass
        D = self.damping_matrix

        def objective(q):
            e = self.energy(q, activations, muscle_stiffness)
            if not math.isfinite(e):
                return math.inf
            dq_star = q - q_star
            dq_prev = q - q_prev
            return (0.5 / dt**2 * float(M @ (dq_star * dq_star))
                    + e
                    + 0.5 / dt * float(dq_prev @ (D @ dq_prev))
                    - float(f_tot @ q))

        def gradient(q):
            return (M * (q - q_star) / dt**2
                    + self.elastic_forces_gradient(q, activations, muscle_stiffness)
                    + D @ (q - q_prev) / dt
                    - f_tot)

        def hessian(q):
            return self.step_hessian(q, q_prev, activations, muscle_stiffness)

        q0 = q_star if math.isfinite(objective(q_star)) else q_prev.copy()
        q_new, res, iters = self._newton(q0, q_prev, objective, gradient,
                                         hessian, self.cfg.solver_tol)
        if res > self.cfg.solver_tol:
            raise ConvergenceError(res, self.cfg.solver_tol, iters)
        v_new = (q_new - q_prev) / dt
        new_state = SimState(q_new.reshape(-1, 2), v_new.reshape(-1, 2),
                             state.time + dt)
        return new_state, StepInfo(res, iters, True)

    def static_solve(self, external_force: np.ndarray,
                     activations: dict | None = None,
                     muscle_stiffness: float = 0.0,
                     tol: float = 1e-10) -> np.ndarray:
        """Equilibrium positions under a constant load (requires pinning)."""
        if self.free.all():
            raise ValueError("static solve needs pinned vertices")
        if activations is not None:
            _check_activations(activations)
        f_tot = self.gravity_force + np.asarray(external_force, dtype=float).ravel()
        f_scale = max(float(np.abs(f_tot).max(initial=0.0)),
                      1e-9 * float(self.mu.mean()) * self.cfg.thickness)

        def objective(q):
            e = self.energy(q, activations, muscle_stiffness)
            return math.inf if not math.isfinite(e) else e - float(f_tot @ q)

        def gradient(q):
            return (self.elastic_forces_gradient(q, activations, muscle_stiffness)
                    - f_tot)

        def hessian(q):
            return self._assemble_hessian(q, activations, muscle_stiffness)

        save = self._residual_scale
        try:
            # static problems scale residuals by the applied load instead
            self._residual_scale = 1.0 / f_scale
            q0 = self.mesh.vertices.ravel().copy()
            q, res, iters = self._newton(q0, q0, objective, gradient, hessian, tol)
        finally:
            self._residual_scale = save
        if res > tol:
            raise ConvergenceError(res, tol, iters)
        return q.reshape(-1, 2)


def _check_activations(activations: dict) -> None:
    for region in (Region.UPPER_MUSCLE, Region.LOWER_MUSCLE):
        if region not in activations:
            raise ValueError(f"missing activation for {region.name}")
        a = activations[region]
        if not 0.0 < a <= 1.5:
            raise ValueError(f"activation must be in (0, 1.5], got {a}")


# ---------------------------------------------------------------------------
# Module-level operations
# ---------------------------------------------------------------------------

def elastic_energy(mesh: SwimmerMesh, positions: np.ndarray, cfg: SimConfig) -> float:
    """Total corotated elastic energy; raises on inverted elements."""
    model = FemModel(mesh, cfg)
    F = model.deformation_gradients(np.asarray(positions, dtype=float).ravel())
    det = _det2(F)
    if np.any(det <= 0.0):
        e = int(np.argmin(det))
        raise InvertedElementError(e, float(det[e]))
    return float(model.coeff @ model.elastic_energy_density(F))


def step(mesh: SwimmerMesh, state: SimState, activations: dict, cfg: SimConfig,
         muscle_stiffness: float = DEFAULT_MUSCLE_STIFFNESS,
         external_force: np.ndarray | None = None) -> SimState:
    """Single implicit Euler step (builds the model; use FemModel or
    simulate() for repeated stepping)."""
    model = FemModel(mesh, cfg)
    new_state, _ = model.step(state, activations, muscle_stiffness, external_force)
    return new_state


def activations_at(t: float, act: ActuationParams) -> dict:
    return {
        Region.UPPER_MUSCLE: float(activation_signal(t, act, Region.UPPER_MUSCLE)),
        Region.LOWER_MUSCLE: float(activation_signal(t, act, Region.LOWER_MUSCLE)),
    }


def simulate(mesh: SwimmerMesh, cfg: SimConfig, act: ActuationParams,
             duration: float,
             external_force: np.ndarray | None = None,
             model: FemModel | None = None) -> list[SimState]:
    """Trajectory from rest; the drive signal is sampled at step midpoints."""
    if duration <= 0:
        raise ValueError("duration must be positive")
    if model is None:
        model = FemModel(mesh, cfg)
    n_steps = math.ceil(duration / cfg.dt - 1e-9)
    states = [SimState.rest(mesh)]
    for k in range(n_steps):
        t_mid = (k + 0.5) * cfg.dt
        acts = activations_at(t_mid, act)
        try:
            new_state, _ = model.step(states[-1], acts, act.muscle_stiffness,
                                      external_force)
        except (ConvergenceError, InvertedElementError) as err:
            err.step_index = k
            raise
        states.append(new_state)
    return states


# ---------------------------------------------------------------------------
# Trajectory export
# ---------------------------------------------------------------------------

_TRAJ_MAGIC = b"SSWTRJ01"


def save_trajectory_csv(states: list[SimState], path) -> None:
    """Long-format CSV with one row per vertex per frame."""
    with open(path, "w") as fh:
        fh.write("t,vertex_id,x,y\n")
        for s in states:
            for i, (x, y) in enumerate(s.positions):
                fh.write(f"{s.time:.9g},{i},{x:.17g},{y:.17g}\n")


def save_trajectory_binary(states: list[SimState], path) -> None:
    """Binary layout (all little-endian): 8-byte magic "SSWTRJ01",
    uint32 frame count, uint32 vertex count, then per frame one float64
    time stamp followed by 2 * n_vertices float64 coordinates (x0 y0 x1
    y1 ...)."""
    n_frames = len(states)
    n_verts = states[0].positions.shape[0] if n_frames else 0
    with open(path, "wb") as fh:
        fh.write(_TRAJ_MAGIC)
        fh.write(struct.pack("<II", n_frames, n_verts))
        for s in states:
            fh.write(struct.pack("<d", s.time))
            fh.write(s.positions.astype("<f8").tobytes())


def load_trajectory_binary(path) -> tuple[np.ndarray, np.ndarray]:
    """Returns (times (F,), positions (F, n, 2)) from the binary format."""
    raw = Path(path).read_bytes()
    if raw[:8] != _TRAJ_MAGIC:
        raise ValueError(f"{path}: bad trajectory magic")
    n_frames, n_verts = struct.unpack_from("<II", raw, 8)
    times = np.empty(n_frames)
    pos = np.empty((n_frames, n_verts, 2))
    off = 16
    frame_bytes = 8 + 16 * n_verts
    for k in range(n_frames):
        times[k] = struct.unpack_from("<d", raw, off)[0]
        pos[k] = np.frombuffer(raw, dtype="<f8", count=2 * n_verts,
                               offset=off + 8).reshape(-1, 2)
        off += frame_bytes
    return times, pos
