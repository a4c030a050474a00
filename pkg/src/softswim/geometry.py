"""Swimmer mesh generation.

The swimmer body is the region |y| <= w(x) for x in [0, L], where w is a
5th-order polynomial halfwidth profile, extended by a thin straight tail
strip of length `tail_length`. A stiff spine band |y| <= spine_thickness/2
runs the full length of body and tail. Meshing uses vertical columns of
vertices (fine spacing near the midline, coarser outside) triangulated
column-to-column, so the mesh is exactly mirror-symmetric about y = 0.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np

from .errors import MeshingError

# Dimensionless default profile: u^2 (1-u)^3 scaled to peak 1 at u = 0.4.
# Closes at both ends and puts the widest section forward of midlength,
# which is the carangiform silhouette the other defaults assume.
_PEAK = 0.4**2 * 0.6**3
DEFAULT_POLY_COEFFS = (0.0, 0.0, 1.0 / _PEAK, -3.0 / _PEAK, 3.0 / _PEAK, -1.0 / _PEAK)

DEFAULT_TARGET_EDGE_LENGTH = 2.0e-3
DEFAULT_REFINEMENT_FACTOR = 0.4


class Region(IntEnum):
    SPINE = 0
    UPPER_MUSCLE = 1
    LOWER_MUSCLE = 2
    SOFT = 3


REGION_NAMES = {
    Region.SPINE: "spine",
    Region.UPPER_MUSCLE: "upper_muscle",
    Region.LOWER_MUSCLE: "lower_muscle",
    Region.SOFT: "soft",
}
REGION_FROM_NAME = {v: k for k, v in REGION_NAMES.items()}


@dataclass(frozen=True)
class ProfileParams:
    """Geometric parameters of the swimmer outline (SI units).

    `poly_coeffs` are the dimensionless coefficients c0..c5 of the halfwidth
    polynomial w(u) = sum_k c_k u^k for u in [0, 1]; the physical halfwidth
    is max_halfwidth * w(u). The front `head_length` of the body is passive
    (no muscle elements there).
    """

    length: float = 0.160
    max_halfwidth: float = 0.0075
    tail_length: float = 0.030
    spine_thickness: float = 0.001
    poly_coeffs: tuple[float, ...] = DEFAULT_POLY_COEFFS
    head_length: float = 0.052

    def __post_init__(self):
        if self.length <= 0 or self.max_halfwidth <= 0 or self.tail_length <= 0:
            raise ValueError("length, max_halfwidth and tail_length must be positive")
        if not 0 < self.spine_thickness < 2 * self.max_halfwidth:
            raise ValueError("spine_thickness must be in (0, 2 * max_halfwidth)")
        if not 0 <= self.head_length < self.length:
            raise ValueError("head_length must be in [0, length)")
        if len(self.poly_coeffs) != 6:
            raise ValueError("poly_coeffs must have exactly 6 entries")
        u = np.linspace(0.0, 1.0, 401)
        w = self._poly(u)
        if w.min() < -1e-9:
            raise ValueError("halfwidth polynomial is negative inside [0, 1]")
        if w[0] > 0.05 or w[-1] > 0.05:
            raise ValueError("profile must close at the ends (w(0), w(1) <= 0.05)")

    def _poly(self, u):
        c = self.poly_coeffs
        u = np.asarray(u, dtype=float)
        return c[0] + u * (c[1] + u * (c[2] + u * (c[3] + u * (c[4] + u * c[5]))))

    @property
    def total_length(self) -> float:
        return self.length + self.tail_length


def profile_halfwidth(u, params: ProfileParams):
    """Physical halfwidth (m) at normalized body coordinate u in [0, 1].

    Negative polynomial values are clamped to zero. Accepts scalars or
    arrays; raises ValueError for u outside [0, 1].
    """
    arr = np.asarray(u, dtype=float)
    if np.any(arr < 0.0) or np.any(arr > 1.0):
        raise ValueError(f"u must lie in [0, 1], got {u}")
    w = np.maximum(params.max_halfwidth * params._poly(arr), 0.0)
    return float(w) if np.isscalar(u) else w


@dataclass(frozen=True)
class SwimmerMesh:
    """Labeled 2D triangle mesh.

    vertices:  (n, 2) rest positions in meters
    triangles: (m, 3) vertex indices, all positively oriented
    region:    (m,) Region codes
    rest_area: (m,) triangle areas in m^2
    fiber:     (m, 2) unit muscle direction for muscle triangles, zero rows
               elsewhere
    """

    vertices: np.ndarray
    triangles: np.ndarray
    region: np.ndarray
    rest_area: np.ndarray
    fiber: np.ndarray

    @classmethod
    def from_arrays(cls, vertices, triangles, region, fiber=None) -> "SwimmerMesh":
        vertices = np.ascontiguousarray(vertices, dtype=float)
        triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        region = np.ascontiguousarray(region, dtype=np.int64)
        if fiber is None:
            fiber = np.zeros((len(triangles), 2))
            is_muscle = (region == Region.UPPER_MUSCLE) | (region == Region.LOWER_MUSCLE)
            fiber[is_muscle] = (1.0, 0.0)
        fiber = np.ascontiguousarray(fiber, dtype=float)
        area = triangle_areas(vertices, triangles)
        if np.any(area <= 0.0):
            bad = int(np.argmin(area))
            raise MeshingError(
                f"triangle {bad} is degenerate or inverted (area {area[bad]:.3e})"
            )
        return cls(vertices, triangles, region, area, fiber)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def centroids(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    def is_connected(self) -> bool:
        """True if every vertex is reachable through triangle edges."""
        n = self.n_vertices
        parent = np.arange(n)

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        for tri in self.triangles:
            a = find(tri[0])
            for v in tri[1:]:
                b = find(v)
                parent[b] = a
        return len({find(i) for i in range(n)}) == 1


def triangle_areas(vertices, triangles) -> np.ndarray:
    """Signed areas; positive for counter-clockwise triangles."""
    p = vertices[triangles]
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])


def _half_levels(halfwidth, zone, fine, coarse):
    """Ascending y levels from the midline (0) to `halfwidth`.

    Uniform `fine` spacing up to `zone`, uniform stretched spacing of at
    most `coarse` beyond, both zones snapped so no sliver rows appear.
    """
    top = min(zone, halfwidth)
    n_fine = max(1, round(top / fine))
    levels = list(np.linspace(0.0, top, n_fine + 1))
    if halfwidth > top * (1 + 1e-12) + 1e-15:
        n_coarse = max(1, math.ceil((halfwidth - top) / coarse - 1e-9))
        levels.extend(np.linspace(top, halfwidth, n_coarse + 1)[1:])
    return levels


def _merge_chains(a_ids, a_ys, b_ids, b_ys):
    """Triangulate the strip between two vertical vertex chains.

    Both chains ascend in y and sit on distinct x stations; the greedy
    shorter-diagonal walk yields positively oriented triangles.
    """
    tris = []
    ia, ib = 0, 0
    na, nb = len(a_ids) - 1, len(b_ids) - 1
    while ia < na or ib < nb:
        if ib == nb:
            advance_a = True
        elif ia == na:
            advance_a = False
        else:
            da = abs(a_ys[ia + 1] - b_ys[ib])
            db = abs(b_ys[ib + 1] - a_ys[ia])
            advance_a = da <= db
        if advance_a:
            tris.append((a_ids[ia], b_ids[ib], a_ids[ia + 1]))
            ia += 1
        else:
            tris.append((a_ids[ia], b_ids[ib], b_ids[ib + 1]))
            ib += 1
    return tris


def generate_mesh(params: ProfileParams,
                  target_edge_length: float = DEFAULT_TARGET_EDGE_LENGTH,
                  spine_refinement_factor: float = DEFAULT_REFINEMENT_FACTOR,
                  stiffen_head: bool = False) -> SwimmerMesh:
    """Generate the labeled swimmer mesh.

    Element size is about target_edge_length * spine_refinement_factor near
    the midline of the body and target_edge_length elsewhere; the tail strip
    is meshed at base resolution. `stiffen_head` labels the passive head as
    spine material instead of soft.
    """
    if target_edge_length <= 0:
        raise ValueError("target_edge_length must be positive")
    if not 0 < spine_refinement_factor <= 1:
        raise ValueError("spine_refinement_factor must be in (0, 1]")

    L, W, t = params.length, params.max_halfwidth, params.spine_thickness
    u_grid = np.linspace(0.0, 1.0, 2001)
    if np.trapz(profile_halfwidth(u_grid, params), u_grid) * L < 1e-12:
        raise MeshingError("profile has zero area, nothing to mesh")

    fine = target_edge_length * spine_refinement_factor
    coarse = target_edge_length
    zone = t  # refined band around the spine

    n_body = max(2, math.ceil(L / fine))
    n_tail = max(1, math.ceil(params.tail_length / coarse))
    x_body = np.linspace(0.0, L, n_body + 1)
    x_tail = np.linspace(L, L + params.tail_length, n_tail + 1)[1:]
    stations = np.concatenate([x_body, x_tail])

    # Column vertices: the midline vertex plus mirrored upper/lower levels.
    verts: list[tuple[float, float]] = []
    upper_chains: list[list[int]] = []
    upper_ys: list[list[float]] = []
    for x in stations:
        if x <= L:
            h = max(profile_halfwidth(min(x / L, 1.0), params), 0.5 * t)
        else:
            h = 0.5 * t
        ys = _half_levels(h, zone, fine, coarse)
        mid = len(verts)
        verts.append((x, 0.0))
        chain = [mid]
        for y in ys[1:]:
            chain.append(len(verts))
            verts.append((x, y))
        upper_chains.append(chain)
        upper_ys.append(ys)

    # Mirror image of every off-midline vertex.
    mirror = {}
    n_upper = len(verts)
    for i, (x, y) in enumerate(list(verts)):
        if y == 0.0:
            mirror[i] = i
        else:
            mirror[i] = len(verts)
            verts.append((x, -y))

    tris: list[tuple[int, int, int]] = []
    for i in range(len(stations) - 1):
        upper = _merge_chains(upper_chains[i], upper_ys[i],
                              upper_chains[i + 1], upper_ys[i + 1])
        tris.extend(upper)
        for (a, b, c) in upper:
            tris.append((mirror[a], mirror[c], mirror[b]))

    vertices = np.asarray(verts, dtype=float)
    triangles = np.asarray(tris, dtype=np.int64)
    area = triangle_areas(vertices, triangles)
    if np.any(area <= 0.0):
        raise MeshingError("meshing produced inverted or zero-area elements")

    # Labels: tail and everything overlapping the spine band are spine;
    # the remaining body is muscle aft of the head and soft in the head.
    centroid = vertices[triangles].mean(axis=1)
    tri_y = vertices[triangles][:, :, 1]
    band = 0.5 * t
    overlaps_band = (tri_y.min(axis=1) < band - 1e-12) & (tri_y.max(axis=1) > -band + 1e-12)
    in_tail = centroid[:, 0] > L + 1e-12
    in_head = centroid[:, 0] < params.head_length

    region = np.full(len(triangles), int(Region.SOFT), dtype=np.int64)
    region[overlaps_band | in_tail] = Region.SPINE
    is_body_flesh = ~(overlaps_band | in_tail)
    head_label = Region.SPINE if stiffen_head else Region.SOFT
    region[is_body_flesh & in_head] = head_label
    region[is_body_flesh & ~in_head & (centroid[:, 1] > 0)] = Region.UPPER_MUSCLE
    region[is_body_flesh & ~in_head & (centroid[:, 1] < 0)] = Region.LOWER_MUSCLE

    # Muscle fibers follow the body axis, which is straight at rest.
    fiber = np.zeros((len(triangles), 2))
    is_muscle = (region == Region.UPPER_MUSCLE) | (region == Region.LOWER_MUSCLE)
    fiber[is_muscle] = (1.0, 0.0)

    return SwimmerMesh(vertices, triangles, region, area, fiber)


def spine_labeling_error(mesh: SwimmerMesh, params: ProfileParams) -> float:
    """Mean overshoot (m) of spine-labeled centroids beyond the spine band."""
    spine = mesh.region == Region.SPINE
    if not np.any(spine):
        raise MeshingError("mesh has no spine elements")
    cy = np.abs(mesh.centroids()[spine, 1])
    return float(np.mean(np.maximum(0.0, cy - 0.5 * params.spine_thickness)))


def rectangle_mesh(length: float, height: float, nx: int, ny: int,
                   region: Region = Region.SOFT) -> SwimmerMesh:
    """Structured strip mesh on [0, length] x [-height/2, height/2].

    Quads split along alternating diagonals. Useful for calibration
    problems (cantilever strips, single-element checks).
    """
    if nx < 1 or ny < 1:
        raise ValueError("nx and ny must be at least 1")
    xs = np.linspace(0.0, length, nx + 1)
    ys = np.linspace(-0.5 * height, 0.5 * height, ny + 1)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    vertices = np.stack([gx.ravel(), gy.ravel()], axis=1)

    def vid(i, j):
        return i * (ny + 1) + j

    tris = []
    for i in range(nx):
        for j in range(ny):
            a, b = vid(i, j), vid(i + 1, j)
            c, d = vid(i + 1, j + 1), vid(i, j + 1)
            if (i + j) % 2 == 0:
                tris.append((a, b, c))
                tris.append((a, c, d))
            else:
                tris.append((a, b, d))
                tris.append((b, c, d))
    region_arr = np.full(len(tris), int(region), dtype=np.int64)
    return SwimmerMesh.from_arrays(vertices, np.asarray(tris), region_arr)


def mesh_stats(mesh: SwimmerMesh, params: ProfileParams) -> dict:
    """Summary used by the CLI: counts, spine error, per-region areas."""
    areas = {
        REGION_NAMES[r]: float(mesh.rest_area[mesh.region == r].sum())
        for r in Region
    }
    return {
        "n_vertices": mesh.n_vertices,
        "n_triangles": mesh.n_triangles,
        "spine_labeling_error_m": spine_labeling_error(mesh, params),
        "total_area_m2": float(mesh.rest_area.sum()),
        "region_area_m2": areas,
    }


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def save_mesh_text(mesh: SwimmerMesh, path) -> None:
    """Plain-text format: header with counts, then vertex and triangle lines.

    Line 1: "softswim-mesh 1"; line 2: "vertices <n>"; line 3:
    "triangles <m>"; then n lines "x y" and m lines "i j k label fx fy".
    """
    lines = ["softswim-mesh 1",
             f"vertices {mesh.n_vertices}",
             f"triangles {mesh.n_triangles}"]
    for x, y in mesh.vertices:
        lines.append(f"{x!r} {y!r}")
    for tri, reg, fib in zip(mesh.triangles, mesh.region, mesh.fiber):
        name = REGION_NAMES[Region(reg)]
        lines.append(f"{tri[0]} {tri[1]} {tri[2]} {name} {fib[0]!r} {fib[1]!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_mesh_text(path) -> SwimmerMesh:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].split() != ["softswim-mesh", "1"]:
        raise MeshingError(f"{path}: not a softswim-mesh v1 file")
    n = int(lines[1].split()[1])
    m = int(lines[2].split()[1])
    vertices = np.array([[float(v) for v in ln.split()] for ln in lines[3:3 + n]])
    triangles = np.empty((m, 3), dtype=np.int64)
    region = np.empty(m, dtype=np.int64)
    fiber = np.empty((m, 2))
    for k, ln in enumerate(lines[3 + n:3 + n + m]):
        i, j, kk, name, fx, fy = ln.split()
        triangles[k] = (int(i), int(j), int(kk))
        region[k] = REGION_FROM_NAME[name]
        fiber[k] = (float(fx), float(fy))
    return SwimmerMesh.from_arrays(vertices, triangles, region, fiber)


def save_mesh_json(mesh: SwimmerMesh, path) -> None:
    data = {
        "vertices": mesh.vertices.tolist(),
        "triangles": mesh.triangles.tolist(),
        "region": [REGION_NAMES[Region(r)] for r in mesh.region],
        "fiber": mesh.fiber.tolist(),
    }
    Path(path).write_text(json.dumps(data))


def load_mesh_json(path) -> SwimmerMesh:
    data = json.loads(Path(path).read_text())
    region = np.array([REGION_FROM_NAME[r] for r in data["region"]], dtype=np.int64)
    return SwimmerMesh.from_arrays(
        np.asarray(data["vertices"], dtype=float),
        np.asarray(data["triangles"], dtype=np.int64),
        region,
        np.asarray(data["fiber"], dtype=float),
    )
