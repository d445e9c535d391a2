"""Cameras, triangle meshes, icospheres, ray casting, and G-buffer rendering.

Coordinate conventions
----------------------
World space is right-handed with +z up. A camera is parameterized by a
spherical viewpoint (azimuth, elevation, radius) and always looks at the
origin. Its position is

    radius * (cos(elevation) * cos(azimuth),
              cos(elevation) * sin(azimuth),
              sin(elevation)).

Image row 0 is the top of the frame and column 0 is the left edge. Rays
pass through pixel centers; directions are unit length, so a ray parameter
t is a metric distance. Depth buffers store that distance (not z-depth),
with background pixels set to the camera's far plane.

Face visibility is resolved with a single ray per pixel center and the
nearest intersected face wins; ties on distance go to the lowest face id
so results do not depend on evaluation order.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

log = logging.getLogger(__name__)

# Face id stored for pixels whose ray hits nothing.
BACKGROUND_FACE = -1

# Rays closer than this to a face plane count as parallel (miss).
_DET_EPS = 1e-12

# Zero-area threshold for dropping degenerate faces at load time,
# relative to unit-scale meshes.
_AREA_EPS = 1e-12

_MAX_SUBDIVISIONS = 7


@dataclass(frozen=True)
class Camera:
    """Origin-targeting perspective camera with up = +z.

    azimuth/elevation/fov_y are radians, radius/near/far scene units,
    width/height pixels. Elevations at or beyond +-pi/2 would make the
    view direction parallel to the up vector and are rejected.
    """

    azimuth: float
    elevation: float
    radius: float
    fov_y: float
    width: int
    height: int
    near: float = 0.1
    far: float = 5.0

    def __post_init__(self):
        # canonicalize the periodic coordinate so viewpoints an exact number
        # of turns apart produce bit-identical cameras
        object.__setattr__(self, "azimuth", math.remainder(self.azimuth, 2.0 * math.pi))
        if self.width < 1 or self.height < 1:
            raise ValueError("camera resolution must be at least 1x1")
        if not 0.0 < self.fov_y < math.pi:
            raise ValueError("fov_y must lie in (0, pi)")
        if not 0.0 < self.near < self.far:
            raise ValueError("need 0 < near < far")
        if self.radius <= 0.0:
            raise ValueError("camera radius must be positive")
        if abs(self.elevation) >= math.pi / 2:
            raise ValueError(
                "elevation of +-pi/2 makes the view direction parallel to +z up"
            )

    @property
    def position(self) -> np.ndarray:
        ce = math.cos(self.elevation)
        return self.radius * np.array(
            [ce * math.cos(self.azimuth), ce * math.sin(self.azimuth), math.sin(self.elevation)]
        )

    def basis(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return (forward, right, up) unit vectors of the view frame."""
        pos = self.position
        fwd = -pos / np.linalg.norm(pos)
        world_up = np.array([0.0, 0.0, 1.0])
        right = np.cross(fwd, world_up)
        right /= np.linalg.norm(right)
        up = np.cross(right, fwd)
        return fwd, right, up

    def ray_directions(self) -> np.ndarray:
        """Unit ray directions through all pixel centers, shape (H, W, 3)."""
        fwd, right, up = self.basis()
        tan_y = math.tan(self.fov_y / 2)
        tan_x = tan_y * self.width / self.height
        u = (2.0 * (np.arange(self.width) + 0.5) / self.width - 1.0) * tan_x
        v = (1.0 - 2.0 * (np.arange(self.height) + 0.5) / self.height) * tan_y
        dirs = (
            fwd[None, None, :]
            + u[None, :, None] * right[None, None, :]
            + v[:, None, None] * up[None, None, :]
        )
        dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
        return dirs

    def at_resolution(self, width: int, height: int) -> "Camera":
        return replace(self, width=width, height=height)


def camera_from_view(
    azimuth: float,
    elevation: float,
    radius: float,
    fov_y: float = math.radians(50.0),
    width: int = 64,
    height: int = 64,
    near: float | None = None,
    far: float | None = None,
) -> Camera:
    """Build a Camera from a spherical viewpoint. Defaults place near/far
    around the origin-centered working volume (near 0.1, far radius + 2)."""
    if near is None:
        near = 0.1
    if far is None:
        far = radius + 2.0
    return Camera(azimuth, elevation, radius, fov_y, width, height, near, far)


@dataclass
class TriMesh:
    """Indexed triangle mesh with per-vertex colors in [0, 1].

    Degenerate (zero-area) faces are dropped on construction; the number
    removed is logged and kept in `dropped_faces`.
    """

    vertices: np.ndarray          # (n, 3) float64
    faces: np.ndarray             # (m, 3) int32
    colors: np.ndarray | None = None  # (n, 3) float64, gray fallback
    dropped_faces: int = field(default=0, compare=False)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int32).reshape(-1, 3)
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise ValueError("face index out of range")
        if self.colors is None:
            self.colors = np.full((len(self.vertices), 3), 0.5)
        else:
            self.colors = np.asarray(self.colors, dtype=np.float64).reshape(-1, 3)
            if len(self.colors) != len(self.vertices):
                raise ValueError("need one color per vertex")
        keep = self._face_areas() > _AREA_EPS
        dropped = int((~keep).sum())
        if dropped:
            log.warning("dropped %d degenerate face(s)", dropped)
            self.faces = self.faces[keep]
        self.dropped_faces = dropped

    def _face_areas(self) -> np.ndarray:
        v = self.vertices[self.faces]
        cross = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
        return 0.5 * np.linalg.norm(cross, axis=1)

    @property
    def num_faces(self) -> int:
        return len(self.faces)

    def face_normals(self) -> np.ndarray:
        """Unit geometric normals, shape (m, 3)."""
        v = self.vertices[self.faces]
        n = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    def vertex_normals(self) -> np.ndarray:
        """Area-weighted vertex normals for smooth shading."""
        v = self.vertices[self.faces]
        fn = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])  # area-weighted
        out = np.zeros_like(self.vertices)
        for k in range(3):
            np.add.at(out, self.faces[:, k], fn)
        norms = np.linalg.norm(out, axis=1, keepdims=True)
        return out / np.maximum(norms, 1e-30)

    def normalized(self, box_half: float = 0.5, margin: float = 0.1) -> "TriMesh":
        """Copy recentered on the origin and scaled so the largest extent
        fills the box [-box_half, box_half]^3 minus the given margin."""
        lo = self.vertices.min(axis=0)
        hi = self.vertices.max(axis=0)
        center = (lo + hi) / 2
        extent = float((hi - lo).max())
        if extent <= 0:
            raise ValueError("mesh has zero extent")
        scale = 2.0 * box_half * (1.0 - margin) / extent
        return TriMesh((self.vertices - center) * scale, self.faces.copy(), self.colors.copy())


@dataclass
class FaceMap:
    """Per-pixel nearest face ids and hit distances for one camera.

    `face_ids` holds BACKGROUND_FACE where the ray misses; `depth` holds
    the far plane there.
    """

    face_ids: np.ndarray  # (H, W) int32
    depth: np.ndarray     # (H, W) float64

    @property
    def mask(self) -> np.ndarray:
        return self.face_ids != BACKGROUND_FACE


@dataclass
class GBuffer:
    """RGB / depth / normal / coverage render of a mesh from one camera."""

    rgb: np.ndarray     # (H, W, 3) in [0, 1]
    depth: np.ndarray   # (H, W) scene units, far on background
    normal: np.ndarray  # (H, W, 3) unit where mask, zero on background
    mask: np.ndarray    # (H, W) bool


# ---------------------------------------------------------------------------
# icosphere


def make_icosphere(subdivisions: int) -> TriMesh:
    """Unit-radius icosphere centered at the origin.

    subdivisions=0 is the icosahedron (20 faces); each level quadruples
    the face count. Levels above 7 are rejected to bound memory.
    """
    if subdivisions < 0:
        raise ValueError("subdivisions must be non-negative")
    if subdivisions > _MAX_SUBDIVISIONS:
        raise ValueError(f"subdivisions > {_MAX_SUBDIVISIONS} would explode the face count")

    phi = (1.0 + math.sqrt(5.0)) / 2.0
    verts = np.array(
        [
            [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
            [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
            [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
        ],
        dtype=np.float64,
    )
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]

    verts = [v for v in verts]
    for _ in range(subdivisions):
        midpoint_cache: dict[tuple[int, int], int] = {}

        def midpoint(a: int, b: int) -> int:
            key = (a, b) if a < b else (b, a)
            idx = midpoint_cache.get(key)
            if idx is None:
                m = verts[a] + verts[b]
                m /= np.linalg.norm(m)
                verts.append(m)
                idx = len(verts) - 1
                midpoint_cache[key] = idx
            return idx

        next_faces = []
        for (a, b, c) in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            next_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = next_faces

    return TriMesh(np.array(verts), np.array(faces, dtype=np.int32))


def make_colored_cube(side: float = 0.9) -> TriMesh:
    """Axis-aligned cube with a distinct flat color per face (24 vertices,
    12 triangles). Handy synthetic target for fitting benchmarks."""
    h = side / 2.0
    face_colors = {
        "+x": (0.9, 0.15, 0.15), "-x": (0.15, 0.8, 0.85),
        "+y": (0.15, 0.75, 0.2), "-y": (0.85, 0.3, 0.8),
        "+z": (0.2, 0.25, 0.9), "-z": (0.95, 0.8, 0.2),
    }
    quads = {
        "+x": [(h, -h, -h), (h, h, -h), (h, h, h), (h, -h, h)],
        "-x": [(-h, h, -h), (-h, -h, -h), (-h, -h, h), (-h, h, h)],
        "+y": [(h, h, -h), (-h, h, -h), (-h, h, h), (h, h, h)],
        "-y": [(-h, -h, -h), (h, -h, -h), (h, -h, h), (-h, -h, h)],
        "+z": [(-h, -h, h), (h, -h, h), (h, h, h), (-h, h, h)],
        "-z": [(-h, h, -h), (h, h, -h), (h, -h, -h), (-h, -h, -h)],
    }
    vertices, colors, faces = [], [], []
    for name, quad in quads.items():
        base = len(vertices)
        vertices += quad
        colors += [face_colors[name]] * 4
        faces += [(base, base + 1, base + 2), (base, base + 2, base + 3)]
    return TriMesh(np.array(vertices), np.array(faces, dtype=np.int32), np.array(colors))


# ---------------------------------------------------------------------------
# OBJ loading


def load_obj(path) -> TriMesh:
    """Minimal OBJ reader: `v x y z [r g b]` and `f i j k ...` lines.

    Polygon faces are fan-triangulated; `i/t/n` vertex references keep the
    position index only; negative indices count from the end as usual.
    Everything else in the file is ignored.
    """
    verts: list[tuple[float, float, float]] = []
    colors: list[tuple[float, float, float]] = []
    faces: list[tuple[int, int, int]] = []

    def vert_index(token: str) -> int:
        idx = int(token.split("/")[0])
        if idx < 0:
            idx += len(verts)
        else:
            idx -= 1
        if not 0 <= idx < len(verts):
            raise ValueError(f"OBJ face references vertex {token} out of range")
        return idx

    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            parts = raw.split("#", 1)[0].split()
            if not parts:
                continue
            if parts[0] == "v":
                if len(parts) not in (4, 7):
                    raise ValueError(f"{path}:{lineno}: expected 'v x y z [r g b]'")
                verts.append(tuple(float(x) for x in parts[1:4]))
                if len(parts) == 7:
                    colors.append(tuple(float(x) for x in parts[4:7]))
                else:
                    colors.append((0.5, 0.5, 0.5))
            elif parts[0] == "f":
                if len(parts) < 4:
                    raise ValueError(f"{path}:{lineno}: face needs at least 3 vertices")
                idx = [vert_index(tok) for tok in parts[1:]]
                for k in range(1, len(idx) - 1):
                    faces.append((idx[0], idx[k], idx[k + 1]))

    if not verts or not faces:
        raise ValueError(f"{path}: no usable geometry")
    return TriMesh(np.array(verts), np.array(faces, dtype=np.int32), np.array(colors))


def save_obj(path, mesh: TriMesh) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for v, c in zip(mesh.vertices, mesh.colors):
            vals = " ".join(repr(float(x)) for x in (*v, *c))
            fh.write(f"v {vals}\n")
        for f in mesh.faces:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")


# ---------------------------------------------------------------------------
# ray casting


def intersect_ray_triangle(origin, direction, triangle):
    """Moller-Trumbore single ray / single triangle intersection.

    Returns (t, (b0, b1, b2)) with t > 0 and barycentrics summing to 1,
    or None on a miss. Edge and vertex hits count as hits.
    """
    origin = np.asarray(origin, dtype=np.float64)
    direction = np.asarray(direction, dtype=np.float64)
    if not np.any(direction):
        raise ValueError("ray direction must be non-zero")
    v0, v1, v2 = (np.asarray(p, dtype=np.float64) for p in triangle)

    edge1 = v1 - v0
    edge2 = v2 - v0
    pvec = np.cross(direction, edge2)
    det = float(edge1 @ pvec)
    if abs(det) < _DET_EPS:
        return None
    inv_det = 1.0 / det
    tvec = origin - v0
    u = float(tvec @ pvec) * inv_det
    if u < 0.0 or u > 1.0:
        return None
    qvec = np.cross(tvec, edge1)
    v = float(direction @ qvec) * inv_det
    if v < 0.0 or u + v > 1.0:
        return None
    t = float(edge2 @ qvec) * inv_det
    if t <= 0.0:
        return None
    return t, (1.0 - u - v, u, v)


def _face_precompute(mesh: TriMesh, origin: np.ndarray):
    """Per-face constants that turn Moller-Trumbore into three matmuls.

    With one shared ray origin, det / u*det / v*det / t*det are all either
    dot products of the ray direction with a per-face vector or a per-face
    constant:

        det   = -d . n           n    = edge1 x edge2
        u*det =  d . m2          m2   = edge2 x tvec
        v*det =  d . q           q    = tvec  x edge1
        t*det =  edge2 . q       tvec = origin - v0
    """
    v = mesh.vertices[mesh.faces]
    edge1 = v[:, 1] - v[:, 0]
    edge2 = v[:, 2] - v[:, 0]
    tvec = origin[None, :] - v[:, 0]
    n = np.cross(edge1, edge2)
    m2 = np.cross(edge2, tvec)
    q = np.cross(tvec, edge1)
    tdet = np.einsum("ij,ij->i", edge2, q)
    return n, m2, q, tdet


def _candidate_pairs(mesh: TriMesh, camera: Camera):
    """Conservative (pixel, face) candidate pairs from screen-space binning.

    Perspective projection maps a triangle with all vertices in front of
    the camera to a triangle in pixel coordinates, so a pixel center can
    only be covered if it lies inside the projected-vertex bounding box.
    Returns (pix, face, behind_faces); faces with any vertex at or behind
    the camera plane are deferred to an exhaustive test.
    """
    w, h = camera.width, camera.height
    fwd, right, up = camera.basis()
    rel = mesh.vertices - camera.position
    z = rel @ fwd
    tan_y = math.tan(camera.fov_y / 2)
    tan_x = tan_y * w / h
    with np.errstate(divide="ignore", invalid="ignore"):
        col = ((rel @ right) / (z * tan_x) + 1.0) * w / 2 - 0.5
        row = (1.0 - (rel @ up) / (z * tan_y)) * h / 2 - 0.5

    vz = z[mesh.faces]              # (m, 3)
    ok = np.all(vz > 1e-9, axis=1)
    behind_faces = np.nonzero(~ok)[0]

    margin = 1e-6  # absorbs projection round-off at bbox edges
    fc = col[mesh.faces]
    fr = row[mesh.faces]
    c0 = np.maximum(np.ceil(fc.min(axis=1) - margin), 0).astype(np.int64)
    c1 = np.minimum(np.floor(fc.max(axis=1) + margin), w - 1).astype(np.int64)
    r0 = np.maximum(np.ceil(fr.min(axis=1) - margin), 0).astype(np.int64)
    r1 = np.minimum(np.floor(fr.max(axis=1) + margin), h - 1).astype(np.int64)

    bw = c1 - c0 + 1
    bh = r1 - r0 + 1
    counts = np.where(ok & (bw > 0) & (bh > 0), bw * bh, 0)
    keep = counts > 0
    face_idx = np.nonzero(keep)[0]
    counts = counts[keep]
    if len(face_idx) == 0:
        return np.empty(0, np.int64), np.empty(0, np.int64), behind_faces

    total = int(counts.sum())
    start = np.concatenate(([0], np.cumsum(counts)[:-1]))
    lin = np.arange(total) - np.repeat(start, counts)
    bw_rep = np.repeat(bw[keep], counts)
    pix_row = np.repeat(r0[keep], counts) + lin // bw_rep
    pix_col = np.repeat(c0[keep], counts) + lin % bw_rep
    return pix_row * w + pix_col, np.repeat(face_idx, counts), behind_faces


def _nearest_hits(mesh: TriMesh, camera: Camera, pair_chunk: int = 4_000_000):
    """Nearest-face intersection for every pixel ray.

    Returns (face_ids, t, u, v) flat arrays of length H*W with
    BACKGROUND_FACE / far / 0 / 0 where nothing is hit inside [near, far].
    Ray/face pairs come from conservative screen-space binning, so the
    result is identical to testing every face against every pixel.
    """
    origin = camera.position
    dirs = camera.ray_directions().reshape(-1, 3)
    n_rays = dirs.shape[0]

    n, m2, q, tdet = _face_precompute(mesh, origin)
    pix, face, behind = _candidate_pairs(mesh, camera)
    if len(behind):
        # conservative fallback: faces straddling the camera plane get
        # tested against every pixel
        pix = np.concatenate([pix, np.repeat(np.arange(n_rays), len(behind))])
        face = np.concatenate([face, np.tile(behind, n_rays)])

    best_t = np.full(n_rays, np.inf)
    best_face = np.full(n_rays, np.iinfo(np.int64).max, dtype=np.int64)

    for lo in range(0, len(pix), pair_chunk):
        p = pix[lo:lo + pair_chunk]
        f = face[lo:lo + pair_chunk]
        d = dirs[p]
        det = -np.einsum("ij,ij->i", d, n[f])
        with np.errstate(divide="ignore", invalid="ignore"):
            inv_det = 1.0 / det
            u = np.einsum("ij,ij->i", d, m2[f]) * inv_det
            v = np.einsum("ij,ij->i", d, q[f]) * inv_det
            t = tdet[f] * inv_det
            valid = (
                (np.abs(det) >= _DET_EPS)
                & (u >= 0.0) & (u <= 1.0)
                & (v >= 0.0) & (u + v <= 1.0)
                & (t >= camera.near) & (t <= camera.far)
            )
        p, f, t = p[valid], f[valid], t[valid]
        # nearest hit per pixel, distance ties going to the lowest face id
        order = np.lexsort((f, t, p))
        p, f, t = p[order], f[order], t[order]
        first = np.ones(len(p), dtype=bool)
        first[1:] = p[1:] != p[:-1]
        p, f, t = p[first], f[first], t[first]
        better = (t < best_t[p]) | ((t == best_t[p]) & (f < best_face[p]))
        best_t[p[better]] = t[better]
        best_face[p[better]] = f[better]

    hit = best_t < np.inf
    best_face = np.where(hit, best_face, BACKGROUND_FACE).astype(np.int32)
    u_out = np.zeros(n_rays)
    v_out = np.zeros(n_rays)
    if np.any(hit):
        # recompute barycentrics for the winning faces only
        f = best_face[hit]
        det = -np.einsum("ij,ij->i", dirs[hit], n[f])
        inv_det = 1.0 / det
        u_out[hit] = np.einsum("ij,ij->i", dirs[hit], m2[f]) * inv_det
        v_out[hit] = np.einsum("ij,ij->i", dirs[hit], q[f]) * inv_det
    best_t[~hit] = camera.far
    return best_face, best_t, u_out, v_out


def rasterize_face_map(mesh: TriMesh, camera: Camera) -> FaceMap:
    """Nearest-face id per pixel center, plus the hit distance."""
    if mesh.num_faces == 0:
        raise ValueError("cannot rasterize an empty mesh")
    face, t, _, _ = _nearest_hits(mesh, camera)
    shape = (camera.height, camera.width)
    return FaceMap(face.reshape(shape), t.reshape(shape))


def render_gbuffer(
    mesh: TriMesh,
    camera: Camera,
    background=(1.0, 1.0, 1.0),
    smooth_normals: bool = False,
) -> GBuffer:
    """Render RGB / depth / normal / mask buffers of a mesh.

    RGB interpolates vertex colors barycentrically; normals are geometric
    face normals (or interpolated vertex normals when smooth_normals is
    set), flipped to face the camera. Background pixels get the background
    color, far-plane depth, a zero normal, and mask=False.
    """
    if mesh.num_faces == 0:
        raise ValueError("cannot render an empty mesh")
    face, t, u, v = _nearest_hits(mesh, camera)
    h, w = camera.height, camera.width
    hit = face != BACKGROUND_FACE

    rgb = np.tile(np.asarray(background, dtype=np.float64), (h * w, 1))
    normal = np.zeros((h * w, 3))
    if np.any(hit):
        f = face[hit]
        b0 = 1.0 - u[hit] - v[hit]
        b1 = u[hit]
        b2 = v[hit]
        corners = mesh.faces[f]
        col = mesh.colors
        rgb[hit] = (
            b0[:, None] * col[corners[:, 0]]
            + b1[:, None] * col[corners[:, 1]]
            + b2[:, None] * col[corners[:, 2]]
        )
        if smooth_normals:
            vn = mesh.vertex_normals()
            n = (
                b0[:, None] * vn[corners[:, 0]]
                + b1[:, None] * vn[corners[:, 1]]
                + b2[:, None] * vn[corners[:, 2]]
            )
            n /= np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-30)
        else:
            n = mesh.face_normals()[f]
        dirs = camera.ray_directions().reshape(-1, 3)[hit]
        facing = -np.sign(np.einsum("ij,ij->i", n, dirs))
        facing[facing == 0.0] = 1.0
        normal[hit] = n * facing[:, None]

    return GBuffer(
        rgb=np.clip(rgb, 0.0, 1.0).reshape(h, w, 3),
        depth=t.reshape(h, w),
        normal=normal.reshape(h, w, 3),
        mask=hit.reshape(h, w),
    )
