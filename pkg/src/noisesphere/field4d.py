"""Dense differentiable 4D radiance grid with emission-absorption rendering.

The scene is a lattice of density and color logits over (x, y, z, t).
Activated values (softplus density, sigmoid color) are interpolated
quadrilinearly, so node values are reproduced exactly at lattice points
and the field is smooth in its parameters, which keeps plain first-order
optimization and finite-difference checks honest.

Rendering marches each pixel ray across the grid bounding box with a
fixed number of midpoint samples. With optical depths tau_j = sigma_j *
dt, transmittance is T_j = exp(-sum_{k<j} tau_k) and the per-sample
compositing weight is w_j = T_j - T_{j+1}, so w_j sums with the residual
transmittance to exactly 1. Depth composites the ray distance, normals
composite the smoothly normalized negative density gradient (central
differences of activated density on the lattice, interpolated like any
other channel), and the leftover transmittance falls through to a
background color / far depth / zero normal.

backprop_render implements the exact vector-Jacobian product of all of
the above back to the grid logits; gradient scatters use bincount so
accumulation order never affects the result.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .geometry import Camera

_NORMAL_EPS = 1e-4  # smooth floor for gradient normalization


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class Grid4D:
    """Density/color logits on a (nx, ny, nz, nt) lattice over a box.

    Spatial nodes span [bbox_min, bbox_max]; temporal nodes span [0, 1].
    Activated density is softplus(logit) >= 0 and activated color
    sigmoid(logit) in [0, 1]; parameters must stay finite.
    """

    density_logits: np.ndarray            # (nx, ny, nz, nt)
    color_logits: np.ndarray              # (nx, ny, nz, nt, 3)
    bbox_min: tuple = (-0.5, -0.5, -0.5)
    bbox_max: tuple = (0.5, 0.5, 0.5)

    def __post_init__(self):
        self.density_logits = np.asarray(self.density_logits, dtype=np.float64)
        self.color_logits = np.asarray(self.color_logits, dtype=np.float64)
        if self.density_logits.ndim != 4:
            raise ValueError("density logits must be (nx, ny, nz, nt)")
        if self.color_logits.shape != self.density_logits.shape + (3,):
            raise ValueError("color logits must be (nx, ny, nz, nt, 3)")
        nx, ny, nz, nt = self.density_logits.shape
        if min(nx, ny, nz) < 2 or nt < 1:
            raise ValueError("need at least 2 nodes per spatial axis")
        lo = np.asarray(self.bbox_min, dtype=np.float64)
        hi = np.asarray(self.bbox_max, dtype=np.float64)
        if lo.shape != (3,) or hi.shape != (3,) or np.any(hi <= lo):
            raise ValueError("invalid bounding box")
        self.bbox_min = tuple(lo)
        self.bbox_max = tuple(hi)
        if not (np.all(np.isfinite(self.density_logits)) and np.all(np.isfinite(self.color_logits))):
            raise ValueError("grid parameters must be finite")

    @classmethod
    def create(
        cls,
        resolution: Sequence[int] = (48, 48, 48, 8),
        density_logit: float = -2.0,
        color_logit: float = 0.0,
        bbox_min=(-0.5, -0.5, -0.5),
        bbox_max=(0.5, 0.5, 0.5),
    ) -> "Grid4D":
        nx, ny, nz, nt = resolution
        return cls(
            np.full((nx, ny, nz, nt), density_logit),
            np.full((nx, ny, nz, nt, 3), color_logit),
            bbox_min,
            bbox_max,
        )

    @property
    def resolution(self):
        return self.density_logits.shape

    @property
    def spacing(self) -> np.ndarray:
        lo = np.asarray(self.bbox_min)
        hi = np.asarray(self.bbox_max)
        n = np.asarray(self.resolution[:3])
        return (hi - lo) / (n - 1)

    @property
    def num_params(self) -> int:
        return self.density_logits.size + self.color_logits.size

    def copy(self) -> "Grid4D":
        return Grid4D(
            self.density_logits.copy(), self.color_logits.copy(),
            self.bbox_min, self.bbox_max,
        )


@dataclass
class GridGrads:
    """Gradients w.r.t. the grid logits; supports in-place accumulation."""

    density_logits: np.ndarray
    color_logits: np.ndarray

    @classmethod
    def zeros_like(cls, grid: Grid4D) -> "GridGrads":
        return cls(np.zeros_like(grid.density_logits), np.zeros_like(grid.color_logits))

    def __iadd__(self, other: "GridGrads") -> "GridGrads":
        self.density_logits += other.density_logits
        self.color_logits += other.color_logits
        return self

    def scale(self, factor: float) -> "GridGrads":
        self.density_logits *= factor
        self.color_logits *= factor
        return self

    def norm(self) -> float:
        return float(
            np.sqrt(
                np.sum(self.density_logits**2) + np.sum(self.color_logits**2)
            )
        )


@dataclass(frozen=True)
class RenderConfig:
    """Quadrature and background settings for ray marching.

    `samples` is the per-ray sample count; alternatively set `step` (scene
    units) and the count is derived from the box diagonal. Background is
    the color composited behind leftover transmittance.
    """

    samples: int = 64
    step: float | None = None
    background: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if self.step is not None:
            if self.step <= 0:
                raise ValueError("step size must be positive")
        elif self.samples < 2:
            raise ValueError("need at least 2 samples per ray")

    def sample_count(self, grid: Grid4D) -> int:
        if self.step is None:
            return self.samples
        diag = float(np.linalg.norm(np.asarray(grid.bbox_max) - np.asarray(grid.bbox_min)))
        return max(2, int(np.ceil(diag / self.step)))


@dataclass
class Frame:
    """One rendered time slice: RGB, depth, coverage, normals."""

    rgb: np.ndarray     # (H, W, 3) in [0, 1]
    depth: np.ndarray   # (H, W)
    alpha: np.ndarray   # (H, W) in [0, 1]
    normal: np.ndarray  # (H, W, 3)
    time: float


@dataclass
class PixelGradients:
    """Upstream gradients for backprop_render; any subset may be present."""

    rgb: np.ndarray | None = None
    depth: np.ndarray | None = None
    normal: np.ndarray | None = None
    alpha: np.ndarray | None = None

    def validate(self, height: int, width: int) -> None:
        shapes = {
            "rgb": (height, width, 3),
            "depth": (height, width),
            "normal": (height, width, 3),
            "alpha": (height, width),
        }
        any_set = False
        for name, want in shapes.items():
            arr = getattr(self, name)
            if arr is None:
                continue
            any_set = True
            if arr.shape != want:
                raise ValueError(f"pixel gradient '{name}' must have shape {want}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"pixel gradient '{name}' contains non-finite values")
        if not any_set:
            raise ValueError("no upstream pixel gradients provided")


# ---------------------------------------------------------------------------
# interpolation plumbing


def _time_slab(grid: Grid4D, t: float):
    """Slab indices and blend weight for a time in [0, 1]."""
    nt = grid.resolution[3]
    if nt == 1:
        return 0, 0, 0.0
    x = t * (nt - 1)
    kt = min(int(np.floor(x)), nt - 2)
    return kt, kt + 1, x - kt


def _activated_slices(grid: Grid4D, t: float):
    """Time-blended activated density / color / density-gradient grids.

    Blending activated slabs is the same quadrilinear interpolation as
    activating all 16 corners of the 4D cell, just factored per slab.
    """
    kt, ktp, wt = _time_slab(grid, t)
    sp0 = softplus(grid.density_logits[..., kt])
    sp1 = sp0 if ktp == kt else softplus(grid.density_logits[..., ktp])
    sigma = (1.0 - wt) * sp0 + wt * sp1
    sg0 = sigmoid(grid.color_logits[..., kt, :])
    sg1 = sg0 if ktp == kt else sigmoid(grid.color_logits[..., ktp, :])
    rgb = (1.0 - wt) * sg0 + wt * sg1
    return sigma, rgb, (kt, ktp, wt)


def _gradient_grid(sigma: np.ndarray, spacing: np.ndarray) -> np.ndarray:
    """Central differences of a 3D grid, zero-padded outside the box."""
    g = np.zeros(sigma.shape + (3,))
    for ax in range(3):
        h2 = 2.0 * spacing[ax]
        sl = [slice(None)] * 3
        lo, mid, hi = list(sl), list(sl), list(sl)
        mid[ax] = slice(1, -1)
        lo[ax] = slice(2, None)
        hi[ax] = slice(None, -2)
        g[tuple(mid) + (ax,)] = (sigma[tuple(lo)] - sigma[tuple(hi)]) / h2
        first, second = list(sl), list(sl)
        first[ax] = 0
        second[ax] = 1
        g[tuple(first) + (ax,)] = sigma[tuple(second)] / h2
        last, prev = list(sl), list(sl)
        last[ax] = -1
        prev[ax] = -2
        g[tuple(last) + (ax,)] = -sigma[tuple(prev)] / h2
    return g


def _gradient_grid_adjoint(dg: np.ndarray, spacing: np.ndarray) -> np.ndarray:
    """Adjoint of _gradient_grid: gradient w.r.t. the input 3D grid."""
    ds = np.zeros(dg.shape[:3])
    for ax in range(3):
        h2 = 2.0 * spacing[ax]
        sl = [slice(None)] * 3
        mid = list(sl)
        mid[ax] = slice(1, -1)
        up, down = list(sl), list(sl)
        up[ax] = slice(2, None)
        down[ax] = slice(None, -2)
        ds[tuple(up)] += dg[tuple(mid) + (ax,)] / h2
        ds[tuple(down)] -= dg[tuple(mid) + (ax,)] / h2
        first, second = list(sl), list(sl)
        first[ax] = 0
        second[ax] = 1
        ds[tuple(second)] += dg[tuple(first) + (ax,)] / h2
        last, prev = list(sl), list(sl)
        last[ax] = -1
        prev[ax] = -2
        ds[tuple(prev)] -= dg[tuple(last) + (ax,)] / h2
    return ds


def _interp_setup(grid: Grid4D, positions: np.ndarray):
    """Flat corner indices (M, 8) and trilinear weights (M, 8)."""
    lo = np.asarray(grid.bbox_min)
    hi = np.asarray(grid.bbox_max)
    n = np.asarray(grid.resolution[:3])
    gx = (positions - lo) / (hi - lo) * (n - 1)
    i0 = np.clip(np.floor(gx).astype(np.int64), 0, n - 2)
    f = np.clip(gx - i0, 0.0, 1.0)

    ny, nz = int(n[1]), int(n[2])
    base = (i0[:, 0] * ny + i0[:, 1]) * nz + i0[:, 2]
    corner = np.array(
        [(dx * ny + dy) * nz + dz for dx in (0, 1) for dy in (0, 1) for dz in (0, 1)],
        dtype=np.int64,
    )
    idx8 = base[:, None] + corner[None, :]

    wx = np.stack([1.0 - f[:, 0], f[:, 0]], axis=1)
    wy = np.stack([1.0 - f[:, 1], f[:, 1]], axis=1)
    wz = np.stack([1.0 - f[:, 2], f[:, 2]], axis=1)
    w8 = (wx[:, :, None, None] * wy[:, None, :, None] * wz[:, None, None, :]).reshape(-1, 8)
    return idx8, w8


def _gather_scalar(grid3d: np.ndarray, idx8, w8) -> np.ndarray:
    return np.einsum("mk,mk->m", grid3d.reshape(-1)[idx8], w8)


def _gather_vector(grid3d: np.ndarray, idx8, w8) -> np.ndarray:
    vals = grid3d.reshape(-1, grid3d.shape[-1])[idx8]  # (M, 8, C)
    return np.einsum("mkc,mk->mc", vals, w8)


def _scatter_scalar(dvals, idx8, w8, size) -> np.ndarray:
    return np.bincount(
        idx8.reshape(-1), weights=(w8 * dvals[:, None]).reshape(-1), minlength=size
    )


def sample_field(grid: Grid4D, x, y, z, t: float):
    """Quadrilinearly interpolated (density, rgb) at world points.

    Accepts scalars or equal-shaped arrays for x/y/z and a single time.
    Points outside the box return zero density and zero color; t must lie
    in [0, 1].
    """
    if not 0.0 <= t <= 1.0:
        raise ValueError("t must lie in [0, 1]")
    pts = np.stack(
        [np.asarray(x, np.float64), np.asarray(y, np.float64), np.asarray(z, np.float64)],
        axis=-1,
    )
    scalar_in = pts.ndim == 1
    pts = pts.reshape(-1, 3)
    lo = np.asarray(grid.bbox_min)
    hi = np.asarray(grid.bbox_max)
    inside = np.all((pts >= lo) & (pts <= hi), axis=1)

    sigma_grid, rgb_grid, _ = _activated_slices(grid, t)
    density = np.zeros(len(pts))
    rgb = np.zeros((len(pts), 3))
    if np.any(inside):
        idx8, w8 = _interp_setup(grid, pts[inside])
        density[inside] = _gather_scalar(sigma_grid, idx8, w8)
        rgb[inside] = _gather_vector(rgb_grid, idx8, w8)
    if scalar_in:
        return float(density[0]), rgb[0]
    return density, rgb


# ---------------------------------------------------------------------------
# ray marching


def _ray_box_spans(camera: Camera, lo: np.ndarray, hi: np.ndarray):
    """Entry/exit distances of each pixel ray with the bounding box,
    clipped to [near, far]. Returns (dirs, enter, exit, hit mask)."""
    dirs = camera.ray_directions().reshape(-1, 3)
    o = camera.position
    t_enter = np.full(len(dirs), camera.near)
    t_exit = np.full(len(dirs), camera.far)
    for ax in range(3):
        d = dirs[:, ax]
        parallel = np.abs(d) < 1e-15
        with np.errstate(divide="ignore"):
            inv = 1.0 / d
        ta = (lo[ax] - o[ax]) * inv
        tb = (hi[ax] - o[ax]) * inv
        tmin = np.minimum(ta, tb)
        tmax = np.maximum(ta, tb)
        inside = (o[ax] >= lo[ax]) & (o[ax] <= hi[ax])
        tmin = np.where(parallel, np.where(inside, -np.inf, np.inf), tmin)
        tmax = np.where(parallel, np.where(inside, np.inf, -np.inf), tmax)
        t_enter = np.maximum(t_enter, tmin)
        t_exit = np.minimum(t_exit, tmax)
    hit = t_exit > t_enter
    return dirs, t_enter, t_exit, hit


class _RenderTape:
    """Everything the backward pass needs from one forward render."""

    __slots__ = (
        "grid", "camera", "config", "time", "want_normal", "hit",
        "idx8", "w8", "dt", "t_s", "wgt", "tnext", "tend",
        "c_s", "n_s", "g_s", "qinv", "slab", "sigma_grid", "spacing",
        "n_samples",
    )


def _render_forward(
    grid: Grid4D, camera: Camera, t: float, config: RenderConfig, want_normal: bool
):
    if not 0.0 <= t <= 1.0:
        raise ValueError("t must lie in [0, 1]")
    h, w = camera.height, camera.width
    lo = np.asarray(grid.bbox_min)
    hi = np.asarray(grid.bbox_max)
    bg = np.asarray(config.background, dtype=np.float64)
    n_samples = config.sample_count(grid)

    dirs, t_enter, t_exit, hit = _ray_box_spans(camera, lo, hi)

    frame = Frame(
        rgb=np.tile(bg, (h * w, 1)),
        depth=np.full(h * w, camera.far),
        alpha=np.zeros(h * w),
        normal=np.zeros((h * w, 3)),
        time=t,
    )
    tape = _RenderTape()
    tape.grid = grid
    tape.camera = camera
    tape.config = config
    tape.time = t
    tape.want_normal = want_normal
    tape.hit = hit
    tape.n_samples = n_samples

    if np.any(hit):
        d = dirs[hit]
        dt = (t_exit[hit] - t_enter[hit]) / n_samples
        offsets = (np.arange(n_samples) + 0.5)[None, :]
        t_s = t_enter[hit][:, None] + offsets * dt[:, None]          # (R, S)
        pos = camera.position[None, None, :] + t_s[:, :, None] * d[:, None, :]

        sigma_grid, rgb_grid, slab = _activated_slices(grid, t)
        idx8, w8 = _interp_setup(grid, pos.reshape(-1, 3))
        r = int(hit.sum())
        sigma_s = _gather_scalar(sigma_grid, idx8, w8).reshape(r, n_samples)
        c_s = _gather_vector(rgb_grid, idx8, w8).reshape(r, n_samples, 3)

        tau = sigma_s * dt[:, None]
        prefix = np.cumsum(tau, axis=1)
        trans = np.exp(-(prefix - tau))     # T_j, transmittance before sample j
        tnext = np.exp(-prefix)             # T_{j+1}
        wgt = trans - tnext
        tend = tnext[:, -1]

        frame.rgb[hit] = np.einsum("rs,rsc->rc", wgt, c_s) + tend[:, None] * bg
        frame.depth[hit] = np.einsum("rs,rs->r", wgt, t_s) + tend * camera.far
        frame.alpha[hit] = 1.0 - tend

        tape.spacing = grid.spacing
        if want_normal:
            grad_grid = _gradient_grid(sigma_grid, tape.spacing)
            g_s = _gather_vector(grad_grid, idx8, w8).reshape(r, n_samples, 3)
            qinv = 1.0 / np.sqrt(np.einsum("rsc,rsc->rs", g_s, g_s) + _NORMAL_EPS**2)
            n_s = -g_s * qinv[:, :, None]
            frame.normal[hit] = np.einsum("rs,rsc->rc", wgt, n_s)
            tape.g_s = g_s
            tape.qinv = qinv
            tape.n_s = n_s
        else:
            tape.g_s = tape.qinv = tape.n_s = None

        tape.idx8 = idx8
        tape.w8 = w8
        tape.dt = dt
        tape.t_s = t_s
        tape.wgt = wgt
        tape.tnext = tnext
        tape.tend = tend
        tape.c_s = c_s
        tape.slab = slab
        tape.sigma_grid = sigma_grid

    frame.rgb = frame.rgb.reshape(h, w, 3)
    frame.depth = frame.depth.reshape(h, w)
    frame.alpha = frame.alpha.reshape(h, w)
    frame.normal = frame.normal.reshape(h, w, 3)
    return frame, tape


def _render_backward(tape: _RenderTape, pixel_gradients: PixelGradients) -> GridGrads:
    grid = tape.grid
    camera = tape.camera
    pixel_gradients.validate(camera.height, camera.width)
    grads = GridGrads.zeros_like(grid)
    hit = tape.hit
    if not np.any(hit):
        return grads
    if pixel_gradients.normal is not None and not tape.want_normal:
        raise ValueError("normal gradients supplied but the forward pass skipped normals")

    r, s = tape.wgt.shape
    flat = lambda a: a.reshape(-1, a.shape[-1]) if a.ndim == 3 else a.reshape(-1)
    drgb = flat(pixel_gradients.rgb)[hit] if pixel_gradients.rgb is not None else None
    ddepth = flat(pixel_gradients.depth)[hit] if pixel_gradients.depth is not None else None
    dnormal = flat(pixel_gradients.normal)[hit] if pixel_gradients.normal is not None else None
    dalpha = flat(pixel_gradients.alpha)[hit] if pixel_gradients.alpha is not None else None

    bg = np.asarray(tape.config.background, dtype=np.float64)
    dwgt = np.zeros((r, s))
    dtend = np.zeros(r)
    dc_s = None
    if drgb is not None:
        dwgt += np.einsum("rsc,rc->rs", tape.c_s, drgb)
        dtend += drgb @ bg
        dc_s = tape.wgt[:, :, None] * drgb[:, None, :]
    if ddepth is not None:
        dwgt += tape.t_s * ddepth[:, None]
        dtend += camera.far * ddepth
    if dnormal is not None:
        dwgt += np.einsum("rsc,rc->rs", tape.n_s, dnormal)
    if dalpha is not None:
        dtend -= dalpha

    # d(optical depth): dtau_m = dwgt_m * T_{m+1} - sum_{j>m} dwgt_j w_j
    #                           - dtend * T_end
    a = dwgt * tape.wgt
    suffix = np.cumsum(a[:, ::-1], axis=1)[:, ::-1]
    q = np.empty_like(a)
    q[:, :-1] = suffix[:, 1:]
    q[:, -1] = 0.0
    q += (dtend * tape.tend)[:, None]
    dtau = dwgt * tape.tnext - q
    dsigma_s = dtau * tape.dt[:, None]

    nodes = int(np.prod(grid.resolution[:3]))
    dsigma_nodes = _scatter_scalar(dsigma_s.reshape(-1), tape.idx8, tape.w8, nodes)

    if dnormal is not None:
        dn_s = tape.wgt[:, :, None] * dnormal[:, None, :]
        gdot = np.einsum("rsc,rsc->rs", tape.g_s, dn_s)
        dg_s = -dn_s * tape.qinv[:, :, None] + tape.g_s * (gdot * tape.qinv**3)[:, :, None]
        dgrad_grid = np.stack(
            [
                _scatter_scalar(dg_s[:, :, c].reshape(-1), tape.idx8, tape.w8, nodes)
                for c in range(3)
            ],
            axis=-1,
        ).reshape(grid.resolution[:3] + (3,))
        dsigma_nodes += _gradient_grid_adjoint(dgrad_grid, tape.spacing).reshape(-1)

    kt, ktp, wt = tape.slab
    shape3 = grid.resolution[:3]
    dsig = dsigma_nodes.reshape(shape3)
    grads.density_logits[..., kt] += (1.0 - wt) * dsig * sigmoid(grid.density_logits[..., kt])
    grads.density_logits[..., ktp] += wt * dsig * sigmoid(grid.density_logits[..., ktp])

    if dc_s is not None:
        for c in range(3):
            dcol = _scatter_scalar(dc_s[:, :, c].reshape(-1), tape.idx8, tape.w8, nodes)
            dcol = dcol.reshape(shape3)
            for k, wk in ((kt, 1.0 - wt), (ktp, wt)):
                act = sigmoid(grid.color_logits[..., k, c])
                grads.color_logits[..., k, c] += wk * dcol * act * (1.0 - act)
    return grads


def render_frame(
    grid: Grid4D,
    camera: Camera,
    t: float,
    config: RenderConfig | None = None,
    *,
    want_normal: bool = True,
) -> Frame:
    """Render one time slice of the grid from a camera."""
    config = config or RenderConfig()
    frame, _ = _render_forward(grid, camera, t, config, want_normal)
    return frame


def render_with_tape(
    grid: Grid4D,
    camera: Camera,
    t: float,
    config: RenderConfig | None = None,
    *,
    want_normal: bool = True,
):
    """Render a frame and keep the intermediates needed for a later
    backward(tape, pixel_gradients) call without re-running the forward."""
    config = config or RenderConfig()
    return _render_forward(grid, camera, t, config, want_normal)


def backward(tape: _RenderTape, pixel_gradients: PixelGradients) -> GridGrads:
    return _render_backward(tape, pixel_gradients)


def render_video(grid: Grid4D, camera: Camera, times, config: RenderConfig | None = None):
    """Render one frame per entry of a TimeVector (or plain time array)."""
    tvals = np.asarray(getattr(times, "times", times), dtype=np.float64)
    return [render_frame(grid, camera, float(t), config) for t in tvals]


def backprop_render(
    grid: Grid4D,
    camera: Camera,
    t: float,
    config: RenderConfig | None,
    pixel_gradients: PixelGradients,
) -> GridGrads:
    """Exact parameter gradients of a rendered frame contracted with the
    given per-pixel upstream gradients."""
    config = config or RenderConfig()
    want_normal = pixel_gradients.normal is not None
    _, tape = _render_forward(grid, camera, t, config, want_normal)
    return _render_backward(tape, pixel_gradients)
