"""View-consistent latent noise rendered from a noise-carrying sphere.

Each face of a canonical unit sphere owns two independent standard-normal
latent vectors of shape (frames, channels): an "anchor" layer and an "aux"
layer. Rendering a camera's pixel-to-face map and looking those vectors up
per pixel yields a noise field that is bit-identical for any face seen
from two different viewpoints. Frames at arbitrary times blend the two
layers with sqrt weights so the marginal variance stays 1:

    blended[i] = sqrt(1 - tau_i) * aux + sqrt(tau_i) * anchor,

where tau_i is the sampled time's offset from its preceding anchor time.

Values are never stored: they are derived on demand from a counter-based
hash of (seed, face, frame, channel) plus a per-layer stream constant, so
memory stays O(field size) and determinism is structural. Background
pixels (rays that miss the sphere) get per-pixel noise keyed by the pixel
coordinates instead of a face id.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Camera, TriMesh, rasterize_face_map

_MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)

# Stream constants: one independent value sequence per noise role.
STREAM_FACE_ANCHOR = 0x243F6A8885A308D3   # faces, anchor layer
STREAM_FACE_AUX = 0x13198A2E03707344      # faces, aux layer
STREAM_PIXEL_ANCHOR = 0xA4093822299F31D0  # background pixels, anchor layer
STREAM_PIXEL_AUX = 0x082EFA98EC4E6C89     # background pixels, aux layer
STREAM_SCREEN_AUX = 0x452821E638D01377    # screen-fixed aux alternative
STREAM_RANDOM = 0xBE5466CF34E90C6C        # plain per-pixel random fields

_LAYER_STREAMS = {
    ("anchor", "face"): STREAM_FACE_ANCHOR,
    ("aux", "face"): STREAM_FACE_AUX,
    ("anchor", "pixel"): STREAM_PIXEL_ANCHOR,
    ("aux", "pixel"): STREAM_PIXEL_AUX,
}


@dataclass(frozen=True)
class NoiseConfig:
    """Latent noise dimensions and sphere setup.

    Defaults follow the 32x32x4 latent with 16 frames used throughout;
    aux_mode picks whether the aux layer lives on sphere faces
    ("per-face", view-dependent lookup like the anchor layer) or on the
    screen ("screen-fixed", the same tensor for every viewpoint).
    """

    height: int = 32
    width: int = 32
    frames: int = 16
    channels: int = 4
    seed: int = 0
    sphere_subdivisions: int = 5
    aux_mode: str = "per-face"

    def __post_init__(self):
        for name in ("height", "width", "frames", "channels"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.aux_mode not in ("per-face", "screen-fixed"):
            raise ValueError("aux_mode must be 'per-face' or 'screen-fixed'")


@dataclass
class NoiseField:
    """A (H, W, V, C) float32 noise tensor plus where it came from."""

    data: np.ndarray
    provenance: str  # anchor | aux | interpolated | random

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 4:
            raise ValueError("noise fields are (height, width, frames, channels)")

    @property
    def shape(self):
        return self.data.shape


def _mix64(x: np.ndarray) -> np.ndarray:
    """splitmix64 finalizer: avalanche a 64-bit counter into a hash."""
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


def _stream_state(seed: int, stream: int) -> np.uint64:
    s = np.uint64(seed & 0xFFFFFFFFFFFFFFFF) ^ np.uint64(stream)
    return _mix64(s[None] if np.ndim(s) else np.array([s], np.uint64))[0]


def _normals_from_keys(seed: int, stream: int, keys: np.ndarray) -> np.ndarray:
    """One standard-normal draw per 64-bit key (Box-Muller on hash bits)."""
    state = _stream_state(seed, stream)
    h = _mix64(state + (keys.astype(np.uint64) + np.uint64(1)) * _GOLDEN)
    hi = (h >> np.uint64(32)).astype(np.float64)
    lo = (h & np.uint64(0xFFFFFFFF)).astype(np.float64)
    u1 = (hi + 1.0) * 2.0 ** -32  # in (0, 1]: log never sees 0
    u2 = lo * 2.0 ** -32
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def _face_keys(face, frame, channel):
    # injective packing: face in [0, 2^32), frame < 2^12, channel < 2^8
    return (
        np.uint64(0x8000000000000000)
        | face.astype(np.uint64)
        | (frame.astype(np.uint64) << np.uint64(32))
        | (channel.astype(np.uint64) << np.uint64(44))
    )


def _pixel_keys(row, col, frame, channel):
    return (
        col.astype(np.uint64)
        | (row.astype(np.uint64) << np.uint64(16))
        | (frame.astype(np.uint64) << np.uint64(32))
        | (channel.astype(np.uint64) << np.uint64(44))
    )


def derive_seed(seed: int, *salts: int) -> int:
    """Deterministic child seed, used to give e.g. each view of a random
    baseline its own independent stream."""
    x = np.array([seed & 0xFFFFFFFFFFFFFFFF], np.uint64)
    for s in salts:
        x = _mix64(x ^ np.uint64(s & 0xFFFFFFFFFFFFFFFF))
    return int(x[0])


def face_noise(seed: int, face_id: int, frame: int, channel: int, layer: str) -> float:
    """The standard-normal value attached to one (face, frame, channel)
    slot of the given layer ("anchor" or "aux")."""
    if face_id < 0 or frame < 0 or channel < 0:
        raise ValueError("indices must be non-negative")
    if frame >= 1 << 12 or channel >= 1 << 8 or face_id >= 1 << 32:
        raise ValueError("index out of packing range")
    stream = _LAYER_STREAMS[(layer, "face")]
    keys = _face_keys(np.array([face_id]), np.array([frame]), np.array([channel]))
    return float(_normals_from_keys(seed, stream, keys)[0])


def _check_layer(layer: str) -> None:
    if layer not in ("anchor", "aux"):
        raise ValueError("layer must be 'anchor' or 'aux'")


def render_noise_field(
    sphere: TriMesh, camera: Camera, config: NoiseConfig, layer: str
) -> NoiseField:
    """Render one layer of the sphere's noise attributes from a viewpoint.

    The camera resolution must equal the latent resolution. Pixels hitting
    the sphere read their face's latent vector; background pixels read
    per-pixel values from the matching background stream. With
    aux_mode="screen-fixed" the aux layer ignores the sphere entirely and
    is the same screen-space tensor for every camera.
    """
    _check_layer(layer)
    if (camera.width, camera.height) != (config.width, config.height):
        raise ValueError("camera resolution must match the latent resolution")
    radii = np.linalg.norm(sphere.vertices, axis=1)
    if not np.allclose(radii, 1.0, atol=1e-6):
        raise ValueError("noise sphere must be the canonical unit sphere")

    h, w, v, c = config.height, config.width, config.frames, config.channels
    frame_idx, chan_idx = np.meshgrid(np.arange(v), np.arange(c), indexing="ij")

    if layer == "aux" and config.aux_mode == "screen-fixed":
        rows, cols = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
        keys = _pixel_keys(
            rows[:, :, None, None], cols[:, :, None, None],
            frame_idx[None, None], chan_idx[None, None],
        )
        data = _normals_from_keys(config.seed, STREAM_SCREEN_AUX, keys.ravel())
        return NoiseField(data.reshape(h, w, v, c).astype(np.float32), provenance=layer)

    fmap = rasterize_face_map(sphere, camera)
    out = np.empty((h, w, v, c), dtype=np.float32)

    hit = fmap.mask
    if np.any(hit):
        faces = fmap.face_ids[hit]
        keys = _face_keys(
            faces[:, None, None], frame_idx[None], chan_idx[None]
        )
        vals = _normals_from_keys(config.seed, _LAYER_STREAMS[(layer, "face")], keys.ravel())
        out[hit] = vals.reshape(-1, v, c).astype(np.float32)
    if not np.all(hit):
        rows, cols = np.nonzero(~hit)
        keys = _pixel_keys(
            rows[:, None, None], cols[:, None, None], frame_idx[None], chan_idx[None]
        )
        vals = _normals_from_keys(config.seed, _LAYER_STREAMS[(layer, "pixel")], keys.ravel())
        out[~hit] = vals.reshape(-1, v, c).astype(np.float32)
    return NoiseField(out, provenance=layer)


def random_noise(config: NoiseConfig) -> NoiseField:
    """I.i.d. standard-normal field, the view-independent baseline.
    Deterministic in config.seed; derive_seed() gives per-view variants."""
    h, w, v, c = config.height, config.width, config.frames, config.channels
    rows, cols, frames, chans = np.meshgrid(
        np.arange(h), np.arange(w), np.arange(v), np.arange(c), indexing="ij"
    )
    keys = _pixel_keys(rows, cols, frames, chans)
    data = _normals_from_keys(config.seed, STREAM_RANDOM, keys.ravel())
    return NoiseField(data.reshape(h, w, v, c).astype(np.float32), provenance="random")


def interpolate_noise(anchor: NoiseField, aux: NoiseField, times) -> NoiseField:
    """Blend the aux and anchor layers per frame with sqrt weights.

    `times` provides per-frame offsets tau in [0, 1] from the preceding
    time anchor (see timesampler.TimeVector). tau=0 returns the aux field
    unchanged, tau=1 the anchor field; any tau in between preserves unit
    variance because the squared weights sum to one.
    """
    if anchor.data.shape != aux.data.shape:
        raise ValueError("anchor and aux fields must have identical shapes")
    offsets = np.asarray(getattr(times, "offsets", times), dtype=np.float64)
    if offsets.ndim != 1 or len(offsets) != anchor.data.shape[2]:
        raise ValueError("need one offset per frame")
    if np.any(offsets < 0.0) or np.any(offsets > 1.0):
        raise ValueError("offsets must lie in [0, 1]")
    w_anchor = np.sqrt(offsets).astype(np.float32)
    w_aux = np.sqrt(1.0 - offsets).astype(np.float32)
    data = (
        w_aux[None, None, :, None] * aux.data
        + w_anchor[None, None, :, None] * anchor.data
    )
    return NoiseField(data, provenance="interpolated")


def swap_layer_roles(times) -> np.ndarray:
    """Offsets that reverse which layer is recovered at anchor times.

    The verbatim blend lands on the aux layer exactly at anchor times;
    feeding interpolate_noise(anchor, aux, swap_layer_roles(times)) lands
    on the anchor layer there instead, for experiments that prefer the
    opposite role assignment.
    """
    offsets = np.asarray(getattr(times, "offsets", times), dtype=np.float64)
    return 1.0 - offsets


def latent_camera(camera: Camera, config: NoiseConfig) -> Camera:
    """The same viewpoint at the latent resolution (for noise rendering)."""
    return camera.at_resolution(config.width, config.height)


def noise_frame_to_u8(frame: np.ndarray) -> np.ndarray:
    """Map channels 0-2 of one (H, W, C) noise frame to displayable RGB
    bytes via the affine map [-3, 3] -> [0, 255]."""
    rgb = frame[:, :, :3].astype(np.float64)
    return np.clip((rgb + 3.0) / 6.0 * 255.0, 0, 255).round().astype(np.uint8)
