import math

import numpy as np
import pytest

from noisesphere.geometry import camera_from_view, make_icosphere, rasterize_face_map
from noisesphere.noisefield import (
    NoiseConfig,
    NoiseField,
    derive_seed,
    face_noise,
    interpolate_noise,
    latent_camera,
    noise_frame_to_u8,
    random_noise,
    render_noise_field,
    swap_layer_roles,
)
from noisesphere.timesampler import TimeVector


CFG = NoiseConfig(seed=7)


def small_camera(azimuth, elevation=0.2, cfg=CFG):
    return camera_from_view(azimuth, elevation, 3.0, width=cfg.width, height=cfg.height)


@pytest.fixture(scope="module")
def sphere():
    return make_icosphere(CFG.sphere_subdivisions)


# --- statistical oracles -----------------------------------------------------
# Bounds for mean/variance of n standard-normal draws sit at roughly 6 sigma
# for n = 1e5 (sigma_mean = n^-0.5 ~ 0.0032, sigma_var ~ sqrt(2/n) ~ 0.0045).


def assert_standard_normal(samples, mean_tol=0.02, var_lo=0.97, var_hi=1.03):
    assert abs(float(np.mean(samples))) <= mean_tol
    assert var_lo <= float(np.var(samples)) <= var_hi


# --- face_noise ---------------------------------------------------------------


def test_face_noise_is_deterministic_per_key():
    a = face_noise(3, 172, 5, 2, "anchor")
    b = face_noise(3, 172, 5, 2, "anchor")
    assert a == b


def test_face_noise_marginals_are_standard_normal():
    faces = np.arange(100_000)
    vals = np.array([0.0])
    # vectorized path through the public field API would re-rasterize, so
    # sample the scalar op's internals by walking distinct face keys
    from noisesphere.noisefield import _face_keys, _normals_from_keys, STREAM_FACE_ANCHOR

    keys = _face_keys(faces, np.zeros_like(faces), np.zeros_like(faces))
    vals = _normals_from_keys(11, STREAM_FACE_ANCHOR, keys)
    assert_standard_normal(vals)


def test_face_noise_depends_on_every_key_component():
    base = face_noise(0, 10, 3, 1, "anchor")
    assert face_noise(1, 10, 3, 1, "anchor") != base
    assert face_noise(0, 11, 3, 1, "anchor") != base
    assert face_noise(0, 10, 4, 1, "anchor") != base
    assert face_noise(0, 10, 3, 2, "anchor") != base
    assert face_noise(0, 10, 3, 1, "aux") != base


def test_face_noise_validates_ranges():
    with pytest.raises(ValueError):
        face_noise(0, -1, 0, 0, "anchor")
    with pytest.raises(ValueError):
        face_noise(0, 0, 1 << 13, 0, "anchor")
    with pytest.raises(KeyError):
        face_noise(0, 0, 0, 0, "nope")


# --- rendered fields ----------------------------------------------------------


def test_covisible_faces_carry_bit_identical_noise_vectors(sphere):
    cam_a = small_camera(0.0)
    cam_b = small_camera(math.radians(5.0))
    field_a = render_noise_field(sphere, cam_a, CFG, "anchor")
    field_b = render_noise_field(sphere, cam_b, CFG, "anchor")
    map_a = rasterize_face_map(sphere, cam_a)
    map_b = rasterize_face_map(sphere, cam_b)

    shared = np.intersect1d(map_a.face_ids[map_a.mask], map_b.face_ids[map_b.mask])
    assert len(shared) > 50
    checked = 0
    for face in shared:
        ra, ca = np.argwhere(map_a.face_ids == face)[0]
        rb, cb = np.argwhere(map_b.face_ids == face)[0]
        assert np.array_equal(field_a.data[ra, ca], field_b.data[rb, cb])
        checked += 1
    assert checked == len(shared)


def test_full_turn_reproduces_the_field_exactly(sphere):
    cam = small_camera(0.5)
    cam_turned = small_camera(0.5 + 2 * math.pi)
    a = render_noise_field(sphere, cam, CFG, "anchor")
    b = render_noise_field(sphere, cam_turned, CFG, "anchor")
    assert np.array_equal(a.data, b.data)


def test_rendered_field_marginals_are_standard_normal(sphere):
    field = render_noise_field(sphere, small_camera(1.1), CFG, "anchor")
    assert_standard_normal(field.data, mean_tol=0.03, var_lo=0.96, var_hi=1.04)
    assert field.data.dtype == np.float32
    assert np.all(np.isfinite(field.data))


def test_anchor_and_aux_layers_are_independent(sphere):
    cam = small_camera(0.3)
    a = render_noise_field(sphere, cam, CFG, "anchor").data.ravel()
    b = render_noise_field(sphere, cam, CFG, "aux").data.ravel()
    rho = float(np.corrcoef(a, b)[0, 1])
    assert abs(rho) < 0.02


def test_screen_fixed_aux_ignores_the_viewpoint(sphere):
    cfg = NoiseConfig(seed=7, aux_mode="screen-fixed")
    a = render_noise_field(sphere, small_camera(0.0, cfg=cfg), cfg, "aux")
    b = render_noise_field(sphere, small_camera(2.0, cfg=cfg), cfg, "aux")
    assert np.array_equal(a.data, b.data)
    # while per-face aux fields do change with the viewpoint
    c = render_noise_field(sphere, small_camera(0.0), CFG, "aux")
    d = render_noise_field(sphere, small_camera(2.0), CFG, "aux")
    assert not np.array_equal(c.data, d.data)


def test_render_rejects_resolution_mismatch_and_non_spheres(sphere):
    with pytest.raises(ValueError):
        render_noise_field(sphere, camera_from_view(0, 0, 3.0, width=16, height=16), CFG, "anchor")
    blob = make_icosphere(1)
    blob.vertices = blob.vertices * 2.0
    with pytest.raises(ValueError):
        render_noise_field(blob, small_camera(0.0), CFG, "anchor")


# --- random baseline ----------------------------------------------------------


def test_random_noise_is_seed_deterministic():
    a = random_noise(NoiseConfig(seed=5))
    b = random_noise(NoiseConfig(seed=5))
    assert np.array_equal(a.data, b.data)
    c = random_noise(NoiseConfig(seed=6))
    assert not np.array_equal(a.data, c.data)


def test_random_noise_views_are_uncorrelated():
    base = NoiseConfig(seed=5)
    a = random_noise(base).data.ravel()
    b = random_noise(NoiseConfig(seed=derive_seed(5, 1))).data.ravel()
    n = min(len(a), 100_000)
    rho = float(np.corrcoef(a[:n], b[:n])[0, 1])
    assert abs(rho) < 0.02


def test_random_noise_marginals_are_standard_normal():
    field = random_noise(NoiseConfig(seed=3))
    assert_standard_normal(field.data)


# --- interpolation ------------------------------------------------------------


def make_pair(seed=0, frames=16):
    rng = np.random.default_rng(seed)
    shape = (8, 8, frames, 4)
    anchor = NoiseField(rng.standard_normal(shape, dtype=np.float32), "anchor")
    aux = NoiseField(rng.standard_normal(shape, dtype=np.float32), "aux")
    return anchor, aux


def test_zero_offset_returns_the_aux_field_bit_for_bit():
    anchor, aux = make_pair()
    out = interpolate_noise(anchor, aux, np.zeros(16))
    assert np.array_equal(out.data, aux.data)
    assert out.provenance == "interpolated"


def test_unit_offset_returns_the_anchor_field_bit_for_bit():
    anchor, aux = make_pair()
    out = interpolate_noise(anchor, aux, np.ones(16))
    assert np.array_equal(out.data, anchor.data)


def test_half_offset_preserves_unit_variance():
    # sqrt(.5)^2 + sqrt(.5)^2 = 1, so per-frame variance stays ~1
    cfg = NoiseConfig(seed=9, height=32, width=32)
    sphere = make_icosphere(cfg.sphere_subdivisions)
    cam = small_camera(0.9, cfg=cfg)
    anchor = render_noise_field(sphere, cam, cfg, "anchor")
    aux = render_noise_field(sphere, cam, cfg, "aux")
    out = interpolate_noise(anchor, aux, np.full(16, 0.5))
    for i in range(16):
        var = float(np.var(out.data[:, :, i, :]))
        assert 0.95 <= var <= 1.05


def test_interpolation_is_continuous_in_the_offset():
    anchor, aux = make_pair()
    base = interpolate_noise(anchor, aux, np.zeros(16))
    moved = interpolate_noise(anchor, aux, np.full(16, 1e-6))
    assert float(np.max(np.abs(moved.data - base.data))) < 1e-2


def test_interpolation_rejects_bad_offsets_and_shapes():
    anchor, aux = make_pair()
    with pytest.raises(ValueError):
        interpolate_noise(anchor, aux, np.full(16, 1.5))
    with pytest.raises(ValueError):
        interpolate_noise(anchor, aux, -np.ones(16))
    short = NoiseField(aux.data[:, :, :8, :], "aux")
    with pytest.raises(ValueError):
        interpolate_noise(anchor, short, np.zeros(16))


def test_interpolation_accepts_time_vectors():
    anchor, aux = make_pair()
    tv = TimeVector.from_times(np.arange(16) / 16)
    out = interpolate_noise(anchor, aux, tv)
    assert np.array_equal(out.data, aux.data)  # anchor-grid times have tau=0


def test_swapped_roles_land_on_the_anchor_layer_at_anchor_times():
    anchor, aux = make_pair()
    tv = TimeVector.from_times(np.arange(16) / 16)
    out = interpolate_noise(anchor, aux, swap_layer_roles(tv))
    assert np.array_equal(out.data, anchor.data)


# --- misc ---------------------------------------------------------------------


def test_latent_camera_keeps_the_viewpoint():
    cam = camera_from_view(0.4, 0.1, 3.0, width=64, height=64)
    lat = latent_camera(cam, CFG)
    assert (lat.width, lat.height) == (32, 32)
    assert lat.azimuth == cam.azimuth and lat.elevation == cam.elevation


def test_noise_png_mapping_clips_to_byte_range():
    frame = np.array([[[-5.0, 0.0, 5.0, 1.0]]], dtype=np.float32)
    u8 = noise_frame_to_u8(frame)
    assert u8.shape == (1, 1, 3)
    assert u8[0, 0, 0] == 0 and u8[0, 0, 2] == 255 and u8[0, 0, 1] == 128
