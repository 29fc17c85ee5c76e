import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from idcnn_switch.dataset import (
    AUGMENTATIONS,
    PatchSet,
    augment,
    bicubic_resize,
    build_training_set,
    extract_patches,
    iter_patch_sets,
    load_patchset,
    patches_from_image,
    save_patchset,
    scaled_size,
)
from idcnn_switch.errors import ContractError, FormatError
from idcnn_switch.images import (
    decode_pgm,
    decode_ppm,
    encode_ppm,
    load_map,
    load_ppm,
    load_probability_map,
    save_map,
    save_ppm,
    save_probability_map,
)
from idcnn_switch.noise import NoiseSpec

images = hnp.arrays(np.uint8, st.tuples(st.integers(1, 9), st.integers(1, 9), st.just(3)))


# -- netpbm ------------------------------------------------------------------


@settings(max_examples=40, deadline=None)
@given(images)
def test_ppm_round_trip(img):
    np.testing.assert_array_equal(decode_ppm(encode_ppm(img)), img)


def test_ppm_file_round_trip(tmp_path):
    img = np.random.default_rng(0).integers(0, 256, (5, 7, 3), dtype=np.uint8)
    save_ppm(img, tmp_path / "a.ppm")
    np.testing.assert_array_equal(load_ppm(tmp_path / "a.ppm"), img)


def test_ppm_header_layout():
    data = encode_ppm(np.arange(6, dtype=np.uint8).reshape(1, 2, 3))
    assert data.split()[:4] == [b"P6", b"2", b"1", b"255"]
    assert data.endswith(bytes(range(6)))
    assert len(data) == len(b"P6\n2 1\n255\n") + 6


def test_ppm_header_comments_accepted():
    data = b"P6\n# made by hand\n2 1\n# another\n255\n" + bytes(6)
    assert decode_ppm(data).shape == (1, 2, 3)


@pytest.mark.parametrize(
    "data",
    [
        b"P6\n2 1\n255\n" + bytes(5),           # truncated raster
        b"P6\n2 1\n",                           # truncated header
        b"P6\n2 1\n65535\n" + bytes(12),        # 16-bit color not supported
        b"P3\n2 1\n255\n" + bytes(6),           # ASCII variant
        b"P6\n2 x 255\n" + bytes(6),            # junk token
    ],
)
def test_ppm_malformed(data):
    with pytest.raises(FormatError):
        decode_ppm(data)


def test_maps_round_trip(tmp_path):
    m = np.random.default_rng(1).random((6, 9)) < 0.4
    save_map(m, tmp_path / "m.pgm")
    raw = decode_pgm((tmp_path / "m.pgm").read_bytes())
    assert set(np.unique(raw)) <= {0, 255}
    np.testing.assert_array_equal(load_map(tmp_path / "m.pgm"), m)


def test_probability_map_is_16_bit(tmp_path):
    p = np.array([[0.0, 0.5, 1.0], [0.25, 1e-6, 0.999999]])
    save_probability_map(p, tmp_path / "p.pgm")
    data = (tmp_path / "p.pgm").read_bytes()
    assert data.startswith(b"P5\n3 2\n65535\n")
    raw = decode_pgm(data)
    np.testing.assert_array_equal(raw, np.floor(p * 65535 + 0.5))
    np.testing.assert_allclose(load_probability_map(tmp_path / "p.pgm"), p, atol=1 / 65535)


# -- resize ------------------------------------------------------------------


def resize_loops(img, scale):
    """Catmull-Rom resampling written per output pixel."""

    def k(t):
        t = abs(t)
        if t <= 1:
            return 1.5 * t**3 - 2.5 * t**2 + 1
        if t < 2:
            return -0.5 * t**3 + 2.5 * t**2 - 4 * t + 2
        return 0.0

    h, w, _ = img.shape
    ho, wo = math.floor(h * scale + 0.5), math.floor(w * scale + 0.5)
    out = np.zeros((ho, wo, 3), np.uint8)
    for i in range(ho):
        sy = (i + 0.5) * h / ho - 0.5
        for j in range(wo):
            sx = (j + 0.5) * w / wo - 0.5
            for c in range(3):
                acc = 0.0
                for yy in range(math.floor(sy) - 1, math.floor(sy) + 3):
                    for xx in range(math.floor(sx) - 1, math.floor(sx) + 3):
                        v = img[min(max(yy, 0), h - 1), min(max(xx, 0), w - 1), c]
                        acc += k(sy - yy) * k(sx - xx) * float(v)
                out[i, j, c] = min(255, max(0, math.floor(acc + 0.5)))
    return out


def test_resize_identity_at_scale_one():
    img = np.random.default_rng(2).integers(0, 256, (9, 11, 3), dtype=np.uint8)
    out = bicubic_resize(img, 1.0)
    np.testing.assert_array_equal(out, img)
    assert out is not img


@pytest.mark.parametrize("scale", [0.9, 0.7, 0.5, 0.33])
def test_resize_constant_image(scale):
    img = np.full((20, 17, 3), 77, np.uint8)
    out = bicubic_resize(img, scale)
    assert np.all(out == 77)


@pytest.mark.parametrize("scale", [0.9, 0.8, 0.7])
def test_resize_matches_loop_oracle(scale):
    img = np.random.default_rng(3).integers(0, 256, (13, 10, 3), dtype=np.uint8)
    np.testing.assert_array_equal(bicubic_resize(img, scale), resize_loops(img, scale))


def test_resize_dimensions_for_481_by_321():
    dims = [(scaled_size(481, s), scaled_size(321, s)) for s in (1, 0.9, 0.8, 0.7)]
    assert dims == [(481, 321), (433, 289), (385, 257), (337, 225)]
    img = np.zeros((481, 321, 3), np.uint8)
    assert bicubic_resize(img, 0.9).shape == (433, 289, 3)


@pytest.mark.parametrize("scale", [0.0, -0.5, 1.5, 0.01])
def test_resize_bad_scale(scale):
    with pytest.raises(ContractError):
        bicubic_resize(np.zeros((20, 20, 3), np.uint8), scale)


# -- augmentation ------------------------------------------------------------


def test_augment_order_and_exactness():
    img = np.random.default_rng(4).integers(0, 256, (5, 8, 3), dtype=np.uint8)
    variants = augment(img)
    assert len(variants) == len(AUGMENTATIONS) == 4
    np.testing.assert_array_equal(variants[0], np.rot90(img))
    np.testing.assert_array_equal(variants[3], img[::-1])
    assert variants[0].shape == (8, 5, 3) and variants[2].shape == (8, 5, 3)
    assert variants[1].shape == (5, 8, 3)


def test_augmentation_group_identities():
    img = np.random.default_rng(5).integers(0, 256, (5, 8, 3), dtype=np.uint8)
    r = img
    for _ in range(4):
        r = augment(r)[0]
    np.testing.assert_array_equal(r, img)
    np.testing.assert_array_equal(augment(augment(img)[3])[3], img)


# -- patches -----------------------------------------------------------------


def test_patch_count_for_481_by_321():
    img = np.zeros((481, 321, 3), np.uint8)
    assert len(extract_patches(img, np.zeros((481, 321), bool), 41)) == 77


def test_single_patch_when_p_equals_side():
    img = np.zeros((41, 41, 3), np.uint8)
    assert len(extract_patches(img, np.zeros((41, 41), bool), 41)) == 1


def test_patch_too_large():
    with pytest.raises(ContractError):
        extract_patches(np.zeros((30, 50, 3), np.uint8), np.zeros((30, 50), bool), 41)


@settings(max_examples=30, deadline=None)
@given(st.integers(4, 30), st.integers(4, 30), st.integers(1, 4), st.integers(0, 1000))
def test_patches_reassemble_to_cropped_source(h, w, p, seed):
    rng = np.random.default_rng(seed)
    img = rng.integers(0, 256, (h, w, 3), dtype=np.uint8)
    m = rng.random((h, w)) < 0.5
    ps = extract_patches(img, m, p)
    gh, gw = h // p, w // p
    assert len(ps) == gh * gw
    for k, (_, _, _, r, c) in enumerate(ps.provenance):
        np.testing.assert_array_equal(ps.noisy[k], img[r:r + p, c:c + p])
        np.testing.assert_array_equal(ps.maps[k], m[r:r + p, c:c + p])
    rebuilt = ps.noisy.reshape(gh, gw, p, p, 3).transpose(0, 2, 1, 3, 4).reshape(gh * p, gw * p, 3)
    np.testing.assert_array_equal(rebuilt, img[: gh * p, : gw * p])


def test_four_scale_patch_count_per_image():
    img = np.random.default_rng(6).integers(0, 256, (481, 321, 3), dtype=np.uint8)
    ps = patches_from_image(img, 41, NoiseSpec(rho=0.3), 0)
    assert len(ps) == 77 + 70 + 54 + 40 == 241


def test_augmentation_multiplies_variants():
    img = np.random.default_rng(7).integers(0, 256, (82, 82, 3), dtype=np.uint8)
    ps = patches_from_image(img, 41, NoiseSpec(rho=0.1), 0, scales=(1.0,), augmentation=True)
    assert len(ps) == 5 * 4
    assert {prov[2] for prov in ps.provenance} == {"none", *AUGMENTATIONS}


def test_each_variant_gets_its_own_noise():
    img = np.full((41, 41, 3), 128, np.uint8)
    ps = patches_from_image(img, 41, NoiseSpec(rho=0.3), 0, scales=(1.0,), augmentation=True)
    # rot180 of a constant image is the same image, but its noise must differ
    assert not np.array_equal(ps.maps[0], ps.maps[2])


def test_random_density_mode_varies_per_patch():
    img = np.full((205, 205, 3), 128, np.uint8)
    ps = patches_from_image(img, 41, NoiseSpec(rho=None), 0, scales=(1.0,))
    dens = ps.maps.reshape(len(ps), -1).mean(axis=1)
    assert len(ps) == 25
    assert dens.min() > 0.03 and dens.max() < 0.6
    assert dens.std() > 0.05


def write_images(tmp_path, shapes, seed=0):
    rng = np.random.default_rng(seed)
    d = tmp_path / "imgs"
    d.mkdir()
    for i, (h, w) in enumerate(shapes):
        save_ppm(rng.integers(0, 256, (h, w, 3), dtype=np.uint8), d / f"img{i:02d}.ppm")
    return d


def test_build_training_set_clean_example(tmp_path):
    d = write_images(tmp_path, [(82, 82)])
    ps = build_training_set(d, 41, NoiseSpec(rho=0.0), seed=0, scales=(1.0,), augmentation=False)
    assert len(ps) == 4 and not ps.maps.any()
    assert ps.provenance[0][0] == "img00.ppm"


def test_build_training_set_deterministic(tmp_path):
    d = write_images(tmp_path, [(60, 70), (50, 90)])
    a = build_training_set(d, 21, NoiseSpec(rho=0.3), seed=4)
    b = build_training_set(d, 21, NoiseSpec(rho=0.3), seed=4)
    c = build_training_set(d, 21, NoiseSpec(rho=0.3), seed=5)
    np.testing.assert_array_equal(a.noisy, b.noisy)
    np.testing.assert_array_equal(a.maps, b.maps)
    assert not np.array_equal(a.maps, c.maps)


def test_build_training_set_empty_dir(tmp_path):
    (tmp_path / "empty").mkdir()
    with pytest.raises(ContractError):
        build_training_set(tmp_path / "empty", 41, NoiseSpec())


def test_iter_patch_sets_is_lazy():
    def gen():
        yield np.zeros((41, 41, 3), np.uint8)
        raise AssertionError("consumed too early")

    it = iter_patch_sets(gen(), 41, NoiseSpec(rho=0.0), 0, scales=(1.0,))
    assert len(next(it)) == 1


# -- patch cache -------------------------------------------------------------


def test_patch_cache_round_trip(tmp_path):
    rng = np.random.default_rng(8)
    ps = PatchSet(rng.integers(0, 256, (3, 21, 21, 3), dtype=np.uint8),
                  (rng.random((3, 21, 21)) < 0.3).astype(np.uint8), 21)
    save_patchset(ps, tmp_path / "c.bin")
    data = (tmp_path / "c.bin").read_bytes()
    assert len(data) == 16 + 3 * 21 * 21 * 4
    back = load_patchset(tmp_path / "c.bin")
    np.testing.assert_array_equal(back.noisy, ps.noisy)
    np.testing.assert_array_equal(back.maps, ps.maps)
    (tmp_path / "c.bin").write_bytes(data[:-1])
    with pytest.raises(FormatError):
        load_patchset(tmp_path / "c.bin")


def test_patchset_validation():
    with pytest.raises(ContractError):
        PatchSet.from_pairs([])
    with pytest.raises(ContractError):
        PatchSet.from_pairs([(np.zeros((21, 21, 3), np.uint8), np.zeros((21, 20), np.uint8))])
    with pytest.raises(ContractError):
        PatchSet.from_pairs([(np.zeros((21, 21, 3), np.uint8), np.full((21, 21), 2, np.uint8))])
