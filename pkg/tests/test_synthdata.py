import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import ndimage

from rlreg.geometry import IDENTITY, SimilarityTransform, actions_to_reach, apply_action, compose, warp_image
from rlreg.landmarks import detect_landmarks
from rlreg.synthdata import (DESK_E1, DESK_E2, FULL_E1, FULL_E2, CorruptFileError, ImagePair,
                             MissingFileError, PerturbationRange, VersionMismatchError,
                             generate_base_image, generate_dataset, load_dataset,
                             make_episode_pair, modality_remap, perturbation_warp, recovery_transform,
                             sample_perturbation, save_dataset)


def test_base_image_deterministic():
    np.testing.assert_array_equal(generate_base_image(1, 64), generate_base_image(1, 64))


def test_base_images_differ_between_seeds():
    a, b = generate_base_image(1, 64), generate_base_image(2, 64)
    assert np.mean(np.abs(a - b) > 1e-6) >= 0.10


@pytest.mark.parametrize("seed", range(8))
def test_base_image_statistics(seed):
    img = generate_base_image(seed, 48)
    assert img.min() >= 0 and img.max() <= 1
    assert img.std() >= 0.05


def test_base_image_minimum_size():
    with pytest.raises(ValueError):
        generate_base_image(0, 8)


def test_remap_constant_image_stays_flat():
    out = modality_remap(np.full((32, 32), 0.5), 3)
    assert abs(out.mean() - 0.5) > 1e-3  # value changed
    assert out.std() <= 0.02


def test_remap_deterministic():
    img = generate_base_image(4, 48)
    np.testing.assert_array_equal(modality_remap(img, 9), modality_remap(img, 9))


def _gradient_magnitude(img):
    img = np.asarray(img, dtype=np.float64)
    return np.hypot(ndimage.sobel(img, 0), ndimage.sobel(img, 1))


@pytest.mark.parametrize("seed", range(6))
def test_remap_keeps_edges(seed):
    img = generate_base_image(seed, 64)
    g0 = _gradient_magnitude(img).ravel()
    g1 = _gradient_magnitude(modality_remap(img, seed)).ravel()
    assert np.corrcoef(g0, g1)[0, 1] >= 0.5


def test_remap_keeps_landmarks():
    rates = []
    for seed in range(20):
        img = generate_base_image(seed, 64)
        a = detect_landmarks(img, 16).points
        b = detect_landmarks(modality_remap(img, seed), 16).points
        d = np.linalg.norm(a[:, None] - b[None], axis=-1).min(axis=1)
        rates.append(np.mean(d <= 2.0))
    assert np.mean(rates) >= 0.70


def test_pair_shapes_must_match():
    with pytest.raises(ValueError):
        ImagePair(np.zeros((16, 16)), np.zeros((16, 17)), "bad")


def test_dataset_ids_and_determinism():
    a, b = generate_dataset(3, 32, seed=5), generate_dataset(3, 32, seed=5)
    assert [p.id for p in a] == ["pair000", "pair001", "pair002"]
    for p, q in zip(a, b):
        np.testing.assert_array_equal(p.fixed, q.fixed)
        np.testing.assert_array_equal(p.moving_aligned, q.moving_aligned)


# ---------------------------------------------------------------- perturbations


def test_full_scale_ranges():
    assert FULL_E1.grid("tx")[[0, -1]].tolist() == [-25, 25]
    assert FULL_E1.grid("angle")[[0, -1]].tolist() == [-30, 30]
    np.testing.assert_allclose(FULL_E1.grid("scale"), np.arange(0.75, 1.2501, 0.05))
    assert FULL_E2.grid("angle")[[0, -1]].tolist() == [-45, 45]
    assert DESK_E1.grid("tx")[[0, -1]].tolist() == [-10, 10]
    assert DESK_E2.grid("angle")[[0, -1]].tolist() == [-15, 15]


def test_samples_lie_on_grid(rng):
    for _ in range(300):
        p = sample_perturbation(rng, FULL_E1)
        assert p.tx == int(p.tx) and -25 <= p.tx <= 25
        assert p.angle == int(p.angle) and -30 <= p.angle <= 30
        assert round((p.scale - 0.75) / 0.05, 6) % 1 == 0 and 0.75 <= p.scale <= 1.25


def test_degenerate_range_gives_identity(rng):
    r = PerturbationRange(tx=(0, 0, 1), ty=(0, 0, 1), angle=(0, 0, 1), scale=(1, 1, 0.05))
    assert sample_perturbation(rng, r) == IDENTITY


def test_invalid_range():
    with pytest.raises(ValueError):
        PerturbationRange(tx=(3, -3, 1))


@settings(max_examples=60)
@given(st.integers(0, 2**31))
def test_recovery_exactly_reachable(seed):
    p = sample_perturbation(np.random.default_rng(seed), FULL_E2)
    g = recovery_transform(p)
    seq = actions_to_reach(g)
    assert len(seq) == abs(p.tx) + abs(p.ty) + abs(p.angle) + round(abs(p.scale - 1) / 0.05)
    t = IDENTITY
    for a in seq:
        t = apply_action(t, a)
    assert t == g
    # composing the recovery with the warp lands on identity
    r = compose(g, perturbation_warp(p))
    assert max(abs(r.tx), abs(r.ty), abs(r.scale - 1), abs(r.angle)) < 1e-9


@pytest.mark.parametrize("p", [SimilarityTransform(4, -2), SimilarityTransform(angle=7)])
def test_warp_equals_perturbation_for_pure_moves(p):
    w = perturbation_warp(p)
    assert max(abs(w.tx - p.tx), abs(w.ty - p.ty), abs(w.scale - 1), abs(w.angle - p.angle)) < 1e-9


def test_episode_pair_identity(pair32):
    fixed, moving = make_episode_pair(pair32, IDENTITY)
    np.testing.assert_array_equal(fixed, pair32.fixed)
    np.testing.assert_array_equal(moving, pair32.moving_aligned)


def test_episode_pair_shift(pair32):
    _, moving = make_episode_pair(pair32, SimilarityTransform(tx=5))
    np.testing.assert_allclose(moving[:, 5:], pair32.moving_aligned[:, :-5], atol=1e-6)


@pytest.mark.parametrize("p", [SimilarityTransform(3, -2, 1, 4), SimilarityTransform(-1, 2, 1.05, -3)])
def test_episode_pair_round_trip(pair48, p):
    _, moving = make_episode_pair(pair48, p)
    back = warp_image(moving, recovery_transform(p))
    err = np.abs(back - pair48.moving_aligned)[10:-10, 10:-10]
    assert err.mean() < 0.03


# ---------------------------------------------------------------- persistence


def test_save_load_round_trip(tmp_path):
    pairs = generate_dataset(3, 32, seed=2)
    path = save_dataset(pairs, tmp_path / "ds" / "manifest.json", seed=2)
    manifest, loaded = load_dataset(path)
    assert manifest["format_version"] == 1 and manifest["seed"] == 2
    assert [r["id"] for r in manifest["pairs"]] == [p.id for p in pairs]
    for p, q in zip(pairs, loaded):
        np.testing.assert_array_equal(p.fixed, q.fixed)
        np.testing.assert_array_equal(p.moving_aligned, q.moving_aligned)
    raw = (tmp_path / "ds" / "pair000_fixed.pgm").read_bytes()
    assert raw.startswith(b"P5")


def test_saved_files_are_bit_identical(tmp_path):
    for d in ("a", "b"):
        save_dataset(generate_dataset(2, 32, seed=1), tmp_path / d / "manifest.json", seed=1)
    for name in ("manifest.json", "pair001_moving.pgm"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_load_missing(tmp_path):
    with pytest.raises(MissingFileError):
        load_dataset(tmp_path / "nope.json")


def test_load_missing_image(tmp_path):
    path = save_dataset(generate_dataset(1, 32), tmp_path / "manifest.json")
    (tmp_path / "pair000_moving.pgm").unlink()
    with pytest.raises(MissingFileError, match="pair000_moving"):
        load_dataset(path)


def test_load_truncated_image(tmp_path):
    path = save_dataset(generate_dataset(2, 32), tmp_path / "manifest.json")
    f = tmp_path / "pair001_fixed.pgm"
    f.write_bytes(f.read_bytes()[:40])
    with pytest.raises(CorruptFileError, match="pair001_fixed"):
        load_dataset(path)


def test_load_corrupt_header(tmp_path):
    path = save_dataset(generate_dataset(1, 32), tmp_path / "manifest.json")
    (tmp_path / "pair000_fixed.pgm").write_bytes(b"garbage" * 50)
    with pytest.raises(CorruptFileError):
        load_dataset(path)


def test_load_version_mismatch(tmp_path):
    path = save_dataset(generate_dataset(1, 32), tmp_path / "manifest.json")
    m = json.loads(path.read_text())
    m["format_version"] = 99
    path.write_text(json.dumps(m))
    with pytest.raises(VersionMismatchError):
        load_dataset(path)
