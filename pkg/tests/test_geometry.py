import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rlreg.geometry import (IDENTITY, N_ACTIONS, Action, SimilarityTransform, actions_to_reach,
                            apply_action, apply_point, apply_points, compose, from_matrix,
                            invert, lattice_mirror, to_matrix, warp_image)

finite = dict(allow_nan=False, allow_infinity=False)
transforms = st.builds(
    SimilarityTransform,
    st.floats(-50, 50, **finite), st.floats(-50, 50, **finite),
    st.floats(0.3, 3.0, **finite), st.floats(-179.9, 180, **finite),
)
lattice = st.builds(
    lambda tx, ty, ds, a: SimilarityTransform(tx, ty, round(1 + 0.05 * ds, 10), a),
    st.integers(-25, 25), st.integers(-25, 25), st.integers(-5, 5), st.integers(-45, 45),
)


def close(a: SimilarityTransform, b: SimilarityTransform, tol=1e-6) -> bool:
    da = (a.angle - b.angle + 180) % 360 - 180
    return (abs(a.tx - b.tx) < tol and abs(a.ty - b.ty) < tol
            and abs(a.scale - b.scale) < tol and abs(da) < tol)


# ---------------------------------------------------------------- to_matrix


def test_to_matrix_identity():
    np.testing.assert_array_equal(to_matrix(IDENTITY), [[1, 0, 0], [0, 1, 0]])


def test_to_matrix_quarter_turn():
    np.testing.assert_allclose(to_matrix(SimilarityTransform(angle=90)),
                               [[0, -1, 0], [1, 0, 0]], atol=1e-15)


def test_to_matrix_substitution():
    np.testing.assert_allclose(to_matrix(SimilarityTransform(3, 4, 2, 90)),
                               [[0, -2, 3], [2, 0, 4]], atol=1e-15)


@given(transforms)
def test_matrix_round_trip(t):
    assert close(from_matrix(to_matrix(t)), t)


def test_angle_normalised_into_half_open_interval():
    assert SimilarityTransform(angle=-180).angle == 180
    assert SimilarityTransform(angle=540).angle == 180
    assert SimilarityTransform(angle=-190).angle == 170


@pytest.mark.parametrize("bad", [0.0, -1.0, float("nan")])
def test_scale_must_be_positive(bad):
    with pytest.raises(ValueError):
        SimilarityTransform(scale=bad)


# ---------------------------------------------------------------- points


def test_apply_point_examples():
    assert apply_point(IDENTITY, (5, 7)) == (5, 7)
    assert apply_point(SimilarityTransform(tx=1), (0, 0)) == (1, 0)
    x, y = apply_point(SimilarityTransform(scale=2, angle=90), (1, 0))
    assert x == pytest.approx(0, abs=1e-12) and y == pytest.approx(2)


@given(transforms, st.floats(-20, 20), st.floats(-20, 20))
def test_apply_point_matches_matrix(t, x, y):
    m = to_matrix(t)
    np.testing.assert_allclose(apply_point(t, (x, y)), m @ [x, y, 1], atol=1e-9)


@given(transforms)
def test_pivoted_application_is_conjugation(t):
    c = np.array([12.5, 7.0])
    pts = np.random.default_rng(0).uniform(-10, 30, size=(5, 2))
    shift = SimilarityTransform(tx=c[0], ty=c[1])
    conj = compose(shift, compose(t, invert(shift)))
    np.testing.assert_allclose(apply_points(t, pts, c), apply_points(conj, pts), atol=1e-9)


# ---------------------------------------------------------------- actions


def test_apply_action_examples():
    assert apply_action(IDENTITY, Action.TX_PLUS) == SimilarityTransform(1, 0, 1, 0)
    assert apply_action(IDENTITY, Action.SCALE_PLUS).scale == 1.05
    assert apply_action(SimilarityTransform(scale=0.3), Action.SCALE_MINUS).scale == 0.3
    assert apply_action(SimilarityTransform(scale=3.0), Action.SCALE_PLUS).scale == 3.0


def test_action_space_has_eight_unit_moves():
    assert N_ACTIONS == 8
    for a in Action:
        t = apply_action(IDENTITY, a)
        changed = [n for n, v, v0 in zip("xyas", (t.tx, t.ty, t.angle, t.scale), (0, 0, 0, 1)) if v != v0]
        assert len(changed) == 1


def test_angle_action_wraps():
    t = apply_action(SimilarityTransform(angle=180), Action.ANGLE_PLUS)
    assert t.angle == -179


@given(lattice, st.sampled_from(list(Action)))
def test_opposite_action_undoes(t, a):
    back = apply_action(apply_action(t, a), a.opposite)
    assert back == t


@given(lattice)
def test_actions_to_reach_lands_exactly(target):
    t = IDENTITY
    seq = actions_to_reach(target)
    for a in seq:
        t = apply_action(t, a)
    assert t == target
    assert len(seq) == abs(target.tx) + abs(target.ty) + abs(target.angle) + round(abs(target.scale - 1) / 0.05)


def test_actions_to_reach_rejects_off_lattice():
    with pytest.raises(ValueError):
        actions_to_reach(SimilarityTransform(tx=0.5))


@given(lattice)
def test_lattice_mirror_reached_by_opposites(t):
    seq = actions_to_reach(t)
    m = IDENTITY
    for a in seq:
        m = apply_action(m, a.opposite)
    assert m == lattice_mirror(t)


# ---------------------------------------------------------------- group laws


def test_invert_examples():
    assert close(invert(IDENTITY), IDENTITY)
    assert close(invert(SimilarityTransform(tx=3)), SimilarityTransform(tx=-3))
    assert close(invert(SimilarityTransform(scale=2, angle=90)), SimilarityTransform(0, 0, 0.5, -90))


def test_compose_examples():
    t = SimilarityTransform(1, 2, 1.5, 20)
    assert close(compose(t, IDENTITY), t)
    assert close(compose(SimilarityTransform(1, 2), SimilarityTransform(3, 4)), SimilarityTransform(4, 6))
    assert close(compose(SimilarityTransform(scale=2), SimilarityTransform(scale=0.5, angle=30)),
                 SimilarityTransform(angle=30))


@given(transforms)
def test_invert_is_two_sided(t):
    assert close(compose(invert(t), t), IDENTITY)
    assert close(compose(t, invert(t)), IDENTITY)


@given(transforms, transforms, transforms)
def test_compose_associative(a, b, c):
    assert close(compose(compose(a, b), c), compose(a, compose(b, c)), tol=1e-6 * 30)


@given(transforms, transforms)
def test_compose_matches_homogeneous_product(a, b):
    ha, hb = np.eye(3), np.eye(3)
    ha[:2], hb[:2] = to_matrix(a), to_matrix(b)
    np.testing.assert_allclose(to_matrix(compose(a, b)), (ha @ hb)[:2], atol=1e-9)


# ---------------------------------------------------------------- warping


@pytest.fixture
def textured():
    rng = np.random.default_rng(4)
    return rng.random((20, 24)).astype(np.float32)


def test_warp_identity_is_exact(textured):
    np.testing.assert_array_equal(warp_image(textured, IDENTITY), textured)


def test_warp_unit_shift(textured):
    out = warp_image(textured, SimilarityTransform(tx=1))
    np.testing.assert_array_equal(out[:, 1:], textured[:, :-1])
    assert np.all(out[:, 0] == 0)


def test_warp_half_pixel_is_neighbour_mean():
    ramp = np.tile(np.arange(10, dtype=np.float64) ** 2, (6, 1))  # curved so means are informative
    out = warp_image(ramp, SimilarityTransform(tx=0.5))
    np.testing.assert_allclose(out[:, 1:], 0.5 * (ramp[:, :-1] + ramp[:, 1:]), atol=1e-12)


@pytest.mark.parametrize("tx,ty", [(2, -3), (-1, 4), (5, 0)])
def test_integer_round_trip_exact_on_interior(textured, tx, ty):
    t = SimilarityTransform(tx, ty)
    back = warp_image(warp_image(textured, t), invert(t))
    m = 6
    np.testing.assert_array_equal(back[m:-m, m:-m], textured[m:-m, m:-m])


@pytest.mark.parametrize("angle", [2.0, -3.0, 5.0])
def test_small_rotation_round_trip(angle):
    yy, xx = np.mgrid[0:48, 0:48]
    img = (0.5 + 0.25 * np.sin(xx / 5.0) * np.cos(yy / 6.0)).astype(np.float64)
    t = SimilarityTransform(angle=angle)
    back = warp_image(warp_image(img, t), invert(t))
    assert np.abs(back - img)[8:-8, 8:-8].max() <= 2e-2


def test_warp_resamples_to_other_grid():
    yy, xx = np.mgrid[0:32, 0:32]
    img = (xx + yy).astype(np.float64)
    out = warp_image(img, IDENTITY, out_shape=(63, 63))
    assert out.shape == (63, 63)
    # corner-aligned grid: every other output pixel hits a source pixel exactly
    np.testing.assert_allclose(out[::2, ::2], img, atol=1e-9)
