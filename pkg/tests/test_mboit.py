import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oitlab.mboit import (ALPHA_MAX, UNIFORM_MOMENTS, MomentPixel, absorb, absorbance_bounds,
                          accumulate_moments, mboit_render, reconstruct_transmittance, warp_depth)
from oitlab.rasterizer import Fragment, FragmentBuffer, rasterize

NEAR, FAR = 1.0, 10.0


def moments_of(depths_warped, absorbances):
    d = np.asarray(depths_warped, float)
    a = np.asarray(absorbances, float)
    return MomentPixel(a.sum(), np.array([(a * d ** i).sum() for i in range(1, 5)]))


def test_absorb():
    assert absorb(0.0) == 0.0
    assert absorb(0.5) == pytest.approx(np.log(2.0), abs=1e-12)
    a = np.linspace(0, 0.999, 100)
    assert np.all(np.diff(absorb(a)) > 0)
    assert absorb(1.0) == pytest.approx(-np.log(1 - ALPHA_MAX))
    assert np.isfinite(absorb(1.0))


def test_warp_depth():
    assert warp_depth(NEAR, NEAR, FAR) == -1.0
    assert warp_depth(FAR, NEAR, FAR) == pytest.approx(1.0)
    assert warp_depth(np.sqrt(NEAR * FAR), NEAR, FAR) == pytest.approx(0.0, abs=1e-15)
    z = np.linspace(NEAR, FAR, 50)
    assert np.all(np.diff(warp_depth(z, NEAR, FAR)) > 0)
    counter = {}
    d = warp_depth(np.array([0.5, 2.0, 20.0]), NEAR, FAR, counter)
    assert counter["clamped"] == 2 and d[0] == -1.0 and d[2] == 1.0


def test_accumulate_single_fragment_at_center():
    z0 = np.sqrt(NEAR * FAR)
    px = accumulate_moments(MomentPixel(), Fragment(z0, (1, 1, 1), 0.75, 0), NEAR, FAR)
    assert px.b0 == pytest.approx(np.log(4.0))
    np.testing.assert_allclose(px.b, 0.0, atol=1e-15)


def test_accumulate_point_mass_moments():
    z = 3.7
    d = warp_depth(z, NEAR, FAR)
    px = accumulate_moments(MomentPixel(), Fragment(z, (1, 1, 1), 0.3, 0), NEAR, FAR)
    np.testing.assert_allclose(px.normalized(), [d, d ** 2, d ** 3, d ** 4], rtol=1e-14)


def test_accumulate_permutation_invariant():
    rng = np.random.default_rng(0)
    frags = [Fragment(z, (1, 1, 1), a, i) for i, (z, a) in
             enumerate(zip(rng.uniform(NEAR, FAR, 30), rng.uniform(0, 0.9, 30)))]
    ref = MomentPixel()
    for f in frags:
        ref = accumulate_moments(ref, f, NEAR, FAR)
    for _ in range(10):
        px = MomentPixel()
        for i in rng.permutation(len(frags)):
            px = accumulate_moments(px, frags[i], NEAR, FAR)
        assert abs(px.b0 - ref.b0) <= 1e-6 * ref.b0
        np.testing.assert_allclose(px.b, ref.b, rtol=1e-6, atol=1e-12)


def test_empty_pixel_is_transparent():
    for z in (1.0, 4.0, 10.0):
        assert reconstruct_transmittance(MomentPixel(), z, near=NEAR, far=FAR) == 1.0


def test_single_fragment_reconstruction():
    z0 = 3.0
    px = accumulate_moments(MomentPixel(), Fragment(z0, (1, 1, 1), 0.75, 0), NEAR, FAR)
    # in front: nothing absorbs; well behind (warped offset 0.05): the whole layer absorbs
    assert reconstruct_transmittance(px, 1.5, near=NEAR, far=FAR) == pytest.approx(1.0, abs=0.01)
    d_behind = warp_depth(z0, NEAR, FAR) + 0.05
    z_behind = np.exp((d_behind + 1) / 2 * np.log(FAR / NEAR)) * NEAR
    assert reconstruct_transmittance(px, z_behind, near=NEAR, far=FAR) == pytest.approx(0.25, abs=0.01)


@settings(max_examples=300, deadline=None)
@given(st.lists(st.tuples(st.floats(-0.98, 0.98), st.floats(0.01, 3.0)), min_size=1, max_size=3),
       st.floats(-1.0, 1.0))
def test_bound_containment(points, query):
    d = [p[0] for p in points]
    a = [p[1] for p in points]
    px = moments_of(d, a)
    lower, upper, _ = absorbance_bounds(px, query, bias=0.0)
    below = sum(ai for di, ai in zip(d, a) if di < query)
    at = sum(ai for di, ai in zip(d, a) if di == query)
    assert lower - 1e-6 <= below <= upper + 1e-6
    assert lower - 1e-6 <= below + at <= upper + 1e-6


def _check_containment(d, a, query):
    lower, upper, _ = absorbance_bounds(moments_of(d, a), query, bias=0.0)
    below = sum(ai for di, ai in zip(d, a) if di < query)
    at = sum(ai for di, ai in zip(d, a) if di == query)
    assert lower - 1e-6 <= below <= upper + 1e-6
    assert lower - 1e-6 <= below + at <= upper + 1e-6


@settings(max_examples=1000, deadline=None)
@given(st.floats(-0.98, 0.98),
       st.lists(st.tuples(st.one_of(st.just(0.0), st.floats(1e-12, 1e-5), st.floats(1e-5, 0.5)),
                          st.booleans(), st.floats(0.01, 3.0)), min_size=1, max_size=3),
       st.integers(0, 2))
def test_bound_containment_near_coincident(center, offsets, which):
    # supports closer together than float64 moments can resolve, queried on a support point
    d = [min(max(center + (g if up else -g), -1.0), 1.0) for g, up, _ in offsets]
    a = [o[2] for o in offsets]
    _check_containment(d, a, d[min(which, len(d) - 1)])


@pytest.mark.parametrize("d,a,query", [
    ([0.0, 1.192092896e-07], [1.0, 1.0], 0.0),
    ([0.625, 0.62494], [1.0, 1.0], 0.625),
    ([0.5, 0.5000000121557794], [1.0, 1.0], 0.5),
    ([0.0, -9.260569347512506e-06, -0.5], [1.0, 1.0, 1.0], 0.0),
    ([0.875, 0.8750000596046448, 0.375], [1.0, 1.0, 1.25], 0.875),
])
def test_bound_containment_regressions(d, a, query):
    _check_containment(d, a, query)


def test_bias_blends_toward_uniform():
    px = moments_of([0.3], [1.0])
    lo0, hi0, singular = absorbance_bounds(px, 0.5, bias=0.0)
    assert singular and lo0 == pytest.approx(1.0)
    lo, hi, singular = absorbance_bounds(px, 0.5, bias=0.5)
    assert not singular
    assert lo < 1.0
    np.testing.assert_allclose(UNIFORM_MOMENTS, [0, 1 / 3, 0, 1 / 5])


def test_reconstruction_monotone_in_depth():
    rng = np.random.default_rng(5)
    for _ in range(20):
        frags = [Fragment(z, (1, 1, 1), a, i) for i, (z, a) in
                 enumerate(zip(rng.uniform(NEAR, FAR, 6), rng.uniform(0.05, 0.9, 6)))]
        px = MomentPixel()
        for f in frags:
            px = accumulate_moments(px, f, NEAR, FAR)
        zs = np.geomspace(NEAR, FAR, 200)
        T = np.array([reconstruct_transmittance(px, z, near=NEAR, far=FAR) for z in zs])
        assert np.all(np.diff(T) <= 1e-9)


def test_beta_validation():
    with pytest.raises(ValueError):
        reconstruct_transmittance(MomentPixel(), 2.0, beta=1.5)
    fb = FragmentBuffer.from_streams(1, 1, [[]])
    with pytest.raises(ValueError):
        mboit_render(fb, (0, 0, 0), beta=-0.1)


def test_render_empty_and_single_fragment():
    c = (0.9, 0.2, 0.4)
    fb = FragmentBuffer.from_streams(2, 1, [[], [Fragment(4.0, c, 0.6, 0)]])
    img = mboit_render(fb, (0.1, 0.5, 0.9), near=NEAR, far=FAR)
    np.testing.assert_allclose(img.rgb[0, 0], [0.1, 0.5, 0.9])
    np.testing.assert_allclose(img.rgb[0, 1], 0.6 * np.array(c) + 0.4 * np.array([0.1, 0.5, 0.9]),
                               atol=1e-3)


def test_render_per_pixel_consistency(helix_small):
    _, mesh, cam, tf = helix_small
    fb = rasterize(mesh, cam, tf)
    img = mboit_render(fb, (1, 1, 1), near=cam.near, far=cam.far)
    b0 = img.counters["b0"]
    lens = fb.lengths().reshape(cam.height, cam.width)
    prod = np.ones(fb.n_pixels)
    np.multiply.at(prod, np.repeat(np.arange(fb.n_pixels), fb.lengths()), 1 - fb.alpha)
    np.testing.assert_allclose(np.exp(-b0).ravel(), prod, atol=1e-12)
    assert np.all(img.rgb[lens == 0] == 1.0)
    assert img.rgb.min() >= -1e-12 and img.rgb.max() <= 1 + 1e-12


def test_render_permutation_invariant(helix_small):
    _, mesh, cam, tf = helix_small
    base = mboit_render(rasterize(mesh, cam, tf), (1, 1, 1), near=cam.near, far=cam.far)
    rng = np.random.default_rng(1)
    for _ in range(3):
        perm = mesh.subset(rng.permutation(mesh.n_triangles))
        img = mboit_render(rasterize(perm, cam, tf), (1, 1, 1), near=cam.near, far=cam.far)
        assert np.abs(img.rgba - base.rgba).max() <= 1e-5
