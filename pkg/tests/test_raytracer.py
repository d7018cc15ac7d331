import numpy as np
import pytest
from scipy import ndimage

from oitlab.camera import Ray
from oitlab.exact import composite_front_to_back, render_fragment_lists
from oitlab.geometry import LineSet, TransferFunction, TriMesh, generate_tube_mesh
from oitlab.rasterizer import Fragment, depth_complexity, rasterize, zbuffer_render
from oitlab.raytracer import (TERMINATION_T, all_hits, build_bvh, build_tube_bvh, closest_hit,
                              default_epsilon, intersect_ray_tube, raytrace_image, trace_blend)
from conftest import axis_camera, quad_mesh


def tri_mesh(tris):
    tris = np.asarray(tris, float)
    n = len(tris)
    return TriMesh(tris.reshape(-1, 3), np.tile([0, 0, 1.0], (3 * n, 1)), np.zeros(3 * n),
                   np.arange(3 * n).reshape(n, 3))


def random_rays(rng, n, center, spread):
    o = center + rng.normal(size=(n, 3)) * spread * 2
    target = center + rng.normal(size=(n, 3)) * spread * 0.3
    return [Ray.make(a, b - a) for a, b in zip(o, target)]


def test_single_triangle_single_leaf():
    bvh = build_bvh(tri_mesh([[[0, 0, 0], [1, 0, 0], [0, 1, 0]]]))
    assert bvh.n_nodes == 1
    leaves = list(bvh.leaves())
    assert len(leaves) == 1 and list(leaves[0][1]) == [0]


def test_empty_mesh_rejected():
    empty = TriMesh(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0), np.zeros((0, 3), int))
    with pytest.raises(ValueError):
        build_bvh(empty)


def test_bvh_structure(helix_small):
    _, mesh, _, _ = helix_small
    bvh = build_bvh(mesh)
    seen = np.concatenate([prims for _, prims in bvh.leaves()])
    assert sorted(seen) == list(range(mesh.n_triangles))
    corners = mesh.positions[mesh.triangles]
    for node, prims in bvh.leaves():
        assert len(prims) <= 4
        assert np.all(corners[prims].min(axis=1) >= bvh.node_lo[node] - 1e-12)
        assert np.all(corners[prims].max(axis=1) <= bvh.node_hi[node] + 1e-12)
    for n in range(bvh.n_nodes):
        if bvh.left[n] >= 0:
            for c in (bvh.left[n], bvh.right[n]):
                assert np.all(bvh.node_lo[c] >= bvh.node_lo[n]) and np.all(bvh.node_hi[c] <= bvh.node_hi[n])
    again = build_bvh(mesh)
    assert again.order.tobytes() == bvh.order.tobytes()


def test_closest_hit_matches_brute_force(helix_small):
    ls, mesh, _, _ = helix_small
    bvh = build_bvh(mesh)
    rng = np.random.default_rng(0)
    lo, hi = ls.bounds()
    hits = 0
    for ray in random_rays(rng, 1000, 0.5 * (lo + hi), 0.5 * np.linalg.norm(hi - lo)):
        h = closest_hit(ray, bvh)
        brute = all_hits(ray, bvh)
        if not brute:
            assert h is None
            continue
        hits += 1
        assert h is not None
        assert (h.t, h.prim) == (brute[0].t, brute[0].prim)
    assert hits > 100


def test_t_min_filter_and_miss():
    bvh = build_bvh(tri_mesh([[[-1, -1, 1], [1, -1, 1], [0, 1, 1]],
                              [[-1, -1, 2], [1, -1, 2], [0, 1, 2]]]))
    ray = Ray.make((0, 0, 0), (0, 0, 1))
    assert closest_hit(ray, bvh).prim == 0
    far = closest_hit(ray, bvh, t_min=1.5)
    assert far.prim == 1 and far.t == pytest.approx(2.0)
    assert closest_hit(ray, bvh, t_min=2.5) is None
    assert closest_hit(Ray.make((0, 0, 0), (0, 0, -1)), bvh) is None
    with pytest.raises(ValueError):
        closest_hit(ray, bvh, t_min=-1.0)


def test_tie_broken_by_lowest_id():
    t = [[-1, -1, 1], [1, -1, 1], [0, 1, 1]]
    bvh = build_bvh(tri_mesh([t, t, t]))
    assert closest_hit(Ray.make((0, 0, 0), (0, 0, 1)), bvh).prim == 0


def test_shared_edge_never_missed():
    # rays through the diagonal shared by two triangles of a quad
    mesh = tri_mesh([[[-1, -1, 1], [1, -1, 1], [1, 1, 1]],
                     [[-1, -1, 1], [1, 1, 1], [-1, 1, 1]]])
    bvh = build_bvh(mesh)
    tf = TransferFunction.constant([1, 0, 0, 0.5])
    for s in np.linspace(-0.9, 0.9, 13):
        ray = Ray.make((s, s, 0), (0, 0, 1))
        assert 1 <= len(all_hits(ray, bvh)) <= 2
        # the epsilon restart blends a coincident edge hit only once
        rgba, n = trace_blend(ray, bvh, tf, (1, 1, 1))
        assert n == 1 and rgba[3] == pytest.approx(0.5)


def test_watertight_parity():
    ls = LineSet([[0, 0, 0], [0.5, 0.1, 0], [1, 0, 0.2]], [0, 0.5, 1], [[0, 1, 2]])
    bvh = build_bvh(generate_tube_mesh(ls, 0.1))
    rng = np.random.default_rng(3)
    entered = 0
    for _ in range(2000):
        o = rng.normal(size=3) * 2 + [0.5, 0, 0]
        d = np.array([0.5, 0.05, 0.1]) + rng.normal(size=3) * 0.05 - o
        n = len(all_hits(Ray.make(o, d), bvh))
        assert n % 2 == 0
        entered += n > 0
    assert entered > 100


def test_trace_blend_equals_all_hits_oracle(helix_small):
    ls, mesh, cam, tf = helix_small
    bvh = build_bvh(mesh)
    dirs = cam.ray_directions()
    rng = np.random.default_rng(1)
    for _ in range(150):
        j, i = rng.integers(cam.height), rng.integers(cam.width)
        ray = Ray(np.asarray(cam.eye, float), dirs[j, i])
        rgba, n = trace_blend(ray, bvh, tf, (1, 1, 1))
        frags = []
        T = 1.0
        for k, h in enumerate(all_hits(ray, bvh, tf)):
            if T < TERMINATION_T:
                break
            frags.append(Fragment(h.t, tuple(h.rgba[:3]), h.rgba[3], k))
            T *= 1 - h.rgba[3]
        np.testing.assert_allclose(rgba, composite_front_to_back(frags, (1, 1, 1)), atol=1e-12)
        assert n == len(frags)


def test_empty_scene_background(camera):
    empty = TriMesh(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0), np.zeros((0, 3), int))
    img = raytrace_image(empty, camera, TransferFunction.constant([1, 0, 0, 1]), (0.2, 0.3, 0.4))
    np.testing.assert_allclose(img.rgb, np.broadcast_to([0.2, 0.3, 0.4], img.rgb.shape))


def _interior(counts):
    return ndimage.maximum_filter(counts, 3) == ndimage.minimum_filter(counts, 3)


def test_opaque_matches_zbuffer_and_single_hit(helix_small):
    _, mesh, cam, _ = helix_small
    tf = TransferFunction([0, 1], [[0.1, 0.2, 0.9, 1.0], [0.9, 0.3, 0.1, 1.0]])
    img = raytrace_image(mesh, cam, tf, (1, 1, 1))
    counts, _ = depth_complexity(rasterize(mesh, cam, tf))
    z = zbuffer_render(mesh, cam, tf, (1, 1, 1))
    inside = _interior(counts)
    assert np.abs(img.rgb - z).max(axis=-1)[inside].max() <= 1e-3
    covered = img.counters["hits"] > 0
    assert np.all(img.counters["hits"][covered] == 1)


def test_transparent_matches_fragment_lists(helix_small):
    _, mesh, cam, tf = helix_small
    img = raytrace_image(mesh, cam, tf, (1, 1, 1))
    fb = rasterize(mesh, cam, tf)
    ll = render_fragment_lists(fb, (1, 1, 1))
    counts, _ = depth_complexity(fb)
    inside = _interior(counts)
    d = np.abs(img.rgb - ll.rgb).max(axis=-1)
    assert d[inside].max() <= 1e-3
    assert d.max() <= 1.0


def test_epsilon_robustness(helix_small):
    _, mesh, cam, tf = helix_small
    bvh = build_bvh(mesh)
    eps = default_epsilon(bvh)
    a = raytrace_image(bvh, cam, tf, (1, 1, 1), epsilon=eps)
    b = raytrace_image(bvh, cam, tf, (1, 1, 1), epsilon=eps / 2)
    assert np.abs(a.rgba - b.rgba).max() <= 1e-3


def test_iteration_cap(helix_small):
    _, mesh, cam, tf = helix_small
    with pytest.raises(RuntimeError):
        raytrace_image(mesh, cam, tf, (1, 1, 1), max_iterations=1)
    with pytest.raises(ValueError):
        raytrace_image(mesh, cam, tf, (1, 1, 1), epsilon=0.0)


def test_deterministic(helix_small):
    _, mesh, cam, tf = helix_small
    a = raytrace_image(mesh, cam, tf, (1, 1, 1))
    b = raytrace_image(mesh, cam, tf, (1, 1, 1))
    assert a.rgba.tobytes() == b.rgba.tobytes()


# analytic tubes --------------------------------------------------------

def test_tube_perpendicular_through_axis():
    hits = intersect_ray_tube(Ray.make((0.5, -3, 0), (0, 1, 0)), ((0, 0, 0), (1, 0, 0)), 0.2)
    assert len(hits) == 2
    assert [h.t for h in hits] == pytest.approx([2.8, 3.2])
    np.testing.assert_allclose(hits[0].normal, [0, -1, 0], atol=1e-12)
    assert hits[0].attribute == pytest.approx(0.5)


def test_tube_miss_and_endpoint():
    assert intersect_ray_tube(Ray.make((0.5, -3, 0.3), (0, 1, 0)), ((0, 0, 0), (1, 0, 0)), 0.2) == []
    hits = intersect_ray_tube(Ray.make((0.0, -3, 0), (0, 1, 0)), ((0, 0, 0), (1, 0, 0)), 0.2,
                              attributes=(0.25, 0.75))
    assert hits and hits[0].attribute == pytest.approx(0.25)
    with pytest.raises(ValueError):
        intersect_ray_tube(Ray.make((0, 0, 0), (0, 1, 0)), ((0, 0, 0), (0, 0, 0)), 0.2)
    with pytest.raises(ValueError):
        intersect_ray_tube(Ray.make((0, 0, 0), (0, 1, 0)), ((0, 0, 0), (1, 0, 0)), 0.0)


def test_tube_bvh_matches_brute_force(helix_small):
    ls, _, _, _ = helix_small
    bvh = build_tube_bvh(ls, 0.03)
    rng = np.random.default_rng(2)
    lo, hi = ls.bounds()
    for ray in random_rays(rng, 300, 0.5 * (lo + hi), 0.5 * np.linalg.norm(hi - lo)):
        h = closest_hit(ray, bvh)
        brute = all_hits(ray, bvh)
        assert (h is None) == (not brute)
        if h is not None:
            assert (h.t, h.prim) == (brute[0].t, brute[0].prim)
