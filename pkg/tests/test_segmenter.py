import heapq

import numpy as np
import pytest

from click3d.clicks import Click, ClickChannels, encode_clicks, snapped_click
from click3d.scene import PointCloud, build_knn_graph, save_scene
from click3d.segmenter import (BackendError, CapabilityError,
                               ConstantEmptyBackend, ExternalBackend,
                               GeodesicBackend, GeodesicConfig, OracleBackend,
                               SoftMask, geodesic_segment, segment)
from click3d.simulate import run_simulated_session
from click3d.synthetic import rod_scene, random_scene, two_cluster_scene

from conftest import echo_command


def brute_geodesic_mask(cloud, channels, config=GeodesicConfig()):
    """Plain-python Dijkstra over the symmetrized k-NN graph.

    Recomputes the edge weights (euclidean + color term) and the
    foreground rule (d_pos <= d_neg and d_pos <= background radius)
    without the pruned scipy search.
    """
    graph = build_knn_graph(cloud, config.k)
    mat = graph.matrix.tocoo()
    adj = {i: [] for i in range(cloud.n_points)}
    for i, j, d in zip(mat.row, mat.col, mat.data):
        w = d
        if cloud.colors is not None and config.color_weight > 0:
            w += config.color_weight * np.linalg.norm(
                cloud.colors[i].astype(np.float64) - cloud.colors[j].astype(np.float64))
        adj[i].append((j, w))

    def dijkstra(seeds):
        dist = np.full(cloud.n_points, np.inf)
        heap = [(0.0, int(s)) for s in seeds]
        for s in seeds:
            dist[s] = 0.0
        heapq.heapify(heap)
        while heap:
            d, u = heapq.heappop(heap)
            if d > dist[u]:
                continue
            for v, w in adj[u]:
                nd = d + w
                if nd < dist[v]:
                    dist[v] = nd
                    heapq.heappush(heap, (nd, v))
        return dist

    neg = np.flatnonzero(channels.t_n)
    pos = np.flatnonzero(channels.t_p & ~channels.t_n)
    if pos.size == 0:
        return np.zeros(cloud.n_points, dtype=bool)
    d_pos = dijkstra(pos)
    d_neg = dijkstra(neg) if neg.size else np.full(cloud.n_points, np.inf)
    return (d_pos <= d_neg) & (d_pos <= config.background_radius)


def channels_for(cloud, pos_idx=(), neg_idx=(), eps=0.05):
    clicks = []
    for i in pos_idx:
        clicks.append(Click(tuple(cloud.positions[i]), "pos", len(clicks) + 1, snapped_index=i))
    for i in neg_idx:
        clicks.append(Click(tuple(cloud.positions[i]), "neg", len(clicks) + 1, snapped_index=i))
    return encode_clicks(cloud, clicks, eps), clicks


# --- geodesic reference segmenter ---------------------------------------


def test_two_cluster_single_click_isolates_cluster(cluster_scene):
    cloud = cluster_scene.cloud
    gt = cluster_scene.labels.mask(1)
    backend = GeodesicBackend(cloud)
    ch, clicks = channels_for(cloud, pos_idx=[int(np.flatnonzero(gt)[0])])
    mask = segment(backend, cloud, ch, clicks)
    np.testing.assert_array_equal(mask.binary, gt)


def test_negative_click_far_away_changes_nothing(cluster_scene):
    cloud = cluster_scene.cloud
    gt = cluster_scene.labels.mask(1)
    backend = GeodesicBackend(cloud)
    i = int(np.flatnonzero(gt)[0])
    j = int(np.flatnonzero(~gt)[0])
    ch_a, cl_a = channels_for(cloud, pos_idx=[i])
    ch_b, cl_b = channels_for(cloud, pos_idx=[i], neg_idx=[j])
    a = segment(backend, cloud, ch_a, cl_a)
    b = segment(backend, cloud, ch_b, cl_b)
    np.testing.assert_array_equal(a.binary, b.binary)


def test_rod_splits_between_opposite_clicks():
    scene = rod_scene(n=200, length=1.0)
    cloud = scene.cloud
    ch, _ = channels_for(cloud, pos_idx=[0], neg_idx=[199], eps=0.001)
    mask = geodesic_segment(cloud, build_knn_graph(cloud, 8), ch)
    expect = brute_geodesic_mask(cloud, ch)
    np.testing.assert_array_equal(mask.binary, expect)
    # the near half belongs to the positive end, the far half does not
    assert mask.binary[:90].all() and not mask.binary[110:].any()


def test_geodesic_matches_bruteforce_random():
    for seed in range(6):
        scene = random_scene(seed, n=150, with_color=seed % 2 == 0, extent=1.0)
        cloud = scene.cloud
        rng = np.random.default_rng(seed + 100)
        pos = rng.choice(cloud.n_points, 2, replace=False)
        neg = rng.choice(cloud.n_points, 2, replace=False)
        ch, _ = channels_for(cloud, pos_idx=pos, neg_idx=neg, eps=0.01)
        mask = geodesic_segment(cloud, build_knn_graph(cloud, 8), ch)
        np.testing.assert_array_equal(mask.binary, brute_geodesic_mask(cloud, ch))


def test_click_consistency_invariants(cluster_scene):
    cloud = cluster_scene.cloud
    backend = GeodesicBackend(cloud)
    ch, clicks = channels_for(cloud, pos_idx=[0, 5], neg_idx=[150])
    mask = segment(backend, cloud, ch, clicks)
    assert np.all((mask.scores >= 0) & (mask.scores <= 1))
    np.testing.assert_array_equal(mask.binary, mask.scores >= 0.5)
    pure_pos = (ch.t_p == 1) & (ch.t_n == 0)
    assert mask.binary[pure_pos].all()
    assert not mask.binary[ch.t_n == 1].any()


def test_point_with_both_bits_is_negative(cluster_scene):
    cloud = cluster_scene.cloud
    backend = GeodesicBackend(cloud)
    # positive and negative click on the same point: negative wins there
    ch, clicks = channels_for(cloud, pos_idx=[0, 40], neg_idx=[0])
    mask = segment(backend, cloud, ch, clicks)
    assert not mask.binary[0]


def test_geodesic_deterministic(cluster_scene):
    cloud = cluster_scene.cloud
    backend = GeodesicBackend(cloud)
    ch, clicks = channels_for(cloud, pos_idx=[3], neg_idx=[120])
    a = segment(backend, cloud, ch, clicks)
    b = segment(backend, cloud, ch, clicks)
    np.testing.assert_array_equal(a.scores, b.scores)


def test_geodesic_config_validation():
    with pytest.raises(ValueError):
        GeodesicConfig(k=0)
    with pytest.raises(ValueError):
        GeodesicConfig(background_radius=0.0)


# --- wrapper and simple doubles -----------------------------------------


def test_segment_wrapper_empty_channels(cluster_scene):
    cloud = cluster_scene.cloud
    ch = ClickChannels(np.zeros(cloud.n_points, np.uint8),
                       np.zeros(cloud.n_points, np.uint8), 0.05)
    mask = segment(OracleBackend(np.ones(cloud.n_points, bool)), cloud, ch)
    assert not mask.binary.any()


def test_segment_wrapper_shape_mismatch(cluster_scene):
    ch = ClickChannels(np.ones(3, np.uint8), np.zeros(3, np.uint8), 0.05)
    with pytest.raises(ValueError):
        segment(ConstantEmptyBackend(), cluster_scene.cloud, ch)


def test_softmask_rejects_nonfinite():
    with pytest.raises(ValueError):
        SoftMask(np.array([np.nan], dtype=np.float32))


def test_non_adaptive_backend_rejects_adapt():
    with pytest.raises(CapabilityError):
        ConstantEmptyBackend().adapt([])


# --- external subprocess backend ----------------------------------------


@pytest.fixture
def saved_scene(tmp_path, cluster_scene):
    return save_scene(cluster_scene, tmp_path / "scene"), cluster_scene


def spawn_echo(saved_scene, *flags):
    path, scene = saved_scene
    return ExternalBackend(echo_command(*flags), scene_blob=str(path),
                           n_points=scene.cloud.n_points, c=scene.cloud.n_channels,
                           epsilon=0.05, timeout=15.0)


def test_external_echo_loopback(saved_scene, cluster_scene):
    cloud = cluster_scene.cloud
    backend = spawn_echo(saved_scene)
    try:
        assert not backend.capabilities.supports_adaptation
        ch, clicks = channels_for(cloud, pos_idx=[0], neg_idx=[150])
        mask = segment(backend, cloud, ch, clicks)
        # echo returns the positive click channel verbatim
        np.testing.assert_array_equal(mask.binary, ch.t_p.astype(bool))
    finally:
        backend.close()


def test_external_requires_click_list(saved_scene, cluster_scene):
    backend = spawn_echo(saved_scene)
    try:
        ch, _ = channels_for(cluster_scene.cloud, pos_idx=[0])
        with pytest.raises(ValueError):
            backend.segment(cluster_scene.cloud, ch, clicks=None)
    finally:
        backend.close()


def test_external_crash_raises_backend_error(saved_scene, cluster_scene):
    backend = spawn_echo(saved_scene, "--crash-after", "2")
    try:
        cloud = cluster_scene.cloud
        ch, clicks = channels_for(cloud, pos_idx=[0])
        segment(backend, cloud, ch, clicks)  # first request succeeds
        with pytest.raises(BackendError):
            segment(backend, cloud, ch, clicks)
    finally:
        backend.close()


def test_external_crash_aborts_session(saved_scene, cluster_scene):
    backend = spawn_echo(saved_scene, "--crash-after", "2")
    try:
        trace = run_simulated_session(cluster_scene, 1, backend, max_clicks=5)
        assert trace.status == "aborted"
    finally:
        backend.close()


def test_external_adaptive_pins_clicks(saved_scene, cluster_scene):
    cloud = cluster_scene.cloud
    backend = spawn_echo(saved_scene, "--adaptive")
    try:
        assert backend.capabilities.supports_adaptation
        pos = snapped_click(cloud, cloud.positions[0], "pos", 1)
        far = snapped_click(cloud, cloud.positions[150], "pos", 2)
        backend.adapt([far])
        backend.adapt([far])  # repeat is harmless
        ch, _ = channels_for(cloud, pos_idx=[0])
        mask = segment(backend, cloud, ch, [pos])
        assert mask.binary[0] and mask.binary[150]  # pinned by adaptation
    finally:
        backend.close()


def test_external_adapt_without_capability(saved_scene, cluster_scene):
    backend = spawn_echo(saved_scene)
    try:
        with pytest.raises(CapabilityError):
            backend.adapt([])
    finally:
        backend.close()


def test_external_close_idempotent(saved_scene):
    backend = spawn_echo(saved_scene)
    backend.close()
    backend.close()


def test_external_bad_command():
    with pytest.raises(BackendError):
        ExternalBackend("/nonexistent/backend-binary", scene_blob="x",
                        n_points=1, c=3, epsilon=0.05)
