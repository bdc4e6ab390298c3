import numpy as np
import pytest

from mtga.events import Event, EventStream, SensorGeometry
from mtga.graphs import (
    GraphConfig, GraphFormatError, build_edges, build_graph_list, graphs_from_dict, graphs_to_dict,
    read_graphs, select_top_k, time_slices, voxelize, write_graphs,
)
from mtga.oracle import naive_graphs, naive_voxel_counts
from mtga.testing import graph_list_mismatch, random_stream

G = SensorGeometry(16, 16)


def small_cfg(**kw):
    base = dict(bins=2, slices_per_bin=3, voxel_h=4, voxel_w=4, top_k=4, points=3, radius=2.0)
    base.update(kw)
    return GraphConfig(**base)


def test_three_events_one_voxel():
    events = [Event(0, 1, 1, 1), Event(0, 2, 3, -1), Event(0, 3, 0, 1)]
    occ = voxelize(EventStream.from_events(events, G), small_cfg())
    assert len(occ) == 1
    assert occ.count((0, 0, 0)) == 3
    assert occ.count((0, 1, 0)) == 0


def test_neighbouring_pixels_across_boundary():
    events = [Event(0, 3, 0, 1), Event(0, 4, 0, 1)]
    occ = voxelize(EventStream.from_events(events, G), small_cfg())
    assert sorted(occ) == [(0, 0, 0), (0, 1, 0)]


def test_partial_boundary_voxels():
    g = SensorGeometry(10, 7)
    assert small_cfg().grid(g) == (6, 2, 3)
    events = [Event(0, 9, 6, 1)]
    occ = voxelize(EventStream.from_events(events, g), small_cfg())
    assert list(occ) == [(0, 2, 1)]


def test_voxel_counts_match_dictionary_tally():
    rng = np.random.default_rng(3)
    for _ in range(20):
        s = random_stream(rng, max_events=3000, max_side=60)
        cfg = small_cfg(bins=int(rng.integers(1, 10)), slices_per_bin=int(rng.integers(1, 5)),
                        voxel_h=int(rng.integers(1, 9)), voxel_w=int(rng.integers(1, 9)))
        occ = voxelize(s, cfg)
        ref = naive_voxel_counts(s, cfg)
        assert set(occ) == set(ref)
        for key, members in ref.items():
            assert occ[key].tolist() == members


def test_time_slices_exact_and_clamped():
    t = np.array([0, 1, 2, 3, 10, 99, 100])
    assert time_slices(t, 10).tolist() == [0, 0, 0, 0, 1, 9, 9]
    assert time_slices(np.array([5, 5, 5]), 4).tolist() == [0, 0, 0]
    big = np.array([0, 2**62, 2**62 + 1])
    assert time_slices(big, 180).tolist()[-1] == 179


def test_top_k_tie_breaks_by_voxel_order():
    # four voxels with one event each, all in frame 0; earliest slice then row then column wins
    events = [Event(0, 12, 12, 1), Event(0, 0, 12, 1), Event(0, 12, 0, 1), Event(40, 0, 0, 1),
              Event(99, 0, 0, 1)]
    cfg = small_cfg(top_k=3)
    coords, feats, counts = select_top_k(voxelize(EventStream.from_events(events, G), cfg), 0, cfg)
    assert coords.tolist() == [[0, 3, 0], [0, 0, 3], [0, 3, 3]]
    assert counts.tolist() == [1, 1, 1]


def test_top_k_prefers_busier_voxels():
    events = [Event(0, 0, 0, 1)] + [Event(1, 8, 8, -1)] * 3 + [Event(2, 12, 0, 1)] * 2 + [Event(100, 0, 0, 1)]
    cfg = small_cfg(top_k=2)
    coords, feats, counts = select_top_k(voxelize(EventStream.from_events(events, G), cfg), 0, cfg)
    assert coords.tolist() == [[0, 2, 2], [0, 3, 0]]
    assert counts.tolist() == [3, 2]
    assert feats.tolist() == [[-1, -1, -1], [1, 1, 0]]


def test_features_take_first_points_in_time_order():
    events = [Event(t, 1, 1, 1 if t % 2 else -1) for t in range(10)]
    cfg = small_cfg(bins=1, slices_per_bin=1, points=4)
    _, feats, counts = select_top_k(voxelize(EventStream.from_events(events, G), cfg), 0, cfg)
    assert feats.tolist() == [[-1, 1, -1, 1]]
    assert counts.tolist() == [10]


def test_random_sampling_is_seeded_subset():
    events = [Event(t, 1, 1, 1 if t % 3 else -1) for t in range(40)]
    s = EventStream.from_events(events, G)
    cfg = small_cfg(bins=1, slices_per_bin=1, points=5, sampling="random", sample_seed=3)
    a = build_graph_list(s, cfg)[0].feats
    b = build_graph_list(s, cfg)[0].feats
    assert np.array_equal(a, b)
    assert (a != 0).all()


def test_single_voxel_frame_has_no_edges():
    edges, weights = build_edges(np.array([[0, 1, 1]]), small_cfg())
    assert edges.shape == (0, 2) and weights.shape == (0,)


def test_edges_at_exact_radius_excluded():
    coords = np.array([[0, 0, 0], [0, 2, 0], [0, 1, 1]])
    edges, weights = build_edges(coords, small_cfg(radius=2.0))
    pairs = {tuple(e) for e in edges.tolist()}
    assert (0, 1) not in pairs and (1, 0) not in pairs
    assert {(0, 2), (2, 0), (1, 2), (2, 1)} == pairs
    assert np.allclose(weights, np.sqrt(2))


def test_duplicate_coordinates_get_no_edge():
    edges, _ = build_edges(np.array([[0, 0, 0], [0, 0, 0]]), small_cfg())
    assert len(edges) == 0


def test_edge_symmetry_and_weights():
    s = random_stream(np.random.default_rng(8), n=4000, max_side=64)
    for g in build_graph_list(s, GraphConfig(bins=10)):
        d = g.edge_dict()
        assert all((j, i) in d and d[(j, i)] == w for (i, j), w in d.items())
        for (i, j), w in d.items():
            assert 0 < w < 2.0
            assert w == pytest.approx(np.linalg.norm(g.coords[i] - g.coords[j]), abs=1e-12)


def test_radius_monotonicity():
    s = random_stream(np.random.default_rng(9), n=5000, max_side=64)
    small = build_graph_list(s, GraphConfig(bins=6, radius=1.5))
    large = build_graph_list(s, GraphConfig(bins=6, radius=3.0))
    for a, b in zip(small, large):
        assert set(a.edge_dict()) <= set(b.edge_dict())


def test_scale_vector_changes_distances():
    coords = np.array([[0, 0, 0], [1, 0, 0]])
    cfg = small_cfg(scale=(3.0, 1.0, 1.0))
    edges, _ = build_edges(coords, cfg)
    assert len(edges) == 0
    edges, weights = build_edges(coords, small_cfg(scale=(1.5, 1.0, 1.0)))
    assert weights.tolist() == [1.5, 1.5]


def test_matches_naive_oracle():
    rng = np.random.default_rng(10)
    for _ in range(25):
        s = random_stream(rng, max_events=4000, max_side=64)
        cfg = GraphConfig(bins=int(rng.integers(1, 12)), slices_per_bin=int(rng.integers(1, 4)),
                          top_k=int(rng.integers(1, 40)), points=int(rng.integers(1, 20)),
                          radius=float(rng.uniform(0.5, 4.0)))
        assert graph_list_mismatch(build_graph_list(s, cfg), naive_graphs(s, cfg)) is None


def test_empty_stream_gives_empty_graphs():
    glist = build_graph_list(EventStream.empty(G), GraphConfig(bins=5))
    assert len(glist) == 5
    assert all(g.num_nodes == 0 and len(g.edges) == 0 for g in glist)


def test_slices_align_with_frames():
    rng = np.random.default_rng(11)
    for _ in range(200):
        s = random_stream(rng, n=int(rng.integers(1, 300)), max_side=32)
        cfg = GraphConfig(bins=int(rng.integers(1, 61)), slices_per_bin=int(rng.integers(1, 5)), top_k=1000)
        for f, g in enumerate(build_graph_list(s, cfg)):
            assert (g.coords[:, 0] // cfg.slices_per_bin == f).all()


def test_time_shift_invariance():
    s = random_stream(np.random.default_rng(12), n=3000)
    cfg = GraphConfig()
    assert graph_list_mismatch(build_graph_list(s, cfg), build_graph_list(s.shifted(10**9), cfg), 0.0) is None


def test_thread_count_does_not_matter():
    s = random_stream(np.random.default_rng(13), n=20_000)
    cfg = GraphConfig()
    one = build_graph_list(s, cfg, threads=1)
    assert graph_list_mismatch(one, build_graph_list(s, cfg, threads=4), 0.0) is None


def test_json_roundtrip(tmp_path):
    s = random_stream(np.random.default_rng(14), n=2000, max_side=40)
    glist = build_graph_list(s, GraphConfig(bins=7, top_k=10, points=5))
    write_graphs(glist, tmp_path / "g.json")
    back = read_graphs(tmp_path / "g.json")
    assert back.cfg == glist.cfg and back.geometry == glist.geometry
    assert graph_list_mismatch(glist, back, 0.0) is None


def test_json_rejects_bad_edges():
    glist = build_graph_list(random_stream(np.random.default_rng(15), n=500, max_side=16), small_cfg())
    doc = graphs_to_dict(glist)
    doc["frames"][0]["edges"] = [[0, 999]]
    doc["frames"][0]["weights"] = [1.0]
    with pytest.raises(GraphFormatError):
        graphs_from_dict(doc)
    del doc["frames"][0]
    with pytest.raises(GraphFormatError):
        graphs_from_dict(doc)


def test_frame_index_out_of_range():
    cfg = small_cfg()
    with pytest.raises(IndexError):
        select_top_k(voxelize(EventStream.empty(G), cfg), 2, cfg)


def test_invalid_config():
    with pytest.raises(ValueError):
        GraphConfig(top_k=0)
    with pytest.raises(ValueError):
        GraphConfig(radius=0)
    with pytest.raises(ValueError):
        GraphConfig(sampling="median")


def test_batched_and_per_frame_paths_agree():
    from mtga.graphs import _batched_graphs, _frame_graph
    rng = np.random.default_rng(16)
    for _ in range(20):
        s = random_stream(rng, max_events=5000, max_side=64)
        cfg = GraphConfig(bins=int(rng.integers(1, 20)), top_k=int(rng.integers(1, 40)),
                          radius=float(rng.uniform(0.5, 3.0)), scale=(2.0, 1.0, 0.5))
        occ = voxelize(s, cfg)
        batched = _batched_graphs(occ, cfg)
        single = [_frame_graph(occ, i, cfg) for i in range(cfg.bins)]
        assert graph_list_mismatch(batched, single, 0.0) is None
        assert all(np.array_equal(a.counts, b.counts) for a, b in zip(batched, single))
