import numpy as np
import pytest

from nextpoi.dataset import Dataset
from nextpoi.graphs import (
    DISTANCE_EPS, GraphConfig, WeightedGraph, build_pp_graph, build_preference_graph, build_spatial_graph,
    build_stp_graphs, build_temporal_graph, build_user_graph, closed_neighborhood, read_graph, write_graph,
)

from oracles import edge_dict, preference_oracle, random_dataset, spatial_oracle, temporal_oracle, user_oracle


def make_ds(seqs, times=None, n_pois=None):
    times = times or [list(range(len(s))) for s in seqs]
    n = n_pois or (max(max(s) for s in seqs) + 1)
    return Dataset(
        users=[f"u{i}" for i in range(len(seqs))],
        pois=[f"p{i}" for i in range(n)],
        poi_coords=np.zeros((n, 2)),
        train_seqs=[list(s) for s in seqs],
        train_times=[list(t) for t in times],
        test_pairs=[[(s[-1], s[-1], 10**6)] for s in seqs],
    )


def assert_symmetric(g: WeightedGraph):
    for i, nbrs in enumerate(g.adjacency):
        assert i not in nbrs
        for j, w in nbrs.items():
            assert g.adjacency[j][i] == w and w > 0 and np.isfinite(w)


# --- personalised preference graph -------------------------------------------

def test_pp_graph_complete():
    a, b, c = 3, 7, 9
    g = build_pp_graph([a, b, a, c])
    assert g.labels == (a, b, c)
    assert {(g.label(i), g.label(j)) for i, j, _ in g.edges()} == {(a, b), (a, c), (b, c)}
    assert all(w == 1.0 for *_, w in g.edges())
    assert [g.label(v) for v in closed_neighborhood(g, 0)] == [a, b, c]


def test_pp_graph_degenerate_and_count():
    assert build_pp_graph([4]).num_edges == 0
    assert build_pp_graph(list(range(10))).num_edges == 10 * 9 // 2


# --- spatial ------------------------------------------------------------------

def test_spatial_two_pois():
    g = build_spatial_graph(np.array([[0.0, 0.0], [3.0, 4.0]]), GraphConfig(sigma=5))
    assert edge_dict(g) == {(0, 1): pytest.approx(1 / 5.0)}


def test_spatial_line_sigma_one():
    coords = np.array([[0.0, x] for x in range(6)], dtype=float)
    g = build_spatial_graph(coords, GraphConfig(sigma=1))
    assert edge_dict(g) == spatial_oracle(coords, 1)
    assert set(edge_dict(g)) == {(0, 1), (1, 2), (2, 3), (3, 4), (4, 5)}


def test_spatial_duplicate_coordinates_clamped():
    g = build_spatial_graph(np.array([[1.0, 1.0], [1.0, 1.0], [2.0, 2.0]]), GraphConfig(sigma=1))
    assert g.weight(0, 1) == 1 / DISTANCE_EPS


@pytest.mark.parametrize("trial", range(100))
def test_spatial_matches_bruteforce(trial):
    rng = np.random.default_rng(trial)
    coords = rng.uniform(0, 1, size=(20, 2))
    g = build_spatial_graph(coords, GraphConfig(sigma=5))
    assert edge_dict(g) == spatial_oracle(coords, 5)
    assert min(g.degree(v) for v in range(20)) >= 5
    assert_symmetric(g)


def test_haversine_option_changes_metric_only():
    coords = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [60.0, 0.0]])
    g = build_spatial_graph(coords, GraphConfig(sigma=1, metric="haversine"))
    assert g.weight(0, 1) == pytest.approx(1 / 111.195, rel=1e-3)


# --- temporal -----------------------------------------------------------------

def test_temporal_mean_interval():
    a, b = 0, 1
    ds = make_ds([[a, b, a]], [[0, 10, 30]])
    g = build_temporal_graph(ds)
    assert edge_dict(g) == {(0, 1): pytest.approx(1 / 15)}


def test_temporal_pools_users_chronologically():
    # u0 visits a@0, u1 visits b@5 -> pooled pair a-b with interval 5
    ds = make_ds([[0], [1]], [[0], [5]])
    assert edge_dict(build_temporal_graph(ds)) == {(0, 1): pytest.approx(1 / 5)}


def test_temporal_no_self_loop_and_zero_clamp():
    ds = make_ds([[0, 0, 1]], [[0, 7, 7]])
    g = build_temporal_graph(ds)
    assert edge_dict(g) == {(0, 1): 1.0}


# --- preference ---------------------------------------------------------------

def test_preference_counts():
    a, b, c = 0, 1, 2
    assert edge_dict(build_preference_graph(make_ds([[a, b, a], [b, c]]))) == {(0, 1): 2.0, (1, 2): 1.0}
    assert build_preference_graph(make_ds([[a, a, a]])).num_edges == 0
    assert edge_dict(build_preference_graph(make_ds([[a, b], [a, b], [b, a]]))) == {(0, 1): 3.0}


def test_preference_weight_conservation(random_dataset):
    g = build_preference_graph(random_dataset)
    transitions = sum(1 for s in random_dataset.train_seqs for x, y in zip(s, s[1:]) if x != y)
    assert sum(w for *_, w in g.edges()) == transitions


# --- user ---------------------------------------------------------------------

def test_user_graph_jaccard():
    a, b, c, d, e, f, g_, h, i = range(9)
    ds = make_ds([[a, b, c, d, e], [a, f, g_, h, i], [a, b, c, d, e]])
    g = build_user_graph(ds)
    assert edge_dict(g) == {(0, 2): 1.0}
    g2 = build_user_graph(make_ds([[0, 1], [0, 2]]))
    assert edge_dict(g2) == {(0, 1): pytest.approx(1 / 3)}
    assert closed_neighborhood(g, 1) == [1]


# --- oracle equivalence on random instances -----------------------------------

@pytest.mark.parametrize("trial", range(100))
def test_builders_match_oracles(trial):
    rng = np.random.default_rng(1000 + trial)
    ds = random_dataset(rng)
    sigma = int(rng.integers(1, 6))
    spatial = build_spatial_graph(ds.poi_coords, GraphConfig(sigma=sigma))
    assert edge_dict(spatial) == spatial_oracle(ds.poi_coords, sigma)
    if sum(len(s) for s in ds.train_seqs) >= 2:
        assert edge_dict(build_temporal_graph(ds)) == temporal_oracle(ds)
    assert edge_dict(build_preference_graph(ds)) == preference_oracle(ds)
    thr = float(rng.choice([0.0, 0.2, 0.5]))
    assert edge_dict(build_user_graph(ds, GraphConfig(jaccard_threshold=thr))) == user_oracle(ds, thr)


# --- neighbourhood queries and serialisation ----------------------------------

def test_closed_neighborhood_order():
    g = WeightedGraph.empty("user", 3, vertex_domain="user")
    g.add_edge(0, 1, 1.0)
    g.add_edge(1, 2, 1.0)
    g.add_edge(0, 2, 1.0)
    assert closed_neighborhood(g, 1) == [1, 0, 2]
    assert closed_neighborhood(WeightedGraph.empty("user", 2), 1) == [1]
    with pytest.raises(IndexError):
        closed_neighborhood(g, 3)


def test_graph_round_trip(tmp_path, random_dataset):
    for key, g in {**build_stp_graphs(random_dataset), "user": build_user_graph(random_dataset)}.items():
        path = tmp_path / f"{key}.txt"
        write_graph(g, path)
        lines = path.read_text().splitlines()
        assert lines[0] == g.kind and int(lines[1]) == g.num_vertices
        loaded = read_graph(path)
        assert loaded.kind == g.kind
        for (i, j, w), (i2, j2, w2) in zip(g.edges(), loaded.edges()):
            assert (i, j) == (i2, j2) and w2 == pytest.approx(w, rel=1e-11)


def test_rejects_bad_edges():
    g = WeightedGraph.empty("spatial", 2)
    with pytest.raises(ValueError):
        g.add_edge(0, 0, 1.0)
    with pytest.raises(ValueError):
        g.add_edge(0, 1, 0.0)
