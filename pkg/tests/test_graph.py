import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from appgraph.graph import (
    BipartiteGraph,
    EdgeParseError,
    Edges,
    decompose,
    installed,
    load_edges,
    popularity_fraction,
    read_edges,
    read_id_map,
    time_split,
    write_id_map,
)

from conftest import FIG2_EDGES, random_edges


def _tsv(rows):
    return "".join("\t".join(map(str, r)) + "\n" for r in rows).encode()


def test_load_fig2():
    g = load_edges(io.BytesIO(_tsv(FIG2_EDGES)))
    assert (g.num_users, g.num_apps, g.num_edges) == (8, 3, 9)
    assert g.user_ids.tolist() == list(range(1, 9))


def test_load_single_row():
    g = load_edges(b"0\t0\t0\n")
    assert (g.num_users, g.num_apps, g.num_edges) == (1, 1, 1)


def test_duplicate_keeps_earliest_day():
    g = load_edges(b"5\t9\t7\n5\t9\t3\n")
    assert g.num_edges == 1
    assert g.app_days.tolist() == [3]


def test_comments_blank_lines_and_missing_day():
    g = load_edges(b"# header\n\n1\t2\n1\t3\t4\n")
    assert g.num_edges == 2
    assert sorted(g.app_days.tolist()) == [0, 4]


@pytest.mark.parametrize(
    "text, lineno",
    [(b"1\t2\n1\tx\n", 2), (b"1\n", 1), (b"# c\n1\t2\t3\t4\n", 2), (b"1\t2\t-1\n", 1)],
)
def test_malformed_row_reports_line(text, lineno):
    with pytest.raises(EdgeParseError) as exc:
        read_edges(text)
    assert exc.value.lineno == lineno
    assert f"line {lineno}" in str(exc.value)


def test_empty_input_rejected():
    with pytest.raises(ValueError):
        load_edges(b"# nothing here\n")


def test_load_from_path(tmp_path):
    path = tmp_path / "e.tsv"
    path.write_bytes(_tsv(FIG2_EDGES))
    assert load_edges(path).num_edges == 9
    assert load_edges(str(path)).num_edges == 9


def test_decompose_fig2(fig2_graph):
    views = decompose(fig2_graph)
    # back to the original 1-based ids
    as_sets = [set((fig2_graph.user_ids[v.users]).tolist()) for v in views]
    assert as_sets == [{4, 5, 6}, {1, 2, 3}, {7, 8, 1}]
    assert [v.size for v in views] == [3, 3, 3]
    assert sum(1 in s for s in as_sets) == 2


def test_decompose_single_app():
    g = BipartiteGraph.from_edges([(u, 7, 0) for u in range(5)])
    (view,) = decompose(g)
    assert view.users.tolist() == list(range(5))


def test_decompose_round_trip_random():
    rng = np.random.default_rng(0)
    edges = random_edges(rng, n_users=300, n_apps=50, n_rows=3000)
    g = BipartiteGraph.from_edges(edges)
    views = decompose(g)
    assert len(views) == g.num_apps == 50
    assert sum(v.size for v in views) == g.num_edges
    expected = set(zip(edges.users.tolist(), edges.apps.tolist()))
    rebuilt = {(int(g.user_ids[u]), int(g.app_ids[v.app_id])) for v in views for u in v.users}
    assert rebuilt == expected
    # a user installed by k APPs appears in exactly k views
    counts = np.zeros(g.num_users, dtype=int)
    for v in views:
        counts[v.users] += 1
    assert np.array_equal(counts, g.user_degrees)


def test_installed_fig2(fig2_graph):
    u1, p1, p2 = 0, 0, 1
    assert installed(fig2_graph, u1, p2)
    assert not installed(fig2_graph, u1, p1)


def test_installed_out_of_range(fig2_graph):
    with pytest.raises(IndexError):
        installed(fig2_graph, 8, 0)
    with pytest.raises(IndexError):
        installed(fig2_graph, 0, -1)


def test_installed_matches_linear_scan():
    rng = np.random.default_rng(1)
    edges = random_edges(rng, n_users=200, n_apps=40, n_rows=2500)
    g = BipartiteGraph.from_edges(edges)
    rows = list(zip(edges.users.tolist(), edges.apps.tolist()))
    for _ in range(1000):
        u = int(rng.integers(g.num_users))
        a = int(rng.integers(g.num_apps))
        ou, oa = int(g.user_ids[u]), int(g.app_ids[a])
        scan = any(r == (ou, oa) for r in rows)
        assert installed(g, u, a) == scan
        # dual index agreement
        assert (a in g.apps_of(u).tolist()) == scan


def test_popularity_fraction(fig2_graph):
    assert popularity_fraction(fig2_graph, 0) == 3 / 8
    g = BipartiteGraph.from_edges([(u, 0, 0) for u in range(4)] + [(0, 1, 0)])
    assert popularity_fraction(g, 0) == 1.0
    rng = np.random.default_rng(2)
    g = BipartiteGraph.from_edges(random_edges(rng))
    for a in range(g.num_apps):
        assert popularity_fraction(g, a) * g.num_users == pytest.approx(len(g.users_of(a)))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 30), st.integers(0, 8), st.integers(0, 5)), min_size=1, max_size=120))
def test_graph_invariants(rows):
    g = BipartiteGraph.from_edges(rows)
    pairs = {(u, a) for u, a, _ in rows}
    assert g.num_edges == len(pairs)
    assert g.app_sizes.sum() == g.user_degrees.sum() == g.num_edges
    for a in range(g.num_apps):
        users = g.users_of(a)
        assert np.all(np.diff(users) > 0)
        for u in users.tolist():
            assert a in g.apps_of(u).tolist()
    earliest = {}
    for u, a, d in rows:
        earliest[(u, a)] = min(d, earliest.get((u, a), d))
    got = {(u, a): d for u, a, d in g.to_edges()}
    assert got == earliest


def test_time_split_window_arithmetic():
    rows = [(u, u, u) for u in range(10)]
    train, test = time_split(rows, holdout_days=5)
    assert sorted(train.app_days.tolist()) == [0, 1, 2, 3, 4]
    assert sorted(test.days.tolist()) == [5, 6, 7, 8, 9]


def test_time_split_excludes_seen_pairs():
    rows = [(1, 1, 0), (1, 1, 8), (2, 1, 9), (3, 2, 1)]
    train, test = time_split(rows, holdout_days=5)
    assert list(test) == [(2, 1, 9)]


def test_time_split_all_in_holdout():
    with pytest.raises(ValueError, match="holdout"):
        time_split([(0, 0, 0), (1, 1, 0)], holdout_days=5)


def test_time_split_accounting_on_synthetic():
    from appgraph.synthgen import SynthConfig, generate

    edges, _ = generate(SynthConfig(num_users=300, num_apps=80, num_clusters=4, installs_per_user=10, seed=4))
    # add re-installs on later days so that the dedup path is exercised
    rng = np.random.default_rng(0)
    idx = rng.integers(len(edges), size=500)
    raw = Edges(
        np.concatenate([edges.users, edges.users[idx]]),
        np.concatenate([edges.apps, edges.apps[idx]]),
        np.concatenate([edges.days, rng.integers(10, size=500)]),
    )
    train, test = time_split(raw, holdout_days=5)
    boundary = int(raw.days.max()) - 5
    n_train_raw = int((raw.days <= boundary).sum())
    # every raw row is a train edge, a test edge, or a dropped duplicate
    dropped = len(raw) - train.num_edges - len(test)
    train_keys = set(zip(raw.users[raw.days <= boundary].tolist(), raw.apps[raw.days <= boundary].tolist()))
    late = [(u, a) for u, a, d in raw if d > boundary]
    fresh = {p for p in late if p not in train_keys}
    assert train.num_edges == len(train_keys)
    assert len(test) == len(fresh)
    assert dropped == (n_train_raw - len(train_keys)) + (len(late) - len(fresh))
    assert train.app_days.max() <= boundary
    test_pairs = set(zip(test.users.tolist(), test.apps.tolist()))
    assert not (test_pairs & train_keys)


def test_id_map_round_trip(tmp_path):
    ids = np.array([42, 7, 1000, 3])
    write_id_map(tmp_path / "m.tsv", ids)
    assert read_id_map(tmp_path / "m.tsv").tolist() == ids.tolist()


def test_graph_arrays_are_read_only(fig2_graph):
    with pytest.raises(ValueError):
        fig2_graph.app_users[0] = 5
