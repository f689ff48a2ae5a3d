import pytest

from ringformer.graph import load_graph_dir, validate
from ringformer.rings import bfs_rings
from ringformer.synthetic import SyntheticSpec, generate_synthetic_hin, recompute_labels, write_synthetic


@pytest.mark.parametrize("signal", ["ring-distance", "type-mix"])
def test_same_seed_same_files(tmp_path, signal):
    spec = SyntheticSpec(signal=signal, nodes_per_class=15, seed=4)
    write_synthetic(spec, tmp_path / "a")
    write_synthetic(spec, tmp_path / "b")
    for name in ("nodes.csv", "edges.csv", "features.csv", "labels.csv", "manifest.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    g = load_graph_dir(tmp_path / "a")
    assert validate(g) == []


def test_different_seed_differs():
    a, _ = generate_synthetic_hin(SyntheticSpec(nodes_per_class=10, seed=1))
    b, _ = generate_synthetic_hin(SyntheticSpec(nodes_per_class=10, seed=2))
    assert a.fingerprint() != b.fingerprint()


@pytest.mark.parametrize("signal", ["ring-distance", "type-mix"])
@pytest.mark.parametrize("noise", [0.0, 0.5])
def test_labels_follow_planted_signal(signal, noise):
    g, man = generate_synthetic_hin(SyntheticSpec(signal=signal, noise=noise, nodes_per_class=30, seed=7))
    targets = g.labeled_nodes
    assert g.labels[targets].tolist() == recompute_labels(man) == man["labels"]
    assert len(targets) == man["num_targets"] == 90
    if noise == 0.0:
        assert man["labels"] == man["intended"]


@pytest.mark.parametrize("signal", ["ring-distance", "type-mix"])
def test_signal_sits_where_manifest_says(signal):
    """Signal-type nodes at the signal ring carry one feature vector per planted class."""
    g, man = generate_synthetic_hin(SyntheticSpec(signal=signal, noise=0.4, nodes_per_class=20, seed=5))
    t = g.type_names.index(man["signal_type"])
    k = man["signal_ring"]
    all_rows = set()
    for i, u in enumerate(g.labeled_nodes):
        members = bfs_rings(g, int(u), k).rings[k][t]
        planted = man["planted"][i]
        assert len(members) == len(planted)
        rows = {g.features[v].tobytes() for v in members}
        assert len(rows) == len(set(planted))
        all_rows |= rows
    assert len(all_rows) == 3


def test_noise_free_ring_distance_is_separable_in_ring_two():
    g, man = generate_synthetic_hin(SyntheticSpec(nodes_per_class=20, seed=0))
    t = g.type_names.index(man["signal_type"])
    seen = {}
    for u, y in zip(g.labeled_nodes, g.labels[g.labeled_nodes]):
        members = bfs_rings(g, int(u), 2).rings[2][t]
        key = g.features[members].mean(axis=0).round(6).tobytes()
        seen.setdefault(key, set()).add(int(y))
    assert all(len(v) == 1 for v in seen.values())


@pytest.mark.parametrize("kw", [dict(signal="bogus"), dict(signal="type-mix", T=2), dict(noise=1.0),
                                dict(classes=1)])
def test_spec_validation(kw):
    with pytest.raises(ValueError):
        SyntheticSpec(**kw)
