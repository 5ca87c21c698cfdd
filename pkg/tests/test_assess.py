import json

import numpy as np
import pytest

from helpers import random_graphs
from hinspec.assess import (
    AssessConfig,
    InsufficientSpectrumError,
    assess,
    assess_projections,
    cheeger_check,
    connected_components,
    curvature_score,
    eigenvector_on,
    fpp,
    lc3,
    nodal_domains,
    select_dims,
    write_spectrum_curves,
)
from hinspec.hin import load_hin
from hinspec.metagraph import ProjectedNetwork
from hinspec.spectral import Spectrum, spectrum

PATH3 = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=float)
K3 = np.ones((3, 3)) - np.eye(3)


def pn(a, ids=None, name="<dense>"):
    return ProjectedNetwork.from_dense(a, ids, name)


def fake_spectrum(values):
    v = np.asarray(values, dtype=float)
    return Spectrum(v, np.eye(len(v)), tuple(map(str, range(len(v)))), np.zeros(len(v)), ())


def path(n):
    a = np.zeros((n, n))
    i = np.arange(n - 1)
    a[i, i + 1] = a[i + 1, i] = 1
    return a


def edges_graph(pairs, n, ids=None):
    a = np.zeros((n, n))
    for u, v in pairs:
        a[u, v] = a[v, u] = 1
    return pn(a, ids)


def test_fpp_definition():
    assert fpp(fake_spectrum([0, 0, 0.3, 0.7])) == (2, False)
    assert fpp(fake_spectrum([0, 0.4, 1.0])) == (1, False)
    assert fpp(fake_spectrum([0, 0, 0])) == (3, True)


def test_fpp_edgeless_projection_reported_saturated():
    report = assess_projections([pn(np.zeros((3, 3)), name="X-Y-X")])
    e = report.entries[0]
    assert e.fpp == 3 and e.fpp_saturated and e.curvature == 0.0 and e.selected_dims == []


def test_connected_components():
    comps = connected_components(edges_graph([(0, 1), (2, 3)], 4))
    assert [c.tolist() for c in comps] == [[0, 1], [2, 3]]
    assert len(connected_components(pn(K3))) == 1
    iso = edges_graph([(1, 2)], 4)
    assert len(connected_components(iso)) == 3
    assert len(connected_components(iso, drop_isolated=True)) == 1


def test_fpp_equals_component_count_on_random_graphs():
    for g in random_graphs(21, 20, n_max=120):
        comps = connected_components(g, drop_isolated=True)
        s = spectrum(g, min(sum(map(len, comps)), len(comps) + 3))
        assert fpp(s).p == len(comps)


def test_curvature_examples():
    assert curvature_score(spectrum(pn(K3), 3), m=2) == pytest.approx(1.5)
    assert curvature_score(spectrum(pn(PATH3), 3), m=2) == pytest.approx(1.5)
    long = curvature_score(spectrum(pn(path(50)), 3), m=2)
    # normalized path spectrum is 1 - cos(pi j / (n - 1))
    expected = np.mean(1 - np.cos(np.pi * np.arange(1, 3) / 49))
    assert long == pytest.approx(expected, abs=1e-9) and long < 0.01
    assert curvature_score(fake_spectrum([0, 0, 0]), m=2) == 0.0
    with pytest.raises(InsufficientSpectrumError):
        curvature_score(spectrum(pn(K3), 2), m=2)


def test_lc3_examples():
    g = pn(K3, ["1", "2", "3"])
    assert lc3(g, g) == ["1", "2", "3"]
    ids = ["1", "2", "3", "4"]
    first = edges_graph([(0, 1), (2, 3)], 4, ids)
    second = edges_graph([(0, 1), (1, 2)], 4, ids)
    assert lc3(first, second) == ["1", "2"]
    left = edges_graph([(0, 1)], 4, ids)
    right = edges_graph([(2, 3)], 4, ids)
    assert lc3(left, right) == []


def test_lc3_is_connected_in_both_with_single_zero():
    graphs = random_graphs(31, 12, n_max=60, densities=(0.03, 0.06, 0.1))
    for g1, g2 in zip(graphs[::2], graphs[1::2]):
        n = min(g1.n_vertices, g2.n_vertices)
        ids = tuple(map(str, range(n)))
        h1 = pn(g1.adjacency.toarray()[:n, :n] > 0, ids)
        h2 = pn(g2.adjacency.toarray()[:n, :n] > 0, ids)
        common = lc3(h1, h2)
        if not common:
            continue
        idx = [int(v) for v in common]
        for h in (h1, h2):
            sub = h.subnetwork(idx)
            assert len(connected_components(sub)) == 1
            s = spectrum(sub, min(len(idx), 3))
            assert int((s.eigenvalues < 1e-8).sum()) == 1


def test_nodal_domain_examples():
    d = nodal_domains(pn(PATH3), [1.0, 0.0, -1.0])
    assert d.domains == ((0,), (2,)) and d.signs == (1, -1)
    assert len(nodal_domains(pn(K3), [0.3, 0.5, 0.1])) == 1
    assert len(nodal_domains(pn(path(4)), [1.0, -1.0, 1.0, -1.0])) == 4
    with pytest.raises(ValueError):
        nodal_domains(pn(K3), [1.0, 2.0])


def test_cheeger_examples():
    g = pn(PATH3)
    s = spectrum(g, 3)
    f = eigenvector_on(g, s, 1)
    d = nodal_domains(g, f, zero_tol=1e-9)
    assert len(d) == 2
    ratio, holds = cheeger_check(g, d, s.eigenvalues[1])
    assert ratio == pytest.approx(1.0) and holds
    f0 = eigenvector_on(g, s, 0)
    assert cheeger_check(g, nodal_domains(g, f0), s.eigenvalues[0]) == (0.0, True)
    empty = nodal_domains(g, np.zeros(3))
    assert cheeger_check(g, empty, 0.5) == (0.0, True)


def test_cheeger_and_nodal_count_on_random_graphs():
    for g in random_graphs(41, 10, n_max=60, densities=(0.05, 0.1, 0.3), connected=True):
        s = spectrum(g, g.n_vertices)
        for i in range(s.k):
            f = eigenvector_on(g, s, i)
            d = nodal_domains(g, f, zero_tol=1e-8 * np.abs(f).max())
            assert cheeger_check(g, d, s.eigenvalues[i])[1]
            assert len(d) <= i + 1


def test_select_dims_examples():
    s = fake_spectrum([0, 0, 0.2, 0.8, 1.4])
    assert select_dims(s, 3) == [2, 3]
    assert select_dims(s, 1) == [2]
    with pytest.warns(RuntimeWarning):
        assert select_dims(fake_spectrum([0, 1.2, 1.5]), 3) == []


def planted_pair():
    """A connected community network and a fragmented random one over the same authors."""
    rng = np.random.default_rng(0)
    n = 60
    nodes = [f"a{i}\tA" for i in range(n)] + [f"p{i}\tP" for i in range(90)] + [f"t{i}\tT" for i in range(200)]
    edges = []
    for p in range(90):
        c = p % 3
        team = rng.choice(np.arange(c, n, 3), size=3, replace=False)
        edges += [f"a{int(a)}\tp{p}\twrites" for a in team]
    for a in range(n):
        edges.append(f"a{a}\tp{int(rng.choice(np.arange(a % 3, 90, 3)))}\twrites")
        edges.append(f"a{a}\tt{int(rng.integers(200))}\tuses")
    return load_hin(nodes, edges)


def test_connected_projection_ranks_first():
    h = planted_pair()
    report = assess(h, ["A-T-A", "A-P-A"], config=AssessConfig(k=20))
    assert report.ranking == ["A-P-A", "A-T-A"]
    good, bad = report.entry("A-P-A"), report.entry("A-T-A")
    assert good.fpp < bad.fpp
    for e in report.entries:
        assert e.fpp == e.component_count or e.fpp_saturated
        assert not set(e.selected_dims) & set(range(e.fpp))


def test_single_and_duplicate_metagraphs():
    h = planted_pair()
    single = assess(h, ["A-P-A"], config=AssessConfig(k=10))
    assert single.pairwise == []
    g = single.projections["A-P-A"]
    twin = ProjectedNetwork(g.vertex_ids, g.adjacency, "A-P-A copy")
    rep = assess_projections([g, twin], AssessConfig(k=10))
    a, b = rep.entries
    assert a.curvature == b.curvature and a.fpp == b.fpp
    largest = max(len(c) for c in connected_components(g, drop_isolated=True))
    assert rep.pairwise[0].lc3_size == largest
    assert rep.pairwise[0].curvature_first == rep.pairwise[0].curvature_second


def test_errors_are_annotated():
    h = planted_pair()
    with pytest.raises(Exception, match=r"\[A-X-A\]"):
        assess(h, ["A-X-A"])


def test_default_k_and_threads_agree(tmp_path):
    h = planted_pair()
    serial = assess(h, ["A-P-A", "A-T-A"])
    threaded = assess(h, ["A-P-A", "A-T-A"], config=AssessConfig(threads=2))
    assert serial.to_json() == threaded.to_json()
    serial.write(tmp_path / "r.json")
    data = json.loads((tmp_path / "r.json").read_text())
    assert data["ranking"] == serial.ranking
    paths = write_spectrum_curves(serial, tmp_path)
    assert sorted(p.split("/")[-1] for p in paths) == ["spectrum_A-P-A.tsv", "spectrum_A-T-A.tsv"]
    rows = (tmp_path / "spectrum_A-P-A.tsv").read_text().splitlines()
    assert rows[0].startswith("#") and rows[1].split("\t")[0] == "1"
