import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hinspec.eval import (
    EvalResult,
    _pair_from_index,
    class_links,
    classify,
    cosine_matrix,
    link_predict,
    random_label_baseline,
)


def ids(n):
    return tuple(f"v{i:04d}" for i in range(n))


def blobs(n=200, seed=0):
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 2
    x = rng.normal(size=(n, 5)) + 4.0 * y[:, None]
    return (ids(n), x), {v: f"c{c}" for v, c in zip(ids(n), y)}


def test_separable_blobs():
    emb, labels = blobs()
    r = classify(emb, labels, repeats=5)
    assert r.mean("macro_f1") >= 0.95
    assert r.config["classes"] == ["c0", "c1"]


def test_random_labels_near_chance():
    rng = np.random.default_rng(1)
    n = 400
    labels = {v: f"c{c}" for v, c in zip(ids(n), rng.integers(0, 4, n))}
    r = classify((ids(n), rng.normal(size=(n, 8))), labels, repeats=5)
    assert abs(r.mean("macro_f1") - 0.25) <= 0.1


def test_one_hot_embedding_is_perfect():
    n = 60
    y = np.arange(n) % 3
    labels = {v: f"c{c}" for v, c in zip(ids(n), y)}
    r = classify((ids(n), np.eye(3)[y]), labels, repeats=3)
    for name in ("macro_f1", "micro_f1", "macro_jaccard", "micro_jaccard"):
        assert r.mean(name) == 1.0


def test_small_classes_excluded_and_errors():
    emb, labels = blobs(40)
    labels = dict(labels)
    labels["v0000"] = "lonely"
    with pytest.warns(RuntimeWarning, match="lonely"):
        r = classify(emb, labels, repeats=2)
    assert r.config["excluded_classes"] == ["lonely"]
    with pytest.raises(ValueError):
        classify(emb, {})
    with pytest.raises(ValueError):
        classify(emb, {v: "c" for v in emb[0]})
    with pytest.raises(ValueError):
        classify(emb, labels, split_ratio=1.0)


def test_multi_label_tasks():
    n = 120
    rng = np.random.default_rng(2)
    a = rng.random(n) < 0.5
    b = rng.random(n) < 0.5
    x = np.column_stack([a, b]).astype(float) + rng.normal(scale=0.05, size=(n, 2))
    labels = {v: [c for c, on in (("a", a[i]), ("b", b[i])) if on] for i, v in enumerate(ids(n))}
    r = classify((ids(n), x), labels, repeats=3)
    assert r.config["multi_label"]
    assert r.mean("macro_f1") > 0.95


def test_classification_is_seeded_and_thread_independent():
    emb, labels = blobs(80, seed=4)
    a = classify(emb, labels, repeats=4, seed=9)
    b = classify(emb, labels, repeats=4, seed=9, threads=3)
    assert a.per_repeat == b.per_repeat


def test_shuffled_labels_drop_to_prior():
    emb, labels = blobs(300, seed=6)
    keys = sorted(labels)
    perm = np.random.default_rng(0).permutation(len(keys))
    shuffled = {keys[i]: labels[keys[j]] for i, j in enumerate(perm)}
    r = classify(emb, shuffled, repeats=10)
    mean, std = r.metrics["macro_f1"]
    assert abs(mean - 0.5) <= 2 * std + 0.05


def test_metrics_in_unit_interval():
    emb, labels = blobs(50, seed=3)
    r = classify(emb, labels, repeats=3)
    for m, s in r.metrics.values():
        assert 0.0 <= m <= 1.0 and s >= 0.0


def test_result_json_and_tsv(tmp_path):
    emb, labels = blobs(40)
    r = classify(emb, labels, repeats=2)
    r.write(tmp_path / "r.json", tmp_path / "r.tsv")
    data = json.loads((tmp_path / "r.json").read_text())
    assert data["task"] == "classification"
    assert set(data["metrics"]["macro_f1"]) == {"mean", "std"}
    lines = (tmp_path / "r.tsv").read_text().splitlines()
    assert len(lines) == 3 and lines[0].startswith("repeat\t")


def test_random_label_baseline(recwarn):
    _, labels = blobs(100)
    r = random_label_baseline(labels, repeats=3)
    assert r.mean("macro_f1") < 0.7


# -- link prediction -----------------------------------------------------------


def clique_fixture(sizes=(4, 5, 6)):
    n = sum(sizes)
    a = np.zeros((n, n))
    labels = {}
    pos = 0
    for c, s in enumerate(sizes):
        a[pos : pos + s, pos : pos + s] = 1
        for i in range(pos, pos + s):
            labels[ids(n)[i]] = f"c{c}"
        pos += s
    np.fill_diagonal(a, 0)
    return (ids(n), a), labels


def test_clique_precision_is_perfect():
    emb, labels = clique_fixture((5, 5, 5))
    r = link_predict(emb, class_links(labels), K=4)
    assert r.mean("precision@4") == 1.0 and r.mean("recall@4") == 1.0


def test_random_embedding_precision_scale():
    n = 400
    rng = np.random.default_rng(0)
    perm = rng.permutation(n)
    links = [(ids(n)[perm[i]], ids(n)[perm[i + 1]]) for i in range(0, n, 2)]
    r = link_predict((ids(n), rng.normal(size=(n, 16))), links, K=10)
    assert r.mean("precision@10") == pytest.approx(1 / (n - 1), abs=0.01)


def test_recall_is_one_when_all_candidates_returned():
    emb, labels = clique_fixture()
    n = len(emb[0])
    rng = np.random.default_rng(3)
    r = link_predict((emb[0], rng.normal(size=(n, 3))), class_links(labels), K=[n - 1, n + 5])
    assert r.mean(f"recall@{n - 1}") == 1.0 and r.mean(f"recall@{n + 5}") == 1.0


def test_precision_and_recall_monotone_in_k():
    ks = [1, 2, 5, 10, 20, 50]
    p = np.zeros(len(ks))
    for seed in range(5):
        rng = np.random.default_rng(seed)
        n = 300
        y = rng.integers(0, 5, n)
        labels = {v: f"c{c}" for v, c in zip(ids(n), y)}
        x = rng.normal(size=(n, 6)) + np.eye(6)[y] * 3.0
        r = link_predict((ids(n), x), class_links(labels), K=ks)
        p += [r.mean(f"precision@{k}") for k in ks]
        rc = [r.mean(f"recall@{k}") for k in ks]
        assert all(a <= b for a, b in zip(rc, rc[1:]))
    assert all(a >= b for a, b in zip(p, p[1:]))


def test_link_ties_and_zero_rows():
    vid = ids(4)
    rows = np.array([[1.0, 0.0], [0.0, 0.0], [1.0, 0.0], [1.0, 0.0]])
    np.testing.assert_array_equal(cosine_matrix(rows)[1], 0.0)
    # v0 ties with v2 and v3; the lower index wins
    r = link_predict((vid, rows), [(vid[0], vid[3])], K=1)
    assert r.config["n_sources"] == 2 and r.config["n_excluded"] == 2
    assert r.mean("precision@1") == 0.5
    with pytest.raises(ValueError):
        link_predict((vid, rows), [(vid[0], vid[1])], K=0)
    with pytest.raises(ValueError):
        link_predict((vid, rows), [(vid[0], "nope")], K=1)
    with pytest.raises(ValueError):
        link_predict((vid, rows), [], K=1)


# -- class links ---------------------------------------------------------------


def test_class_links_examples():
    assert class_links({"a": "x", "b": "x", "c": "x"}) == [("a", "b"), ("a", "c"), ("b", "c")]
    assert class_links({"a": "x", "b": "y"}) == []


def test_class_links_cap_is_exact_and_seeded():
    labels = {f"v{i:05d}": "big" for i in range(10_000)}
    a = class_links(labels, cap=100_000, seed=3)
    assert len(a) == 100_000
    assert a == class_links(labels, cap=100_000, seed=3)
    assert a != class_links(labels, cap=100_000, seed=4)
    assert all(u < v for u, v in a[:1000])


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 300))
def test_pair_decoding_is_a_bijection(m):
    total = m * (m - 1) // 2
    i, j = _pair_from_index(np.arange(total), m)
    expected = np.array([(a, b) for a in range(m) for b in range(a + 1, m)])
    np.testing.assert_array_equal(np.column_stack([i, j]), expected)


def test_eval_result_mean():
    r = EvalResult("x", {"f": (0.5, 0.1)}, {})
    assert r.mean("f") == 0.5
    assert r.to_json()["metrics"] == {"f": {"mean": 0.5, "std": 0.1}}
