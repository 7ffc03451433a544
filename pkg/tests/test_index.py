import numpy as np
import pytest

from tools.search.index import (
    IndexConfig, FLAT, IVF, n_clusters, top_k, brute_force_search, build_token_index, search,
    search_with_ops, recall_at_k, save_index, load_index
)
from tools.search.pq import train_pq, encode, METRICS


@pytest.fixture(scope='module')
def keys():
    return np.random.default_rng(0).standard_normal((3000, 16)).astype(np.float32)


@pytest.fixture(scope='module')
def queries():
    return np.random.default_rng(1).standard_normal((20, 16)).astype(np.float32)


def ids(hits):
    return [h.entry_id for h in hits]


def test_nlist_formula():
    assert n_clusters(40000) == 800
    assert n_clusters(36_000_000) == 24000
    assert n_clusters(100) == 3
    assert n_clusters(10) == 1


def test_top_k_breaks_ties_by_position():
    distances = np.array([0.5, 0.1, 0.5, 0.1, 0.3])

    assert top_k(distances, 3).tolist() == [1, 3, 4]
    assert top_k(distances, 4).tolist() == [1, 3, 4, 0]
    assert top_k(distances, 10).tolist() == [1, 3, 4, 0, 2]
    assert top_k(np.zeros(0), 3).tolist() == []


@pytest.mark.parametrize('metric', METRICS)
def test_flat_search_is_exact(keys, queries, metric):
    index = build_token_index(keys, IndexConfig(metric=metric))

    assert index.kind == FLAT

    for query in queries:
        hits, ops = search_with_ops(index, query, 10)
        oracle = brute_force_search(keys, query, 10, metric)

        assert ids(hits) == ids(oracle)
        assert [h.distance for h in hits] == [h.distance for h in oracle]
        assert ops == len(keys)


def test_ivf_scanning_every_list_equals_flat(keys, queries):
    config = IndexConfig(metric='l2', freq_threshold=100)

    ivf = build_token_index(keys, config)
    flat = build_token_index(keys, IndexConfig(metric='l2'))

    assert ivf.kind == IVF
    assert ivf.nlist == n_clusters(len(keys)) == 100
    assert sorted(ivf.list_entries.tolist()) == list(range(len(keys)))

    for query in queries:
        hits, ops = search_with_ops(ivf, query, 10, nprobe=ivf.nlist)

        assert ids(hits) == ids(search(flat, query, 10))
        assert ops == ivf.nlist + len(keys)


def test_recall_grows_as_more_lists_are_scanned(keys, queries):
    ivf = build_token_index(keys, IndexConfig(metric='l2', freq_threshold=100, kmeans_iters=10))

    assert ivf.kind == IVF

    list_counts = [1, 4, 16, ivf.nlist]

    recalls = np.array([
        [
            recall_at_k(search(ivf, q, 10, nprobe=nprobe), brute_force_search(keys, q, 10, 'l2'))
            for nprobe in list_counts
        ]
        for q in queries
    ])

    # nearer lists are scanned first, so every query only gains candidates
    assert np.all(np.diff(recalls, axis=1) >= 0)
    assert np.all(recalls[:, -1] == 1)
    assert recalls[:, 0].mean() < 1


def test_ivf_scans_only_the_nearest_lists(keys, queries):
    ivf = build_token_index(keys, IndexConfig(metric='cosine', freq_threshold=100))

    _, ops = search_with_ops(ivf, queries[0], 5, nprobe=4)

    assert ops < ivf.nlist + len(keys)


def test_quantized_flat_index(keys, queries):
    cb = train_pq(keys, M=8, n_codewords=256, iters=10, metric='l2')
    index = build_token_index(encode(cb, keys), IndexConfig(metric='l2'), codebook=cb)

    assert index.quantized
    assert index.dim == 16

    hits = search(index, queries[0], 50)
    oracle = brute_force_search(keys, queries[0], 10, 'l2')

    assert recall_at_k(hits, oracle) >= 0.5


def test_codebook_metric_must_match(keys):
    cb = train_pq(keys[:500], M=4, n_codewords=16, iters=2, metric='l2')

    with pytest.raises(ValueError, match='cannot serve'):
        build_token_index(encode(cb, keys[:10]), IndexConfig(metric='cosine'), codebook=cb)


def test_query_dim_mismatch(keys):
    index = build_token_index(keys, IndexConfig())

    with pytest.raises(ValueError, match='Query dim 8'):
        search(index, np.zeros(8), 3)


def test_save_and_load(keys, queries, tmp_path):
    ivf = build_token_index(keys, IndexConfig(metric='ip', freq_threshold=100))
    path = str(tmp_path / 'token_7.idx')

    save_index(ivf, path)
    loaded = load_index(path)

    assert loaded.kind == IVF
    assert loaded.metric == 'ip'
    assert loaded.nlist == ivf.nlist

    for query in queries[:5]:
        assert ids(search(loaded, query, 10, nprobe=8)) == ids(search(ivf, query, 10, nprobe=8))


def test_recall_at_k():
    oracle = brute_force_search(np.eye(4), np.array([1, 0, 0, 0]), 2, 'l2')

    assert recall_at_k(oracle, oracle) == 1
    assert recall_at_k([], oracle) == 0
    assert recall_at_k([], []) == 1


@pytest.mark.slow
def test_ivf_recall_on_gaussian_vectors():
    rng = np.random.default_rng(0)

    data = rng.standard_normal((100_000, 8)).astype(np.float32)
    queries = rng.standard_normal((100, 8)).astype(np.float32)

    index = build_token_index(data, IndexConfig(metric='l2', freq_threshold=30000))

    assert index.kind == IVF
    assert index.nlist == n_clusters(100_000)

    recall = np.mean([
        recall_at_k(search(index, q, 10, nprobe=32), brute_force_search(data, q, 10, 'l2'))
        for q in queries
    ])

    assert recall >= 0.85
