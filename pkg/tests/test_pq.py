import numpy as np
import pytest

from tools.search.kmeans import train_kmeans
from tools.search.pq import (
    train_pq, encode, decode, adc_table, adc_distance, adc_distances, memory_bytes, compression_ratio,
    save_codebook, load_codebook, save_codes, load_codes
)


@pytest.fixture(scope='module')
def vectors():
    return np.random.default_rng(0).standard_normal((10000, 16)).astype(np.float32)


@pytest.fixture(scope='module')
def codebook(vectors):
    return train_pq(vectors, M=8, n_codewords=256, iters=10, seed=0)


def test_objective_never_increases(codebook):
    trace = np.array(codebook.objective_trace)

    assert len(trace) > 1
    assert np.all(np.diff(trace) <= 1e-6 * trace[:-1])


def test_kmeans_with_fewer_points_than_clusters():
    points = np.array([[0.0, 0.0], [1.0, 1.0], [0.0, 0.0]])

    result = train_kmeans(points, n_clusters=4, iters=5)

    assert result.centroids.shape == (4, 2)
    assert result.objective_trace[-1] == 0


def test_adc_matches_distance_to_reconstruction(codebook, vectors):
    rng = np.random.default_rng(1)

    codes = encode(codebook, vectors[:1000])
    reconstructions = decode(codebook, codes).astype(np.float64)

    for i in rng.choice(1000, 50, replace=False):
        query = rng.standard_normal(16).astype(np.float32)
        table = adc_table(codebook, query)

        exact = np.sum((reconstructions - query.astype(np.float64)) ** 2, axis=1)
        approx = adc_distances(table, codes)

        np.testing.assert_allclose(approx, exact, rtol=1e-4)
        assert adc_distance(table, codes[i]) == pytest.approx(exact[i], rel=1e-4)


def test_encode_picks_the_nearest_codeword(codebook, vectors):
    codes = encode(codebook, vectors[:200])
    reconstructions = decode(codebook, codes)

    errors = np.sum((reconstructions - vectors[:200]) ** 2, axis=1)
    alternatives = decode(codebook, (codes.astype(np.int64) + 1) % 256)

    assert np.all(errors <= np.sum((alternatives - vectors[:200]) ** 2, axis=1) + 1e-5)


def test_code_size_and_memory_ratio():
    vectors = np.random.default_rng(2).standard_normal((300, 256)).astype(np.float32)

    cb = train_pq(vectors, M=128, n_codewords=256, iters=2)
    codes = encode(cb, vectors[:10])

    assert cb.code_size == 128
    assert codes.shape == (10, 128)
    assert codes.dtype == np.uint8

    assert compression_ratio(1024, 128) == 32
    assert memory_bytes(1000, 1024, 128, quantized=False) / memory_bytes(1000, 1024, 128, quantized=True) == 32
    assert memory_bytes(1000, 1024, 128, quantized=True) == 128_000


def test_invalid_settings():
    vectors = np.zeros((10, 10), dtype=np.float32)

    with pytest.raises(ValueError, match='divisible'):
        train_pq(vectors, M=3)

    with pytest.raises(ValueError, match='n_codewords'):
        train_pq(vectors, M=2, n_codewords=300)

    with pytest.raises(ValueError, match='metric'):
        train_pq(vectors, M=2, metric='hamming')


def test_cosine_codebook_halves_to_one_minus_cos():
    vectors = np.random.default_rng(3).standard_normal((2000, 8)).astype(np.float32)

    cb = train_pq(vectors, M=4, n_codewords=256, iters=10, metric='cosine')
    codes = encode(cb, vectors[:20])

    unit = vectors[:20] / np.linalg.norm(vectors[:20], axis=1, keepdims=True)
    approx = adc_distances(adc_table(cb, vectors[0]), codes) / 2

    errors = np.abs(approx - (1 - unit @ unit[0]))

    assert errors.mean() < 0.05
    assert errors.max() < 0.15


def test_inner_product_tables_are_negated_dot_products(vectors):
    cb = train_pq(vectors[:2000], M=4, n_codewords=64, iters=5, metric='ip')
    codes = encode(cb, vectors[:5])

    query = vectors[10]
    expected = -decode(cb, codes).astype(np.float64) @ query.astype(np.float64)

    np.testing.assert_allclose(adc_distances(adc_table(cb, query), codes), expected, rtol=1e-4, atol=1e-6)


def test_save_and_load(codebook, vectors, tmp_path):
    save_codebook(codebook, str(tmp_path / 'cb.pqcb'))
    loaded = load_codebook(str(tmp_path / 'cb.pqcb'))

    np.testing.assert_array_equal(loaded.codewords, codebook.codewords)
    assert loaded.metric == codebook.metric

    codes = encode(codebook, vectors[:7])
    save_codes(codes, str(tmp_path / 'codes.pqc'))

    np.testing.assert_array_equal(load_codes(str(tmp_path / 'codes.pqc')), codes)
