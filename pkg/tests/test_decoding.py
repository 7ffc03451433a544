import math

import numpy as np
import pytest

from tools.datastore.cache import KeyStore
from tools.datastore.retrieval import TargetDatastore, RetrievalConfig, make_target_datastore
from tools.decoding.beam import DecodeConfig, Hypothesis, beam_decode, step_distribution, BASE, FAST
from tools.decoding.distribution import SparseDistribution, knn_distribution, interpolate
from tools.decoding.models import BaseModelStep, LexicalModel, UniformModel
from tools.general import OpCounter
from tools.text.corpus import EOS_ID
from tools.text.representations import SyntheticEmbedder


def datastore(keys, tokens):
    size = len(tokens)

    return TargetDatastore(
        np.asarray(tokens, dtype=np.int64),
        KeyStore(np.asarray(keys, dtype=np.float32)),
        np.zeros(size, dtype=np.int64),
        np.zeros((size, 2), dtype=np.int64),
        np.stack([np.zeros(size), np.arange(size)], axis=1).astype(np.int64)
    )


def exhaustive_knn(query, keys, tokens, k, temperature):
    """
    Sorts every entry by squared L2 distance and softmaxes the first k
    """
    scored = sorted(
        (sum((float(a) - float(b)) ** 2 for a, b in zip(key, query)), i)
        for i, key in enumerate(keys)
    )[:k]

    weights = [math.exp(-d / temperature) for d, _ in scored]
    total = sum(weights)

    probs = {}

    for (_, i), w in zip(scored, weights):
        probs[int(tokens[i])] = probs.get(int(tokens[i]), 0) + w / total

    return probs


def test_knn_distribution_matches_an_exhaustive_softmax():
    rng = np.random.default_rng(0)

    for _ in range(1000):
        size = int(rng.integers(1, 200))
        dim = int(rng.integers(1, 17))
        k = int(rng.integers(1, 65))
        temperature = float(rng.choice([0.5, 1.0, 2.0]))

        keys = rng.standard_normal((size, dim)).astype(np.float32)
        tokens = rng.integers(3, 30, size)
        query = rng.standard_normal(dim).astype(np.float32)

        p = knn_distribution(query, datastore(keys, tokens), k, temperature, metric='l2')
        oracle = exhaustive_knn(query, keys, tokens, k, temperature)

        assert set(p.to_dict()) == set(oracle)

        for token, prob in oracle.items():
            assert p.get(token) == pytest.approx(prob, abs=1e-6)


def test_knn_distribution_sums_to_one_and_counts_work():
    keys = np.eye(4)
    counter = OpCounter()

    p = knn_distribution(np.array([1, 0, 0, 0]), datastore(keys, [7, 7, 8, 9]), 2, 1.0, 'cosine', counter)

    assert p.total() == pytest.approx(1)
    assert counter.total == 4
    assert set(p.to_dict()) == {7}


def test_knn_distribution_worked_example():
    # squared distances 0 and ln 2 give weights 1 and 1/2
    ds = datastore([[0.0], [math.sqrt(math.log(2))]], [5, 7])

    p = knn_distribution(np.array([0.0]), ds, 2, 1.0, metric='l2')

    assert p.get(5) == pytest.approx(2 / 3, abs=1e-6)
    assert p.get(7) == pytest.approx(1 / 3, abs=1e-6)


def test_low_temperature_puts_all_mass_on_the_nearest_entry():
    rng = np.random.default_rng(1)

    for _ in range(200):
        size = int(rng.integers(2, 100))
        keys = rng.standard_normal((size, 8)).astype(np.float32)
        tokens = rng.integers(3, 30, size)

        nearest = int(rng.integers(size))
        query = keys[nearest] + 1e-4 * rng.standard_normal(8).astype(np.float32)

        p = knn_distribution(query, datastore(keys, tokens), int(rng.integers(1, size + 1)), 1e-3, metric='l2')

        assert np.all(np.isfinite(p.probs))
        assert p.argmax() == tokens[nearest]
        assert p.get(int(tokens[nearest])) == pytest.approx(1, abs=1e-6)


def test_adding_an_entry_never_lowers_its_token_probability():
    rng = np.random.default_rng(2)

    for _ in range(300):
        size = int(rng.integers(1, 60))
        keys = rng.standard_normal((size, 4)).astype(np.float32)
        tokens = rng.integers(3, 10, size)
        query = rng.standard_normal(4).astype(np.float32)
        k = int(rng.integers(1, 70))

        copied = int(rng.integers(size))
        token = int(tokens[copied])

        before = knn_distribution(query, datastore(keys, tokens), k, 1.0, metric='l2')
        after = knn_distribution(
            query,
            datastore(np.vstack([keys, keys[copied]]), np.append(tokens, token)),
            k, 1.0, metric='l2'
        )

        assert after.get(token) >= before.get(token) - 1e-9


def test_knn_distribution_rejects_bad_arguments():
    ds = datastore(np.eye(2), [3, 4])

    with pytest.raises(ValueError, match='Temperature'):
        knn_distribution(np.ones(2), ds, 1, 0.0)

    with pytest.raises(ValueError, match='k must be'):
        knn_distribution(np.ones(2), ds, 0, 1.0)

    with pytest.raises(ValueError, match='empty datastore'):
        knn_distribution(np.ones(2), TargetDatastore.empty(2), 1, 1.0)


def test_sparse_distribution():
    p = SparseDistribution.aggregate(np.array([5, 3, 5]), np.array([0.25, 0.5, 0.25]))

    assert p.to_dict() == {3: 0.5, 5: 0.5}
    assert p.argmax() == 3
    assert p.get(4) == 0

    with pytest.raises(ValueError, match='sorted and unique'):
        SparseDistribution(np.array([3, 3]), np.array([0.5, 0.5]))


def test_interpolation():
    p_mt = SparseDistribution.from_dict({3: 0.5, 4: 0.5})
    p_knn = SparseDistribution.from_dict({4: 0.25, 5: 0.75})

    mixed = interpolate(p_mt, p_knn, 0.5)

    assert mixed.to_dict() == pytest.approx({3: 0.25, 4: 0.375, 5: 0.375})
    assert mixed.total() == pytest.approx(1)

    assert interpolate(p_mt, p_knn, 0) is p_mt
    assert interpolate(p_mt, p_knn, 1) is p_knn
    assert interpolate(p_mt, SparseDistribution.empty(), 0.7) is p_mt

    with pytest.raises(ValueError, match='Interpolation weight'):
        interpolate(p_mt, p_knn, 1.5)


def test_empty_datastore_falls_back_to_the_base_model():
    p_mt = SparseDistribution.from_dict({3: 1.0})
    step = BaseModelStep(p_mt, np.ones(8))

    p, ops = step_distribution(step, TargetDatastore.empty(8), DecodeConfig(lam=0.9))

    assert p is p_mt
    assert ops == 0


def test_decode_config_validation():
    assert DecodeConfig(max_len=256, max_len_a=1.0, max_len_b=5).max_length(10) == 15
    assert DecodeConfig(max_len=12).max_length(10) == 12

    for kwargs in ({'lam': -0.1}, {'temperature': 0}, {'k': 0}, {'beam': 0}, {'mode': 'turbo'}, {'metric': 'dot'}):
        with pytest.raises(ValueError):
            DecodeConfig(**kwargs)


def test_hypothesis_normalization():
    assert Hypothesis([4, 5], -3.0, finished=True).normalized_score == -1.0
    assert Hypothesis([], -2.0).normalized_score == -2.0


def decode_all(model, test_set, cs, indexes, cfg):
    outputs = []

    for source in test_set.sources[:100]:
        ds = None

        if cfg.mode == FAST:
            ds = make_target_datastore(
                source, model.embedder.source_matrix([source]), cs, indexes, RetrievalConfig(c=16)
            )

        outputs.append(beam_decode(source, model, ds, cfg)[0].tokens)

    return outputs


def test_lambda_zero_reproduces_the_base_model(disambiguation, disambiguation_stores):
    _, test_set, _, _, model = disambiguation
    cs, indexes = disambiguation_stores

    base = decode_all(model, test_set, cs, indexes, DecodeConfig(mode=BASE, beam=2))
    fast = decode_all(model, test_set, cs, indexes, DecodeConfig(mode=FAST, lam=0.0, k=8, beam=2))

    assert fast == base


def test_lambda_one_ignores_the_base_model(disambiguation, disambiguation_stores):
    corpus, test_set, _, _, model = disambiguation
    cs, indexes = disambiguation_stores

    uniform = UniformModel(corpus, model.embedder)
    cfg = DecodeConfig(mode=FAST, lam=1.0, k=8, beam=1)

    assert decode_all(model, test_set, cs, indexes, cfg) == decode_all(uniform, test_set, cs, indexes, cfg)


def test_base_decoding_stops_after_the_source_length(disambiguation):
    corpus, test_set, _, _, model = disambiguation

    source = test_set.sources[0]
    hypotheses = beam_decode(source, model, None, DecodeConfig(mode=BASE, beam=3))

    assert len(hypotheses) == 3
    assert all(h.finished and len(h.tokens) == len(source) for h in hypotheses)
    assert [h.normalized_score for h in hypotheses] == sorted((h.normalized_score for h in hypotheses), reverse=True)


def test_step_work_is_bounded_by_the_datastore(disambiguation, disambiguation_stores):
    _, test_set, _, _, model = disambiguation
    cs, indexes = disambiguation_stores

    source = test_set.sources[1]
    ds = make_target_datastore(source, model.embedder.source_matrix([source]), cs, indexes, RetrievalConfig(c=16))

    counter = OpCounter()
    best = beam_decode(source, model, ds, DecodeConfig(mode=FAST, k=8, beam=2), counter)[0]

    assert all(ops <= len(ds) for ops in best.per_step_ops)
    assert all(ops <= 2 * len(ds) for ops in counter.steps)
    assert counter.total == sum(counter.steps)


def test_modes_that_search_need_a_datastore(disambiguation):
    _, test_set, _, _, model = disambiguation

    with pytest.raises(ValueError, match='needs a datastore'):
        beam_decode(test_set.sources[0], model, None, DecodeConfig(mode=FAST))


def test_eos_after_the_source_end(toy):
    corpus = toy[0]

    model = LexicalModel(corpus, SyntheticEmbedder(8))
    step = model.step([4, 5], [7, 8])

    assert step.p_mt.to_dict() == {EOS_ID: 1.0}
    assert step.hidden.shape == (8,)
