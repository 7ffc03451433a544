import numpy as np
import pandas as pd
import pytest

from tools.data_structure import BenchReport, BenchResults
from tools.datastore.retrieval import RetrievalConfig
from tools.decoding.beam import DecodeConfig, BASE, FAST, VANILLA
from tools.decoding.models import LexicalModel
from tools.evaluation.bench import BenchContext, BenchGrid, run_bench, k_sweep, fast_step_bound, similarity_heatmap
from tools.evaluation.synthetic import neighbourhood_task, scaled_corpus
from tools.search.index import IndexConfig
from tools.search.pq import PQConfig
from tools.text.corpus import TestSet, SOURCE, TARGET
from tools.text.representations import SyntheticEmbedder, synthetic_embed


def test_only_a_small_neighbourhood_recovers_the_answer():
    sweep = k_sweep(neighbourhood_task(), [1, 4, 64]).set_index('k').accuracy

    assert sweep[1] == 0
    assert sweep[4] == 1
    assert sweep[64] == 0


def test_fast_step_bound():
    assert fast_step_bound(512, 20) == 10240


@pytest.fixture(scope='module')
def disambiguation_bench(disambiguation):
    corpus, test_set, src_reprs, tgt_reprs, model = disambiguation

    subset = TestSet(test_set.sources[:100], test_set.references[:100])

    context = BenchContext(
        corpus, src_reprs, tgt_reprs, model,
        index_config=IndexConfig(metric='cosine'),
        pq_config=PQConfig(M=16, n_codewords=256, iters=10)
    )

    grid = BenchGrid(
        modes=(BASE, FAST, VANILLA),
        cs=(8, 64),
        ks=(8,),
        quantize=(False, True),
        decode=DecodeConfig(lam=0.5, k=8, beam=1),
        retrieval=RetrievalConfig()
    )

    return context, subset, run_bench(context, subset, grid)


def test_bench_cells(disambiguation_bench):
    _, _, results = disambiguation_bench

    # per key format: base, fast at two c values, vanilla
    assert len(results) == 2 * 4
    assert {r.mode for r in results} == {BASE, FAST, VANILLA}
    assert all(r.sentences == 100 for r in results)


def test_fast_decoding_resolves_the_context(disambiguation_bench):
    _, _, results = disambiguation_bench

    base, = results.select(mode=BASE, quantized=False)
    fast, = results.select(mode=FAST, c=64, quantized=False)

    assert fast.token_accuracy >= 0.95
    assert base.token_accuracy <= 0.60
    assert fast.bleu > base.bleu


def test_larger_c_does_not_hurt(disambiguation_bench):
    """
    A larger c only adds entries, but those can outvote the right token at a few
    positions; the tolerance allows for such flips, not for a real accuracy loss
    """
    _, _, results = disambiguation_bench

    small, = results.select(mode=FAST, c=8, quantized=False)
    large, = results.select(mode=FAST, c=64, quantized=False)

    assert large.token_accuracy >= small.token_accuracy - 0.01
    assert large.mean_datastore_size > small.mean_datastore_size


def test_quantized_keys_keep_the_quality(disambiguation_bench):
    _, _, results = disambiguation_bench

    exact, = results.select(mode=FAST, c=64, quantized=False)
    quantized, = results.select(mode=FAST, c=64, quantized=True)

    assert quantized.token_accuracy >= exact.token_accuracy - 0.02


def test_distance_work(disambiguation, disambiguation_bench):
    corpus = disambiguation[0]
    _, subset, results = disambiguation_bench

    longest = max(len(s) for s in subset.sources)

    for report in results.select(mode=FAST):
        assert 0 < report.max_step_ops <= fast_step_bound(report.c, longest)
        assert report.mean_datastore_size <= report.c * longest
        assert report.speedup_vs_vanilla > 1

    for report in results.select(mode=VANILLA):
        assert report.max_step_ops == corpus.token_count(TARGET)
        assert report.speedup_vs_vanilla == pytest.approx(1)

    for report in results.select(mode=BASE):
        assert report.total_distance_ops == 0
        assert report.speedup_vs_vanilla is None


def test_similarity_heatmap(disambiguation_bench):
    context, subset, _ = disambiguation_bench

    source, reference = subset.sources[0], subset.references[0]
    heatmap = similarity_heatmap(context, source, reference, RetrievalConfig(c=64))

    assert heatmap.similarity.shape == (len(reference), len(heatmap.col_tokens))
    assert np.all(np.abs(heatmap.similarity) <= 1 + 1e-5)

    # the gold token's own keys are the most similar ones at most positions
    best = np.asarray(heatmap.col_tokens)[heatmap.similarity.argmax(axis=1)]
    assert np.mean(best == np.asarray(heatmap.row_tokens)) >= 0.8


def report(mode, ops, c=8):
    return BenchReport(
        mode=mode, c=c, k=8, metric='cosine', quantized=False, lam=0.5, sentences=2, tokens=10,
        retrieval_ops=0, decode_ops=ops, total_distance_ops=ops, max_step_ops=ops // 10,
        mean_datastore_size=ops / 10, per_step_ops={ops // 10: 10}, wall_ms=5.0
    )


def test_bench_results_export(tmp_path):
    results = BenchResults([report(VANILLA, 10000, c=0), report(FAST, 500), report(FAST, 2000, c=64)])
    results.fill_speedups()

    assert [r.speedup_vs_vanilla for r in results] == [1, 20, 5]

    path = str(tmp_path / 'bench' / 'reports.jsonl')
    results.to_jsonl(path)
    loaded = BenchResults.read_jsonl(path)

    assert [r.to_dict() for r in loaded] == [r.to_dict() for r in results]
    assert loaded.reports[1].per_step_ops == {50: 10}

    csv_path = str(tmp_path / 'bench' / 'reports.csv')
    results.to_csv(csv_path)
    frame = pd.read_csv(csv_path)

    assert len(frame) == 3
    assert 'per_step_ops' not in frame.columns
    assert frame.speedup_vs_vanilla.tolist() == [1, 20, 5]

    table = results.to_table()

    assert 'vanilla' in table and 'fast' in table
    assert BenchResults().to_table() == '(no bench reports)'


@pytest.mark.slow
def test_fast_scans_far_less_than_vanilla_on_a_million_tokens():
    corpus, test_set = scaled_corpus(n_tokens=1_000_000, n_test=2)
    assert corpus.token_count(SOURCE) == 1_000_000

    dim = 16
    embedder = SyntheticEmbedder(dim, window=1)

    context = BenchContext(
        corpus,
        synthetic_embed(corpus, SOURCE, dim, window=1),
        synthetic_embed(corpus, TARGET, dim, window=1),
        LexicalModel(corpus, embedder),
        index_config=IndexConfig(metric='cosine')
    )

    grid = BenchGrid(
        modes=(FAST, VANILLA),
        cs=(512,),
        ks=(8,),
        decode=DecodeConfig(k=8, beam=1),
        retrieval=RetrievalConfig(c=512)
    )

    results = run_bench(context, test_set, grid)

    fast, = results.select(mode=FAST)
    vanilla, = results.select(mode=VANILLA)

    assert fast.max_step_ops <= fast_step_bound(512, 20)
    assert vanilla.max_step_ops == 1_000_000
    assert vanilla.max_step_ops / fast.max_step_ops >= 1_000_000 / fast_step_bound(512, 20)
    assert fast.speedup_vs_vanilla > 50
    assert vanilla.wall_ms > fast.wall_ms
