import os

import numpy as np
import pytest

from tools.datastore.cache import build_caches
from tools.datastore.indexes import build_indexes
from tools.decoding.models import LexicalModel
from tools.evaluation.synthetic import toy_corpus, toy_representations, disambiguation_task
from tools.search.index import IndexConfig
from tools.text.corpus import ParallelCorpus, SentencePair, Vocabulary, SOURCE, TARGET
from tools.text.representations import ReprMatrix, SyntheticEmbedder, synthetic_embed

REPO_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
DEFAULT_CONFIG = os.path.join(REPO_ROOT, 'config', 'fast_knnmt.yml')

DISAMBIGUATION_DIM = 64
DISAMBIGUATION_WINDOW = 1

RANDOM_TYPES = 6
RANDOM_SENTENCES = 60
RANDOM_DIM = 8


@pytest.fixture
def default_config_path():
    return DEFAULT_CONFIG


@pytest.fixture
def toy():
    corpus, test_set = toy_corpus()
    src_reprs, tgt_reprs, queries = toy_representations(corpus)

    return corpus, test_set, src_reprs, tgt_reprs, queries


@pytest.fixture
def toy_stores(toy):
    corpus, _, src_reprs, tgt_reprs, _ = toy

    cs = build_caches(corpus, src_reprs, tgt_reprs)
    indexes = build_indexes(cs, IndexConfig(metric='cosine'))

    return cs, indexes


@pytest.fixture(scope='session')
def disambiguation():
    """
    Training corpus, test set, synthetic representations and a base model that is
    uniform over the observed translations of every source token
    """
    corpus, test_set = disambiguation_task()

    embedder = SyntheticEmbedder(DISAMBIGUATION_DIM, DISAMBIGUATION_WINDOW)

    src_reprs = synthetic_embed(corpus, SOURCE, DISAMBIGUATION_DIM, DISAMBIGUATION_WINDOW)
    tgt_reprs = synthetic_embed(corpus, TARGET, DISAMBIGUATION_DIM, DISAMBIGUATION_WINDOW)

    model = LexicalModel(corpus, embedder, uniform=True)

    return corpus, test_set, src_reprs, tgt_reprs, model


@pytest.fixture(scope='session')
def disambiguation_stores(disambiguation):
    corpus, _, src_reprs, tgt_reprs, _ = disambiguation

    cs = build_caches(corpus, src_reprs, tgt_reprs)

    return cs, build_indexes(cs, IndexConfig(metric='cosine'))


@pytest.fixture(scope='session')
def random_corpus():
    """
    Random sentences over a few token types, every position aligned to the same
    target position, with random 8-dim representations on both sides
    """
    rng = np.random.default_rng(11)

    src_words = [f's{i}' for i in range(RANDOM_TYPES)]
    tgt_words = [f't{i}' for i in range(RANDOM_TYPES)]

    src_sentences, tgt_sentences = [], []

    for _ in range(RANDOM_SENTENCES):
        length = int(rng.integers(3, 9))

        src_sentences.append([src_words[i] for i in rng.integers(0, RANDOM_TYPES, length)])
        tgt_sentences.append([tgt_words[i] for i in rng.integers(0, RANDOM_TYPES, length)])

    vocab_src = Vocabulary.build(src_sentences)
    vocab_tgt = Vocabulary.build(tgt_sentences)

    pairs = [
        SentencePair(
            src=vocab_src.encode(src), tgt=vocab_tgt.encode(tgt),
            alignment=[[j, j] for j in range(len(src))]
        )
        for src, tgt in zip(src_sentences, tgt_sentences)
    ]

    corpus = ParallelCorpus(pairs, vocab_src, vocab_tgt)
    lengths = corpus.sentence_lengths(SOURCE)

    src_reprs = ReprMatrix(SOURCE, rng.standard_normal((corpus.token_count(SOURCE), RANDOM_DIM)), lengths)
    tgt_reprs = ReprMatrix(TARGET, rng.standard_normal((corpus.token_count(TARGET), RANDOM_DIM)), lengths)

    return corpus, src_reprs, tgt_reprs


@pytest.fixture(scope='session')
def random_stores(random_corpus):
    corpus, src_reprs, tgt_reprs = random_corpus

    cs = build_caches(corpus, src_reprs, tgt_reprs)

    return cs, build_indexes(cs, IndexConfig(metric='l2'))
