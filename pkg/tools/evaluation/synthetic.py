"""
Synthetic corpora and tasks with a known ground truth:

    - the five-pair worked example with hand-placed representations
    - a disambiguation corpus where a token's translation depends on its left neighbour
    - a scaled corpus for counting distance computations at |S| ~ 1M
    - a neighbourhood task where only the first few neighbours carry the answer
"""
import logging

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from tools.datastore.cache import KeyStore
from tools.datastore.retrieval import TargetDatastore
from tools.text.corpus import ParallelCorpus, SentencePair, TestSet, Vocabulary, SOURCE, TARGET
from tools.text.representations import ReprMatrix

TOY_PAIRS = (
    ('A B C D', 'b c d a', '0-3 1-0 2-1 3-2'),
    ('B C D', 'c d e b', '0-3 1-0 2-1'),
    ('A B D E', 'a b c d e', '0-0 1-1 2-3 3-4'),
    ('B D E', 'b d e', '0-0 1-1 2-2'),
    ('D E F', 'd e f', '0-0 1-1 2-2')
)

TOY_TEST = 'B C E'
TOY_DIM = 8


def _build_corpus(src: List[List[str]], tgt: List[List[str]], alignments: List[np.ndarray]) -> ParallelCorpus:
    vocab_src = Vocabulary.build(src)
    vocab_tgt = Vocabulary.build(tgt)

    pairs = [
        SentencePair(src=vocab_src.encode(s), tgt=vocab_tgt.encode(t), alignment=a)
        for s, t, a in zip(src, tgt, alignments)
    ]

    return ParallelCorpus(pairs, vocab_src, vocab_tgt)


def _monotone(length: int) -> np.ndarray:
    return np.stack([np.arange(length), np.arange(length)], axis=1).astype(np.int64)


def toy_corpus() -> Tuple[ParallelCorpus, TestSet]:
    """
    :returns:       the five aligned toy pairs and the test input "B C E"
    """
    src = [s.split() for s, _, _ in TOY_PAIRS]
    tgt = [t.split() for _, t, _ in TOY_PAIRS]

    alignments = [
        np.array([[int(x) for x in link.split('-')] for link in a.split()], dtype=np.int64)
        for _, _, a in TOY_PAIRS
    ]

    corpus = _build_corpus(src, tgt, alignments)

    return corpus, TestSet([corpus.vocab_src.encode(TOY_TEST.split())])


def toy_representations(corpus: ParallelCorpus) -> Tuple[ReprMatrix, ReprMatrix, np.ndarray]:
    """
    Hand-placed keys: under cosine, the test query of B is closest to x12 then x21,
    C has only x13 and x22, and E is closest to x34 then x52 (x43 lies far away).

    :returns:       source representations, target representations, test query rows (3, 8)
    """
    eye = np.eye(TOY_DIM, dtype=np.float32)

    def row(*parts):
        return np.sum(parts, axis=0)

    # (sentence, position) zero-based -> key
    placed = {
        (0, 1): row(eye[0], 0.1 * eye[1]),
        (1, 0): row(eye[0], 0.2 * eye[1]),
        (2, 1): eye[1],
        (3, 0): row(eye[1], 0.1 * eye[2]),
        (0, 2): row(eye[2], 0.1 * eye[3]),
        (1, 1): row(eye[2], 0.2 * eye[3]),
        (2, 3): row(eye[4], 0.1 * eye[5]),
        (4, 1): row(eye[4], 0.2 * eye[5]),
        (3, 2): eye[5]
    }

    rng = np.random.default_rng(0)

    src_rows = []

    for i, pair in enumerate(corpus.pairs):
        for j in range(pair.n):
            src_rows.append(placed.get((i, j), eye[7] + 0.1 * rng.standard_normal(TOY_DIM).astype(np.float32)))

    tgt_rows = rng.standard_normal((corpus.token_count(TARGET), TOY_DIM)).astype(np.float32)

    queries = np.stack([eye[0], eye[2], eye[4]])

    return (
        ReprMatrix(SOURCE, np.stack(src_rows), corpus.sentence_lengths(SOURCE)),
        ReprMatrix(TARGET, tgt_rows, corpus.sentence_lengths(TARGET)),
        queries
    )


def _translate(tokens: np.ndarray, groups: np.ndarray) -> List[str]:
    """
    Token i becomes t{i}a after a group-0 left neighbour (or the sentence start), t{i}b otherwise
    """
    previous_group = np.r_[0, groups[tokens[:-1]]]

    return [f't{t}{"a" if g == 0 else "b"}' for t, g in zip(tokens, previous_group)]


def disambiguation_task(n_sentences: int = 2000,
                        n_test: int = 200,
                        vocab_size: int = 20,
                        min_len: int = 6,
                        max_len: int = 10,
                        seed: int = 0) -> Tuple[ParallelCorpus, TestSet]:
    """
    Source tokens s0..s{vocab_size-1} fall into two groups; every source token has two
    translations and the group of its left neighbour picks one. Alignments are monotone.
    """
    rng = np.random.default_rng(seed)
    groups = (np.arange(vocab_size) >= vocab_size // 2).astype(np.int64)

    def sample(count: int):
        src, tgt = [], []

        for _ in range(count):
            tokens = rng.integers(0, vocab_size, rng.integers(min_len, max_len + 1))

            src.append([f's{t}' for t in tokens])
            tgt.append(_translate(tokens, groups))

        return src, tgt

    src, tgt = sample(n_sentences)
    corpus = _build_corpus(src, tgt, [_monotone(len(s)) for s in src])

    test_src, test_tgt = sample(n_test)

    test_set = TestSet(
        [corpus.vocab_src.encode(s) for s in test_src],
        [corpus.vocab_tgt.encode(t) for t in test_tgt]
    )

    logging.info(
        f'Generated a disambiguation task: {len(corpus)} training pairs, '
        f'{len(test_set)} test sentences, {vocab_size} source tokens'
    )

    return corpus, test_set


def scaled_corpus(n_tokens: int = 1_000_000,
                  vocab_size: int = 1000,
                  sentence_length: int = 20,
                  n_test: int = 2,
                  seed: int = 0) -> Tuple[ParallelCorpus, TestSet]:
    """
    Uniformly sampled source tokens, translated one-to-one with monotone alignments,
    so |S| equals <n_tokens> on both sides.
    """
    rng = np.random.default_rng(seed)
    n_sentences = n_tokens // sentence_length

    names_src = np.array([f's{t}' for t in range(vocab_size)])
    names_tgt = np.array([f't{t}' for t in range(vocab_size)])

    tokens = rng.integers(0, vocab_size, (n_sentences + n_test, sentence_length))

    # ids follow the order of first occurrence, as Vocabulary.build assigns them
    vocab_src = Vocabulary.build(names_src[tokens[:n_sentences]].tolist())
    vocab_tgt = Vocabulary.build(names_tgt[tokens[:n_sentences]].tolist())

    src_ids = np.array([vocab_src.id(name) for name in names_src])
    tgt_ids = np.array([vocab_tgt.id(name) for name in names_tgt])

    alignment = _monotone(sentence_length)

    pairs = [
        SentencePair(src=src_ids[row], tgt=tgt_ids[row], alignment=alignment)
        for row in tokens[:n_sentences]
    ]

    corpus = ParallelCorpus(pairs, vocab_src, vocab_tgt)
    test_set = TestSet([src_ids[row] for row in tokens[n_sentences:]], [tgt_ids[row] for row in tokens[n_sentences:]])

    logging.info(f'Generated a scaled corpus: {corpus.token_count(SOURCE)} source tokens, vocabulary {vocab_size}')

    return corpus, test_set


@dataclass
class NeighbourhoodCase:
    query: np.ndarray
    datastore: TargetDatastore
    answer: int


def neighbourhood_task(n_cases: int = 50,
                       n_noise: int = 60,
                       dim: int = 8,
                       seed: int = 0) -> List[NeighbourhoodCase]:
    """
    Every case has 4 near neighbours, the nearest carrying a wrong value and the next
    three the answer, plus <n_noise> far entries split between two wrong values. Only a
    k around 4 recovers the answer.
    """
    rng = np.random.default_rng(seed)
    cases = []

    for i in range(n_cases):
        query = np.zeros(dim, dtype=np.float32)
        query[0] = 1

        near = np.tile(query, (4, 1))
        near[:, 1] = [0.01, 0.02, 0.03, 0.04]

        far = np.tile(query, (n_noise, 1))
        far[:, 2] = 1 + 0.01 * rng.random(n_noise)

        answer, decoys = 10 + 3 * i, (11 + 3 * i, 12 + 3 * i)

        tokens = np.r_[decoys[0], [answer] * 3, np.resize(decoys, n_noise)].astype(np.int64)
        keys = np.concatenate([near, far]).astype(np.float32)

        size = len(tokens)

        cases.append(NeighbourhoodCase(
            query=query,
            datastore=TargetDatastore(
                tokens,
                KeyStore(keys),
                np.zeros(size, dtype=np.int64),
                np.zeros((size, 2), dtype=np.int64),
                np.stack([np.full(size, i), np.arange(size)], axis=1).astype(np.int64)
            ),
            answer=answer
        ))

    return cases
