"""
Base translation models. A model step returns the token distribution p_MT for the next
target position and the decoder state used as the kNN query.
"""
import re
import typing
import logging

from abc import ABCMeta, abstractmethod
from dataclasses import dataclass
from typing import Dict, Sequence

import numpy as np

from tools.decoding.distribution import SparseDistribution
from tools.text.corpus import ParallelCorpus, SOURCE, TARGET, BOS_ID, EOS_ID, UNK_ID
from tools.text.representations import SyntheticEmbedder

model_type = typing.TypeVar('model_type', bound='BaseModel')


@dataclass
class BaseModelStep:
    p_mt: SparseDistribution
    hidden: np.ndarray


class BaseModel(metaclass=ABCMeta):
    """
    Deterministic stand-in for an encoder-decoder: the hidden state comes from the
    synthetic embedder, so decode-time queries share the space of the cached target keys.
    """

    def __init__(self, corpus: ParallelCorpus, embedder: SyntheticEmbedder):
        self.vocab_src = corpus.vocab(SOURCE)
        self.vocab_tgt = corpus.vocab(TARGET)
        self.embedder = embedder

        self._source_parts: Dict[bytes, np.ndarray] = {}

    def _source_part(self, source: np.ndarray) -> np.ndarray:
        key = source.tobytes()

        if key not in self._source_parts:
            # one entry per sentence being decoded is enough
            self._source_parts = {key: self.embedder.source_part([source])}

        return self._source_parts[key]

    def step(self, source: Sequence[int], prefix: Sequence[int]) -> BaseModelStep:
        """
        :param source:      source TokenIds
        :param prefix:      target TokenIds generated so far

        :raises ValueError: for an empty source
        """
        source = np.asarray(source, dtype=np.int64)

        if len(source) == 0:
            raise ValueError('Cannot decode an empty source')

        hidden = self.embedder.decoder_state(self._source_part(source), prefix)

        # the attended source position runs past the end: the translation is complete
        if len(prefix) >= len(source):
            return BaseModelStep(SparseDistribution.point(EOS_ID), hidden)

        return BaseModelStep(self.distribution(source, prefix), hidden)

    @abstractmethod
    def distribution(self, source: np.ndarray, prefix: Sequence[int]) -> SparseDistribution:
        """
        :returns:       p_MT for target position len(prefix) < len(source)
        """
        pass

    @classmethod
    def from_string(cls,
                    string_option: str,
                    *args,
                    **kwargs) -> model_type:
        """
        Creates an object of the subclass whose name matches string_option
        ("lexical" -> LexicalModel).

        :raises NotImplementedError:    if no matching subclass found
        """
        _option = ''.join(
            re.findall(r'[0-9a-zA-Z]', string_option)
        ).lower()

        subclasses = list(cls.__subclasses__())

        while subclasses:
            subclass = subclasses.pop(0)

            if subclass.__name__.lower() in (_option, f'{_option}model'):
                return subclass(*args, **kwargs)

            subclasses.extend(subclass.__subclasses__())

        raise NotImplementedError(
            f'No corresponding class found for option "{string_option}"'
        )


class UniformModel(BaseModel):
    """
    p_MT(v) = 1 / |V| over the whole target vocabulary
    """

    def __init__(self, corpus: ParallelCorpus, embedder: SyntheticEmbedder):
        super().__init__(corpus, embedder)

        self._uniform = SparseDistribution.uniform(range(len(self.vocab_tgt)))

    def distribution(self, source: np.ndarray, prefix: Sequence[int]) -> SparseDistribution:
        return self._uniform


def _translation_pairs(corpus: ParallelCorpus) -> np.ndarray:
    """
    :returns:       (links, 2) aligned (source TokenId, target TokenId) pairs
    """
    pairs = [
        np.stack([pair.src[pair.alignment[:, 0]], pair.tgt[pair.alignment[:, 1]]], axis=1)
        for pair in corpus.pairs if len(pair.alignment)
    ]

    if not pairs:
        return np.zeros((0, 2), dtype=np.int64)

    return np.concatenate(pairs)


def _conditional_tables(pairs: np.ndarray, uniform: bool = False) -> Dict[int, SparseDistribution]:
    """
    Maximum-likelihood p(b | a) from (a, b) pairs; with <uniform> every observed b of an
    a gets equal mass.
    """
    if len(pairs) == 0:
        return {}

    unique, counts = np.unique(pairs, axis=0, return_counts=True)
    starts = np.flatnonzero(np.r_[True, unique[1:, 0] != unique[:-1, 0]])
    bounds = np.append(starts, len(unique))

    tables = {}

    for start, end in zip(bounds[:-1], bounds[1:]):
        weights = np.ones(end - start) if uniform else counts[start:end].astype(np.float64)

        tables[int(unique[start, 0])] = SparseDistribution(unique[start:end, 1], weights / weights.sum())

    return tables


class LexicalModel(BaseModel):
    """
    Word-by-word translation with the alignment translation table t(y | x) of the
    attended source token. Source tokens without links copy themselves when the target
    vocabulary knows the string, otherwise produce <unk>.
    """

    def __init__(self, corpus: ParallelCorpus, embedder: SyntheticEmbedder, uniform: bool = False):
        super().__init__(corpus, embedder)

        self.uniform = uniform
        self.table = _conditional_tables(_translation_pairs(corpus), uniform)

        logging.info(
            f'Initialized the {self.__class__.__name__} with {len(self.table)} source entries '
            f'(uniform={uniform})'
        )

    def lexical(self, token: int) -> SparseDistribution:
        if token in self.table:
            return self.table[token]

        if token == UNK_ID:
            return SparseDistribution.point(UNK_ID)

        return SparseDistribution.point(self.vocab_tgt.id(self.vocab_src.lookup(token)))

    def distribution(self, source: np.ndarray, prefix: Sequence[int]) -> SparseDistribution:
        return self.lexical(int(source[len(prefix)]))


class BigramModel(LexicalModel):
    """
    (1 - w) * t(y | x_attended) + w * p(y | y_prev), with a bigram model of the target side
    """

    def __init__(self,
                 corpus: ParallelCorpus,
                 embedder: SyntheticEmbedder,
                 uniform: bool = False,
                 bigram_weight: float = 0.5):
        if not 0 <= bigram_weight <= 1:
            raise ValueError(f'Bigram weight must be in [0, 1], got {bigram_weight}')

        super().__init__(corpus, embedder, uniform)

        self.bigram_weight = bigram_weight

        bigrams = [
            np.stack([np.r_[BOS_ID, tgt[:-1]], tgt], axis=1) for tgt in corpus.sentences(TARGET)
        ]

        self.bigrams = _conditional_tables(np.concatenate(bigrams) if bigrams else np.zeros((0, 2)))

    def distribution(self, source: np.ndarray, prefix: Sequence[int]) -> SparseDistribution:
        lexical = self.lexical(int(source[len(prefix)]))
        previous = int(prefix[-1]) if len(prefix) else BOS_ID

        bigram = self.bigrams.get(previous)

        if bigram is None:
            return lexical

        tokens = np.union1d(lexical.tokens, bigram.tokens)

        return SparseDistribution(
            tokens,
            (1 - self.bigram_weight) * lexical.values_at(tokens) + self.bigram_weight * bigram.values_at(tokens)
        )
