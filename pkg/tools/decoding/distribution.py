"""
Token distributions of a decoding step: the kNN distribution over a retrieved set of
(key, value) entries and its interpolation with the base model distribution.
"""
from typing import Dict, Iterable, Optional

import numpy as np

from scipy.special import softmax

from tools.general import OpCounter
from tools.search.index import top_k
from tools.search.pq import check_metric


class SparseDistribution:
    """
    Probability mass over TokenIds; tokens absent from <tokens> have probability 0.

    attributes:
        - tokens        <np.ndarray>    sorted unique TokenIds (int64)
        - probs         <np.ndarray>    their probabilities (float64)
    """

    def __init__(self, tokens: np.ndarray, probs: np.ndarray):
        tokens = np.asarray(tokens, dtype=np.int64)
        probs = np.asarray(probs, dtype=np.float64)

        if tokens.shape != probs.shape:
            raise ValueError(f'{len(tokens)} tokens but {len(probs)} probabilities')

        if np.any(probs < 0):
            raise ValueError('Probabilities must be non-negative')

        if len(tokens) > 1 and np.any(np.diff(tokens) <= 0):
            raise ValueError('Distribution tokens must be sorted and unique')

        self.tokens = tokens
        self.probs = probs

    def __len__(self):
        return len(self.tokens)

    def __repr__(self):
        return f'SparseDistribution({self.to_dict()})'

    @classmethod
    def empty(cls) -> 'SparseDistribution':
        return cls(np.zeros(0, dtype=np.int64), np.zeros(0))

    @classmethod
    def point(cls, token: int) -> 'SparseDistribution':
        return cls(np.array([token]), np.array([1.0]))

    @classmethod
    def uniform(cls, tokens: Iterable[int]) -> 'SparseDistribution':
        tokens = np.unique(np.fromiter(tokens, dtype=np.int64))

        return cls(tokens, np.full(len(tokens), 1 / len(tokens)))

    @classmethod
    def from_dict(cls, probs: Dict[int, float]) -> 'SparseDistribution':
        tokens = np.array(sorted(probs), dtype=np.int64)

        return cls(tokens, np.array([probs[t] for t in tokens], dtype=np.float64))

    @classmethod
    def aggregate(cls, tokens: np.ndarray, weights: np.ndarray) -> 'SparseDistribution':
        """
        Sums the weights of entries sharing a token
        """
        unique, inverse = np.unique(np.asarray(tokens, dtype=np.int64), return_inverse=True)

        return cls(unique, np.bincount(inverse.reshape(-1), weights=weights, minlength=len(unique)))

    @property
    def is_empty(self) -> bool:
        return len(self.tokens) == 0

    def total(self) -> float:
        return float(self.probs.sum())

    def values_at(self, tokens: np.ndarray) -> np.ndarray:
        """
        :returns:       probabilities of the given tokens, 0 where absent
        """
        tokens = np.asarray(tokens, dtype=np.int64)
        values = np.zeros(len(tokens))

        if self.is_empty:
            return values

        where = np.clip(np.searchsorted(self.tokens, tokens), 0, len(self.tokens) - 1)
        found = self.tokens[where] == tokens
        values[found] = self.probs[where[found]]

        return values

    def get(self, token: int) -> float:
        return float(self.values_at(np.array([token]))[0])

    def argmax(self) -> int:
        """
        :returns:       the most probable token, the lower TokenId on ties
        """
        if self.is_empty:
            raise ValueError('Empty distribution has no argmax')

        return int(self.tokens[np.argmax(self.probs)])

    def to_dict(self) -> Dict[int, float]:
        return {int(t): float(p) for t, p in zip(self.tokens, self.probs)}


def knn_distribution(query: np.ndarray,
                     ds,
                     k: int,
                     temperature: float,
                     metric: str = 'cosine',
                     counter: Optional[OpCounter] = None) -> SparseDistribution:
    """
    Softmax over the negative distances of the k nearest entries, aggregated per value:

        p(y) = sum_{(d, v) in top-k, v = y} exp(-d / T) / Z

    :param ds:          any store exposing <tokens> and <distances(query, metric)>
                        (TargetDatastore, GlobalDatastore)
    :param counter:     receives the number of distance computations

    :raises ValueError: on an empty store or a non-positive temperature
    """
    if temperature <= 0:
        raise ValueError(f'Temperature must be > 0, got {temperature}')

    if k < 1:
        raise ValueError(f'k must be >= 1, got {k}')

    check_metric(metric)

    if len(ds) == 0:
        raise ValueError('kNN distribution over an empty datastore')

    distances = ds.distances(query, metric)

    if counter is not None:
        counter.add(len(distances))

    best = top_k(distances, k)
    weights = softmax(-distances[best] / temperature)

    return SparseDistribution.aggregate(ds.tokens[best], weights)


def vanilla_global_search(query: np.ndarray,
                          global_ds,
                          k: int,
                          temperature: float,
                          metric: str = 'cosine',
                          counter: Optional[OpCounter] = None) -> SparseDistribution:
    """
    The kNN distribution over the whole corpus-level store
    """
    return knn_distribution(query, global_ds, k, temperature, metric, counter)


def interpolate(p_mt: SparseDistribution, p_knn: SparseDistribution, lam: float) -> SparseDistribution:
    """
    p(y) = lam * p_knn(y) + (1 - lam) * p_mt(y); an empty p_knn leaves p_mt unchanged
    """
    if not 0 <= lam <= 1:
        raise ValueError(f'Interpolation weight must be in [0, 1], got {lam}')

    if lam == 0 or p_knn.is_empty:
        return p_mt

    if lam == 1:
        return p_knn

    tokens = np.union1d(p_mt.tokens, p_knn.tokens)

    return SparseDistribution(
        tokens,
        lam * p_knn.values_at(tokens) + (1 - lam) * p_mt.values_at(tokens)
    )
