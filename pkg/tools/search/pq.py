"""
Product quantization: a D-dim vector is split into M subvectors of d = D / M dims, each
replaced by the index of its nearest codeword in a per-subspace k-means codebook.
With at most 256 codewords per subspace a code takes M bytes.
"""
import logging

from dataclasses import dataclass, field
from multiprocessing.pool import ThreadPool
from typing import List

import numpy as np

from tools.general import (
    FormatError, ensure_parent_dir, write_header, read_header, read_array, write_array
)
from tools.search.kmeans import train_kmeans
from tools.text.representations import normalize_rows

METRICS = ('l2', 'cosine', 'ip')

CODEBOOK_MAGIC = b'FKNNPQCB'
CODEBOOK_HEADER = 'IIIB'  # D, M, n_codewords, metric code

CODES_MAGIC = b'FKNNPQCD'
CODES_HEADER = 'QI'  # count, M

MAX_CODEWORDS = 256
TRAIN_CAP = 5_000_000


def check_metric(metric: str) -> str:
    if metric not in METRICS:
        raise ValueError(f'Unknown metric "{metric}", expected one of {METRICS}')

    return metric


@dataclass
class PQConfig:
    M: int = 128
    n_codewords: int = MAX_CODEWORDS
    iters: int = 25
    train_cap: int = TRAIN_CAP
    seed: int = 0


@dataclass
class PQCodebook:
    """
    attributes:
        - codewords         <np.ndarray>    (M, n_codewords, d) float32
        - metric            <str>           l2, cosine (L2 on normalized vectors) or ip
        - objective_trace   <list<float>>   k-means objective summed over subspaces
    """
    codewords: np.ndarray
    metric: str = 'l2'
    objective_trace: List[float] = field(default_factory=list)

    def __post_init__(self):
        self.codewords = np.ascontiguousarray(self.codewords, dtype=np.float32)

        assert self.codewords.ndim == 3
        assert self.n_codewords <= MAX_CODEWORDS
        assert np.all(np.isfinite(self.codewords))

        check_metric(self.metric)

    @property
    def M(self) -> int:
        return int(self.codewords.shape[0])

    @property
    def n_codewords(self) -> int:
        return int(self.codewords.shape[1])

    @property
    def d(self) -> int:
        return int(self.codewords.shape[2])

    @property
    def D(self) -> int:
        return self.M * self.d

    @property
    def code_size(self) -> int:
        """
        :returns:       bytes per encoded vector
        """
        return self.M

    def prepare(self, vectors: np.ndarray) -> np.ndarray:
        """
        Validates the dim and normalizes vectors for the cosine metric
        """
        vectors = np.atleast_2d(np.asarray(vectors, dtype=np.float32))

        if vectors.shape[1] != self.D:
            raise ValueError(f'Vector dim {vectors.shape[1]} does not match codebook dim {self.D}')

        if self.metric == 'cosine':
            return normalize_rows(vectors)

        return vectors

    def subvectors(self, vectors: np.ndarray, m: int) -> np.ndarray:
        return vectors[:, m * self.d:(m + 1) * self.d]


def train_pq(vectors: np.ndarray,
             M: int,
             n_codewords: int = MAX_CODEWORDS,
             iters: int = 25,
             seed: int = 0,
             metric: str = 'l2',
             train_cap: int = TRAIN_CAP,
             threads: int = 1) -> PQCodebook:
    """
    Trains one k-means codebook per subspace (subspaces run in parallel threads).

    :param vectors:         (n, D) training vectors, subsampled to <train_cap>
    :param M:               number of sub-quantizers, must divide D
    :param n_codewords:     codewords per subspace, at most 256

    :raises ValueError:     if D is not divisible by M or n_codewords > 256
    """
    vectors = np.atleast_2d(np.asarray(vectors, dtype=np.float32))
    check_metric(metric)

    n, D = vectors.shape

    if n < 1:
        raise ValueError('PQ training needs at least one vector')

    if M < 1 or D % M != 0:
        raise ValueError(f'D={D} must be divisible by M={M}')

    if not 1 <= n_codewords <= MAX_CODEWORDS:
        raise ValueError(f'n_codewords must be within [1, {MAX_CODEWORDS}], got {n_codewords}')

    rng = np.random.default_rng(seed)

    if n > train_cap:
        vectors = vectors[np.sort(rng.choice(n, train_cap, replace=False))]

    if metric == 'cosine':
        vectors = normalize_rows(vectors)

    d = D // M

    def train_subspace(m: int):
        return train_kmeans(
            vectors[:, m * d:(m + 1) * d],
            n_codewords,
            iters=iters,
            seed=seed + m
        )

    with ThreadPool(max(1, threads)) as pool:
        results = pool.map(train_subspace, range(M))

    # subspaces may converge early; pad their traces with the final objective
    length = max(len(r.objective_trace) for r in results)
    trace = np.zeros(length)

    for r in results:
        padded = r.objective_trace + [r.objective_trace[-1]] * (length - len(r.objective_trace))
        trace += np.array(padded)

    codebook = PQCodebook(
        codewords=np.stack([r.centroids for r in results]),
        metric=metric,
        objective_trace=trace.tolist()
    )

    logging.info(
        f'Trained PQ codebook on {len(vectors)} vectors: D={D}, M={M}, '
        f'{n_codewords} codewords, {codebook.code_size} bytes per code, '
        f'objective {trace[0]:.4f} -> {trace[-1]:.4f}'
    )

    return codebook


def encode(cb: PQCodebook, vectors: np.ndarray) -> np.ndarray:
    """
    :returns:       (n, M) uint8 codes, nearest codeword per subspace (ties -> lowest index)
    """
    vectors = cb.prepare(vectors).astype(np.float64)

    codes = np.empty((len(vectors), cb.M), dtype=np.uint8)

    for m in range(cb.M):
        sub = cb.subvectors(vectors, m)
        codewords = cb.codewords[m].astype(np.float64)

        dists = (
            np.sum(sub ** 2, axis=1, keepdims=True)
            - 2 * sub @ codewords.T
            + np.sum(codewords ** 2, axis=1)
        )

        codes[:, m] = np.argmin(dists, axis=1)

    return codes


def decode(cb: PQCodebook, codes: np.ndarray) -> np.ndarray:
    """
    :returns:       (n, D) float32 reconstructions, concatenated codewords
    """
    codes = np.atleast_2d(codes)

    if codes.shape[1] != cb.M:
        raise ValueError(f'Codes have {codes.shape[1]} sub-quantizers, codebook has {cb.M}')

    return np.concatenate(
        [cb.codewords[m][codes[:, m]] for m in range(cb.M)],
        axis=1
    )


def adc_table(cb: PQCodebook, query: np.ndarray) -> np.ndarray:
    """
    Asymmetric distance lookup table of a full-precision query.

    :returns:       (M, n_codewords) float64; squared L2 partial distances for l2 / cosine
                    (on the normalized query), negated partial dot products for ip
    """
    query = cb.prepare(query)[0].astype(np.float64)

    table = np.empty((cb.M, cb.n_codewords), dtype=np.float64)

    for m in range(cb.M):
        q = query[m * cb.d:(m + 1) * cb.d]
        codewords = cb.codewords[m].astype(np.float64)

        if cb.metric == 'ip':
            table[m] = -codewords @ q

        else:
            table[m] = np.sum((codewords - q) ** 2, axis=1)

    return table


def adc_distance(table: np.ndarray, code_row: np.ndarray) -> float:
    return float(table[np.arange(len(table)), np.asarray(code_row, dtype=np.int64)].sum())


def adc_distances(table: np.ndarray, codes: np.ndarray) -> np.ndarray:
    """
    :returns:       ADC distance of every code row, summed over subspaces in order
    """
    distances = np.zeros(len(codes), dtype=np.float64)

    for m in range(len(table)):
        distances += table[m][codes[:, m]]

    return distances


def memory_bytes(count: int, D: int, M: int, quantized: bool) -> int:
    """
    :returns:       key storage of <count> vectors: M bytes per code or 4 * D per float32 row
    """
    return count * (M if quantized else 4 * D)


def compression_ratio(D: int, M: int) -> float:
    return 4 * D / M


def save_codebook(cb: PQCodebook, path: str):
    ensure_parent_dir(path)

    with open(path, 'wb') as f:
        write_header(
            f, CODEBOOK_MAGIC, CODEBOOK_HEADER,
            cb.D, cb.M, cb.n_codewords, METRICS.index(cb.metric)
        )
        write_array(f, cb.codewords, 'f4')


def load_codebook(path: str) -> PQCodebook:
    with open(path, 'rb') as f:
        D, M, n_codewords, metric_code = read_header(f, CODEBOOK_MAGIC, CODEBOOK_HEADER, path)

        if M == 0 or D % M != 0 or metric_code >= len(METRICS):
            raise FormatError(f'{path}: inconsistent codebook header D={D} M={M}')

        codewords = read_array(f, 'f4', D * n_codewords, path).reshape(M, n_codewords, D // M)

    return PQCodebook(codewords=codewords, metric=METRICS[metric_code])


def save_codes(codes: np.ndarray, path: str):
    ensure_parent_dir(path)

    with open(path, 'wb') as f:
        write_header(f, CODES_MAGIC, CODES_HEADER, len(codes), codes.shape[1])
        write_array(f, codes, 'u1')


def load_codes(path: str) -> np.ndarray:
    with open(path, 'rb') as f:
        count, M = read_header(f, CODES_MAGIC, CODES_HEADER, path)

        return read_array(f, 'u1', count * M, path).reshape(count, M)
