"""
Per-token-type search structures: exhaustive (flat) search for rare tokens and an
inverted file (IVF) of k-means clusters for frequent ones. Distances are canonical,
lower = closer: squared L2, 1 - cosine, or the negated inner product.
"""
import math
import logging

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from tools.general import (
    FormatError, ensure_parent_dir, write_header, read_header, read_array, write_array
)
from tools.search.kmeans import train_kmeans
from tools.search.pq import PQCodebook, adc_table, adc_distances, check_metric, decode, METRICS
from tools.text.representations import normalize_rows

FLAT = 'flat'
IVF = 'ivf'

INDEX_MAGIC = b'FKNNIDX1'
INDEX_HEADER = 'BQII'  # kind, entry_count, dim, nlist
KEYS_TRAILER = 'BIB'  # key format (0 float32 rows, 1 uint8 codes), key width, metric

ASSIGN_CHUNK = 8192


@dataclass
class IndexConfig:
    freq_threshold: int = 30000
    nprobe: int = 32
    train_cap: int = 5_000_000
    metric: str = 'cosine'
    quantize: bool = False
    kmeans_iters: int = 25
    seed: int = 0


@dataclass(frozen=True)
class SearchHit:
    entry_id: int
    distance: float


def n_clusters(n_v: int) -> int:
    """
    :returns:       min(4 sqrt(n_v), n_v / 30), floored and at least 1
    """
    return max(1, min(int(math.floor(4 * math.sqrt(n_v))), n_v // 30))


def prepare_vectors(vectors: np.ndarray, metric: str) -> np.ndarray:
    """
    :returns:       float32 rows, normalized for the cosine metric
    """
    vectors = np.atleast_2d(np.asarray(vectors, dtype=np.float32))

    if metric == 'cosine':
        return normalize_rows(vectors)

    return vectors


def metric_distances(keys: np.ndarray, query: np.ndarray, metric: str) -> np.ndarray:
    """
    Row-wise canonical distances between prepared keys and a prepared query. Every row
    is reduced independently, so a row's distance does not depend on which other rows
    are passed along.
    """
    keys = np.asarray(keys, dtype=np.float64)
    query = np.asarray(query, dtype=np.float64)

    if metric == 'l2':
        return np.sum((keys - query) ** 2, axis=1)

    if metric == 'cosine':
        return 1.0 - np.sum(keys * query, axis=1)

    return -np.sum(keys * query, axis=1)


def top_k(distances: np.ndarray, k: int) -> np.ndarray:
    """
    :returns:       positions of the k smallest distances, sorted by (distance, position)
    """
    n = len(distances)

    if n == 0:
        return np.zeros(0, dtype=np.int64)

    if k < n:
        part = np.argpartition(distances, k - 1)[:k]
        threshold = distances[part].max()
        candidates = np.flatnonzero(distances <= threshold)

    else:
        candidates = np.arange(n)

    order = np.lexsort((candidates, distances[candidates]))

    return candidates[order][:k]


def _hits(entry_ids: np.ndarray, distances: np.ndarray) -> List[SearchHit]:
    return [SearchHit(int(e), float(d)) for e, d in zip(entry_ids, distances)]


def _check_query(query: np.ndarray, dim: int) -> np.ndarray:
    query = np.asarray(query, dtype=np.float32).reshape(-1)

    if len(query) != dim:
        raise ValueError(f'Query dim {len(query)} does not match index dim {dim}')

    return query


def brute_force_search(keys: np.ndarray, query: np.ndarray, k: int, metric: str) -> List[SearchHit]:
    """
    Exact exhaustive top-k over raw keys, the reference for every index
    """
    check_metric(metric)

    keys = prepare_vectors(keys, metric)
    query = prepare_vectors(_check_query(query, keys.shape[1]), metric)[0]

    distances = metric_distances(keys, query, metric)
    best = top_k(distances, k)

    return _hits(best, distances[best])


class TokenIndex:
    """
    Searchable structure over the keys of one token cache.

    attributes:
        - kind              <str>           flat or ivf
        - keys              <np.ndarray>    prepared float32 rows or (n, M) uint8 codes
        - codebook          <PQCodebook>    set when keys are codes
        - centroids         <np.ndarray>    (nlist, dim) for ivf
        - list_offsets      <np.ndarray>    (nlist + 1,) boundaries into list_entries
        - list_entries      <np.ndarray>    entry ids grouped by cluster, ascending within a cluster
    """

    def __init__(self,
                 kind: str,
                 keys: np.ndarray,
                 dim: int,
                 metric: str,
                 codebook: Optional[PQCodebook] = None,
                 centroids: Optional[np.ndarray] = None,
                 list_offsets: Optional[np.ndarray] = None,
                 list_entries: Optional[np.ndarray] = None):
        self.kind = kind
        self.keys = keys
        self.dim = dim
        self.metric = check_metric(metric)
        self.codebook = codebook

        self.centroids = centroids if centroids is not None else np.zeros((0, dim), dtype=np.float32)
        self.list_offsets = list_offsets if list_offsets is not None else np.zeros(1, dtype=np.int64)
        self.list_entries = list_entries if list_entries is not None else np.zeros(0, dtype=np.int64)

    @property
    def entry_count(self) -> int:
        return len(self.keys)

    @property
    def nlist(self) -> int:
        return len(self.centroids)

    @property
    def quantized(self) -> bool:
        return self.codebook is not None

    def inverted_list(self, cluster: int) -> np.ndarray:
        return self.list_entries[self.list_offsets[cluster]:self.list_offsets[cluster + 1]]

    def entry_distances(self, query: np.ndarray, entry_ids: Optional[np.ndarray] = None) -> np.ndarray:
        """
        :param query:       raw query vector
        :param entry_ids:   subset of entries (all when None)
        """
        keys = self.keys if entry_ids is None else self.keys[entry_ids]

        if self.quantized:
            distances = adc_distances(adc_table(self.codebook, query), keys)

            # the table holds squared L2 between unit vectors: 2 - 2 cos
            return distances / 2 if self.metric == 'cosine' else distances

        return metric_distances(keys, prepare_vectors(query, self.metric)[0], self.metric)


def _assign_to_centroids(vectors: np.ndarray, centroids: np.ndarray, metric: str) -> np.ndarray:
    labels = np.empty(len(vectors), dtype=np.int64)
    c = centroids.astype(np.float64)
    c_norms = np.sum(c ** 2, axis=1)

    for start in range(0, len(vectors), ASSIGN_CHUNK):
        block = vectors[start:start + ASSIGN_CHUNK].astype(np.float64)
        dots = block @ c.T

        if metric == 'l2':
            d = c_norms - 2 * dots

        else:
            d = -dots

        labels[start:start + ASSIGN_CHUNK] = np.argmin(d, axis=1)

    return labels


def build_token_index(keys: np.ndarray,
                      config: IndexConfig,
                      codebook: Optional[PQCodebook] = None,
                      token: Optional[int] = None) -> TokenIndex:
    """
    Flat index when the entry count is at most config.freq_threshold, otherwise an IVF
    with n_clusters(n_v) centroids trained on at most config.train_cap keys.

    :param keys:        (n_v, D) float vectors, or (n_v, M) uint8 codes with <codebook>

    :raises ValueError: on empty or inconsistent keys
    """
    metric = check_metric(config.metric)
    keys = np.asarray(keys)

    if keys.ndim != 2 or len(keys) == 0:
        raise ValueError(f'Index keys must be a non-empty 2-D array, got shape {keys.shape}')

    if codebook is not None:
        if keys.dtype != np.uint8 or keys.shape[1] != codebook.M:
            raise ValueError(f'Codes of shape {keys.shape} do not match a codebook with M={codebook.M}')

        if codebook.metric != metric:
            raise ValueError(f'Codebook metric {codebook.metric} cannot serve metric {metric}')

        dim = codebook.D
        stored = keys
        vectors = None

    else:
        dim = keys.shape[1]
        stored = prepare_vectors(keys, metric)
        vectors = stored

    n_v = len(keys)

    if n_v <= config.freq_threshold:
        return TokenIndex(FLAT, stored, dim, metric, codebook=codebook)

    nlist = n_clusters(n_v)

    if vectors is None:
        vectors = prepare_vectors(decode(codebook, keys), metric)

    result = train_kmeans(
        vectors,
        nlist,
        iters=config.kmeans_iters,
        seed=config.seed,
        max_points=config.train_cap
    )

    centroids = result.centroids

    if metric == 'cosine':
        centroids = normalize_rows(centroids)

    labels = _assign_to_centroids(vectors, centroids, metric)

    list_entries = np.argsort(labels, kind='stable').astype(np.int64)
    list_offsets = np.concatenate([[0], np.cumsum(np.bincount(labels, minlength=nlist))]).astype(np.int64)

    logging.debug(f'Built IVF index for token {token}: {n_v} keys, nlist={nlist}')

    return TokenIndex(
        IVF, stored, dim, metric,
        codebook=codebook,
        centroids=centroids,
        list_offsets=list_offsets,
        list_entries=list_entries
    )


def search_with_ops(index: TokenIndex,
                    query: np.ndarray,
                    k: int,
                    nprobe: int = 32) -> Tuple[List[SearchHit], int]:
    """
    :returns:       hits sorted by (distance, entry_id) and the number of distance
                    computations (centroids compared + entries scanned)
    """
    if k < 1:
        raise ValueError(f'k must be >= 1, got {k}')

    query = _check_query(query, index.dim)

    if index.kind == FLAT:
        distances = index.entry_distances(query)
        best = top_k(distances, k)

        return _hits(best, distances[best]), index.entry_count

    centroid_distances = metric_distances(
        index.centroids, prepare_vectors(query, index.metric)[0], index.metric
    )
    probed = top_k(centroid_distances, max(1, min(nprobe, index.nlist)))

    candidates = np.sort(np.concatenate([index.inverted_list(c) for c in probed]))

    distances = index.entry_distances(query, candidates)
    best = top_k(distances, k)

    return _hits(candidates[best], distances[best]), index.nlist + len(candidates)


def search(index: TokenIndex, query: np.ndarray, k: int, nprobe: int = 32) -> List[SearchHit]:
    return search_with_ops(index, query, k, nprobe)[0]


def recall_at_k(hits: List[SearchHit], oracle: List[SearchHit]) -> float:
    """
    :returns:       |hits ∩ oracle| / |oracle| over entry ids
    """
    if not oracle:
        return 1.0

    found = {h.entry_id for h in hits}

    return sum(h.entry_id in found for h in oracle) / len(oracle)


def save_index(index: TokenIndex, path: str):
    """
    Writes the FKNNIDX1 format; PQ codebooks are stored with the caches, not here.
    """
    ensure_parent_dir(path)

    with open(path, 'wb') as f:
        write_header(
            f, INDEX_MAGIC, INDEX_HEADER,
            0 if index.kind == FLAT else 1, index.entry_count, index.dim, index.nlist
        )
        write_array(f, index.centroids, 'f4')
        write_array(f, index.list_offsets, 'u8')
        write_array(f, index.list_entries, 'u8')

        write_header(
            f, b'FKNNKEYS', KEYS_TRAILER,
            1 if index.quantized else 0, index.keys.shape[1], METRICS.index(index.metric)
        )
        write_array(f, index.keys, 'u1' if index.quantized else 'f4')


def load_index(path: str, codebook: Optional[PQCodebook] = None) -> TokenIndex:
    with open(path, 'rb') as f:
        kind_code, entry_count, dim, nlist = read_header(f, INDEX_MAGIC, INDEX_HEADER, path)

        centroids = read_array(f, 'f4', nlist * dim, path).reshape(nlist, dim)
        list_offsets = read_array(f, 'u8', nlist + 1, path).astype(np.int64)
        list_entries = read_array(
            f, 'u8', entry_count if kind_code == 1 else 0, path
        ).astype(np.int64)

        key_format, width, metric_code = read_header(f, b'FKNNKEYS', KEYS_TRAILER, path)

        if key_format == 1 and codebook is None:
            raise FormatError(f'{path}: quantized index needs its PQ codebook')

        keys = read_array(f, 'u1' if key_format else 'f4', entry_count * width, path)

    return TokenIndex(
        FLAT if kind_code == 0 else IVF,
        keys.reshape(entry_count, width),
        dim,
        METRICS[metric_code],
        codebook=codebook if key_format == 1 else None,
        centroids=centroids,
        list_offsets=list_offsets,
        list_entries=list_entries
    )
