"""
Token-specific caches: for every aligned source occurrence of token v the cache D_v holds
the source key, the aligned target key and the aligned target token.
"""
import os
import json
import logging

from dataclasses import dataclass
from multiprocessing.pool import ThreadPool
from typing import BinaryIO, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from tools.general import (
    FormatError, MissingArtifactError, ensure_dir, write_header, read_header, read_array,
    write_array
)
from tools.search.index import metric_distances, prepare_vectors
from tools.search.pq import (
    PQCodebook, PQConfig, encode, adc_table, adc_distances, save_codebook, load_codebook, memory_bytes,
    train_pq
)
from tools.text.corpus import ParallelCorpus, SOURCE, TARGET
from tools.text.representations import ReprMatrix

CACHE_VERSION = 1
MANIFEST = 'manifest.json'
POOLED_FILE = 'pooled.cache'

CACHE_MAGIC = b'FKNNCACH'
CACHE_HEADER = 'IQIIB'  # token, count, key width, target key width, key format
POOL_MAGIC = b'FKNNPOOL'
POOL_HEADER = 'Q'  # record count

ENCODE_CHUNK = 65536


class KeyStore:
    """
    A block of keys, either float32 rows or PQ codes with their codebook, that answers
    canonical distance queries.
    """

    def __init__(self, keys: np.ndarray, codebook: Optional[PQCodebook] = None):
        self.keys = keys
        self.codebook = codebook

        self._prepared = {}

    def __len__(self):
        return len(self.keys)

    @property
    def quantized(self) -> bool:
        return self.codebook is not None

    def prepared(self, metric: str) -> np.ndarray:
        if metric not in self._prepared:
            self._prepared[metric] = prepare_vectors(self.keys, metric) if metric == 'cosine' else self.keys

        return self._prepared[metric]

    def distances(self, query: np.ndarray, metric: str) -> np.ndarray:
        if len(self.keys) == 0:
            return np.zeros(0)

        if self.quantized:
            if self.codebook.metric != metric:
                raise ValueError(
                    f'Keys were quantized for metric {self.codebook.metric}, not {metric}'
                )

            distances = adc_distances(adc_table(self.codebook, query), self.keys)

            return distances / 2 if metric == 'cosine' else distances

        return metric_distances(self.prepared(metric), prepare_vectors(query, metric)[0], metric)


@dataclass
class TokenCache:
    """
    D_v for one source token, entries in corpus iteration order.

    attributes:
        - src_locs      <np.ndarray>    (n, 2) (sentence, position) of the source occurrence
        - tgt_locs      <np.ndarray>    (n, 2) (sentence, position) of the aligned target token
        - tgt_tokens    <np.ndarray>    (n,) aligned target TokenIds
        - keys          <np.ndarray>    source keys: (n, D) float32 or (n, M) uint8 codes
        - tgt_keys      <np.ndarray>    target keys, same layout
    """
    token: int
    src_locs: np.ndarray
    tgt_locs: np.ndarray
    tgt_tokens: np.ndarray
    keys: np.ndarray
    tgt_keys: np.ndarray

    def __len__(self):
        return len(self.tgt_tokens)

    def entry(self, i: int) -> dict:
        return {
            'src_loc': tuple(int(x) for x in self.src_locs[i]),
            'tgt_loc': tuple(int(x) for x in self.tgt_locs[i]),
            'tgt_token': int(self.tgt_tokens[i])
        }

    def entries(self) -> List[dict]:
        return [self.entry(i) for i in range(len(self))]


class CacheSet:
    """
    All token caches of a corpus plus the shared per-side PQ codebooks when quantized
    """

    def __init__(self,
                 caches: Dict[int, TokenCache],
                 dim: int,
                 src_codebook: Optional[PQCodebook] = None,
                 tgt_codebook: Optional[PQCodebook] = None):
        self.caches = caches
        self.dim = dim
        self.src_codebook = src_codebook
        self.tgt_codebook = tgt_codebook

    def __len__(self):
        return len(self.caches)

    def __contains__(self, token: int):
        return token in self.caches

    def get(self, token: int) -> Optional[TokenCache]:
        return self.caches.get(token)

    @property
    def quantized(self) -> bool:
        return self.src_codebook is not None

    @property
    def total_entries(self) -> int:
        return int(sum(len(c) for c in self.caches.values()))

    def key_bytes(self) -> int:
        """
        :returns:       storage of source plus target keys
        """
        M = self.src_codebook.M if self.quantized else 0

        return 2 * memory_bytes(self.total_entries, self.dim, M, self.quantized)

    def stats(self, vocab=None) -> pd.DataFrame:
        """
        :returns:       per-token entry counts, largest first
        """
        rows = [
            {
                'token_id': token,
                'token': vocab.lookup(token) if vocab is not None else str(token),
                'entries': len(cache)
            }
            for token, cache in self.caches.items()
        ]

        df = pd.DataFrame(rows, columns=['token_id', 'token', 'entries'])

        if len(df):
            df['share'] = df.entries / df.entries.sum()

        return df.sort_values(['entries', 'token_id'], ascending=[False, True]).reset_index(drop=True)


def _encode_chunked(codebook: PQCodebook, rows: np.ndarray, threads: int) -> np.ndarray:
    chunks = [rows[i:i + ENCODE_CHUNK] for i in range(0, len(rows), ENCODE_CHUNK)]

    if not chunks:
        return np.zeros((0, codebook.M), dtype=np.uint8)

    with ThreadPool(max(1, threads)) as pool:
        encoded = pool.map(lambda chunk: encode(codebook, chunk), chunks)

    return np.concatenate(encoded)


def build_caches(corpus: ParallelCorpus,
                 src_reprs: ReprMatrix,
                 tgt_reprs: ReprMatrix,
                 quantize: bool = False,
                 src_codebook: Optional[PQCodebook] = None,
                 tgt_codebook: Optional[PQCodebook] = None,
                 threads: int = 1) -> CacheSet:
    """
    For every pair i and every alignment link (j, k), adds (h_j, (z_k, y_k)) to the cache
    of source token x_j. Unaligned source tokens contribute nothing.

    :param quantize:        store keys as PQ codes of the given (shared) codebooks

    :raises ValueError:     on representation / corpus mismatches or out-of-range alignments
    """
    for reprs, side in ((src_reprs, SOURCE), (tgt_reprs, TARGET)):
        if len(reprs) != corpus.token_count(side):
            raise ValueError(
                f'{side} representations have {len(reprs)} rows, corpus has '
                f'{corpus.token_count(side)} {side} tokens'
            )

    if quantize and (src_codebook is None or tgt_codebook is None):
        raise ValueError('Quantized caches need source and target PQ codebooks')

    sentence_ids = []
    links = []

    for i, pair in enumerate(corpus.pairs):
        if len(pair.alignment) == 0:
            continue

        if pair.alignment[:, 0].max() >= pair.n or pair.alignment[:, 1].max() >= pair.m:
            raise ValueError(f'Alignment of sentence pair {i} is out of range')

        sentence_ids.append(np.full(len(pair.alignment), i, dtype=np.int64))
        links.append(pair.alignment)

    if links:
        sentence_ids = np.concatenate(sentence_ids)
        links = np.concatenate(links)

    else:
        sentence_ids = np.zeros(0, dtype=np.int64)
        links = np.zeros((0, 2), dtype=np.int64)

    src_rows = corpus.offsets(SOURCE)[sentence_ids] + links[:, 0]
    tgt_rows = corpus.offsets(TARGET)[sentence_ids] + links[:, 1]

    src_tokens = corpus.flat_tokens(SOURCE)[src_rows]
    tgt_tokens = corpus.flat_tokens(TARGET)[tgt_rows]

    if quantize:
        src_keys = _encode_chunked(src_codebook, src_reprs.rows[src_rows], threads)
        tgt_keys = _encode_chunked(tgt_codebook, tgt_reprs.rows[tgt_rows], threads)

    else:
        src_keys = src_reprs.rows[src_rows]
        tgt_keys = tgt_reprs.rows[tgt_rows]

    # stable grouping keeps corpus iteration order inside every cache
    order = np.argsort(src_tokens, kind='stable')
    tokens, starts = np.unique(src_tokens[order], return_index=True)
    bounds = np.append(starts, len(order))

    caches = {}

    for token, start, end in zip(tokens, bounds[:-1], bounds[1:]):
        block = order[start:end]

        caches[int(token)] = TokenCache(
            token=int(token),
            src_locs=np.stack([sentence_ids[block], links[block, 0]], axis=1),
            tgt_locs=np.stack([sentence_ids[block], links[block, 1]], axis=1),
            tgt_tokens=tgt_tokens[block],
            keys=np.ascontiguousarray(src_keys[block]),
            tgt_keys=np.ascontiguousarray(tgt_keys[block])
        )

    cache_set = CacheSet(
        caches,
        dim=src_reprs.dim,
        src_codebook=src_codebook if quantize else None,
        tgt_codebook=tgt_codebook if quantize else None
    )

    logging.info(
        f'Built {len(caches)} token caches with {cache_set.total_entries} entries '
        f'({corpus.token_count(SOURCE)} source tokens, quantized={quantize})'
    )

    return cache_set


def _write_record(f: BinaryIO, cache: TokenCache, quantized: bool):
    write_header(
        f, CACHE_MAGIC, CACHE_HEADER,
        cache.token, len(cache), cache.keys.shape[1], cache.tgt_keys.shape[1], int(quantized)
    )

    key_dtype = 'u1' if quantized else 'f4'

    write_array(f, cache.src_locs, 'i8')
    write_array(f, cache.tgt_locs, 'i8')
    write_array(f, cache.tgt_tokens, 'i8')
    write_array(f, cache.keys, key_dtype)
    write_array(f, cache.tgt_keys, key_dtype)


def _read_record(f: BinaryIO, path: str) -> TokenCache:
    token, count, width, tgt_width, quantized = read_header(f, CACHE_MAGIC, CACHE_HEADER, path)

    key_dtype = 'u1' if quantized else 'f4'

    return TokenCache(
        token=token,
        src_locs=read_array(f, 'i8', 2 * count, path).reshape(count, 2),
        tgt_locs=read_array(f, 'i8', 2 * count, path).reshape(count, 2),
        tgt_tokens=read_array(f, 'i8', count, path),
        keys=read_array(f, key_dtype, count * width, path).reshape(count, width),
        tgt_keys=read_array(f, key_dtype, count * tgt_width, path).reshape(count, tgt_width)
    )


def persist_caches(cs: CacheSet, directory: str, pool_threshold: int = 64, extra: Optional[dict] = None):
    """
    Writes a manifest, one file per cache with at least <pool_threshold> entries and a
    pooled file for the smaller caches.

    :param extra:       additional manifest fields (e.g. config hash)
    """
    ensure_dir(directory)

    files = {}
    pooled = []

    for token in sorted(cs.caches):
        cache = cs.caches[token]

        if len(cache) >= pool_threshold:
            name = f'token_{token}.cache'

            with open(os.path.join(directory, name), 'wb') as f:
                _write_record(f, cache, cs.quantized)

            files[str(token)] = name

        else:
            pooled.append(cache)

    with open(os.path.join(directory, POOLED_FILE), 'wb') as f:
        write_header(f, POOL_MAGIC, POOL_HEADER, len(pooled))

        for cache in pooled:
            _write_record(f, cache, cs.quantized)

    codebooks = {}

    if cs.quantized:
        for side, codebook in ((SOURCE, cs.src_codebook), (TARGET, cs.tgt_codebook)):
            codebooks[side] = f'{side}.pqcb'
            save_codebook(codebook, os.path.join(directory, codebooks[side]))

    manifest = {
        'version': CACHE_VERSION,
        'dim': cs.dim,
        'quantized': cs.quantized,
        'n_caches': len(cs),
        'total_entries': cs.total_entries,
        'codebooks': codebooks,
        'files': files,
        'pooled': POOLED_FILE,
        'pooled_tokens': [c.token for c in pooled]
    }

    manifest.update(extra or {})

    with open(os.path.join(directory, MANIFEST), 'w') as f:
        json.dump(manifest, f, indent=2)

    logging.info(
        f'Persisted {len(cs)} caches to {directory}: {len(files)} files, {len(pooled)} pooled'
    )


def read_manifest(directory: str) -> dict:
    path = os.path.join(directory, MANIFEST)

    if not os.path.isfile(path):
        raise MissingArtifactError(f'manifest in {directory}', 'build-cache')

    with open(path) as f:
        manifest = json.load(f)

    if manifest.get('version') != CACHE_VERSION:
        raise FormatError(
            f'{path}: cache version {manifest.get("version")}, expected {CACHE_VERSION}'
        )

    return manifest


def load_caches(directory: str) -> CacheSet:
    """
    :raises MissingArtifactError:   when the directory holds no manifest
    :raises FormatError:            on version / magic mismatches or truncated files
    """
    manifest = read_manifest(directory)

    caches = {}

    for token, name in manifest['files'].items():
        path = os.path.join(directory, name)

        with open(path, 'rb') as f:
            cache = _read_record(f, path)

        if cache.token != int(token):
            raise FormatError(f'{path}: holds token {cache.token}, manifest says {token}')

        caches[cache.token] = cache

    pooled_path = os.path.join(directory, manifest['pooled'])

    with open(pooled_path, 'rb') as f:
        count, = read_header(f, POOL_MAGIC, POOL_HEADER, pooled_path)

        for _ in range(count):
            cache = _read_record(f, pooled_path)
            caches[cache.token] = cache

    src_codebook = tgt_codebook = None

    if manifest['quantized']:
        src_codebook = load_codebook(os.path.join(directory, manifest['codebooks'][SOURCE]))
        tgt_codebook = load_codebook(os.path.join(directory, manifest['codebooks'][TARGET]))

    cs = CacheSet(
        {token: caches[token] for token in sorted(caches)},
        dim=manifest['dim'],
        src_codebook=src_codebook,
        tgt_codebook=tgt_codebook
    )

    if cs.total_entries != manifest['total_entries']:
        raise FormatError(
            f'{directory}: loaded {cs.total_entries} entries, manifest says {manifest["total_entries"]}'
        )

    logging.info(f'Loaded {len(cs)} caches ({cs.total_entries} entries) from {directory}')

    return cs


class GlobalDatastore:
    """
    The vanilla store: every target position of the corpus with its key and token
    """

    def __init__(self, store: KeyStore, tokens: np.ndarray, locs: np.ndarray):
        self.store = store
        self.tokens = tokens
        self.locs = locs

    def __len__(self):
        return len(self.tokens)

    def distances(self, query: np.ndarray, metric: str) -> np.ndarray:
        return self.store.distances(query, metric)


def build_global_datastore(corpus: ParallelCorpus,
                           tgt_reprs: ReprMatrix,
                           codebook: Optional[PQCodebook] = None,
                           threads: int = 1) -> GlobalDatastore:
    if len(tgt_reprs) != corpus.token_count(TARGET):
        raise ValueError(
            f'Target representations have {len(tgt_reprs)} rows, corpus has '
            f'{corpus.token_count(TARGET)} target tokens'
        )

    keys = tgt_reprs.rows if codebook is None else _encode_chunked(codebook, tgt_reprs.rows, threads)

    lengths = corpus.sentence_lengths(TARGET)
    sentence_ids = np.repeat(np.arange(len(lengths)), lengths)
    positions = np.arange(corpus.token_count(TARGET)) - corpus.offsets(TARGET)[sentence_ids]

    logging.info(f'Built the global datastore over {len(keys)} target tokens')

    return GlobalDatastore(
        KeyStore(keys, codebook),
        corpus.flat_tokens(TARGET),
        np.stack([sentence_ids, positions], axis=1)
    )


def train_cache_codebooks(src_reprs: ReprMatrix,
                          tgt_reprs: ReprMatrix,
                          config: PQConfig,
                          metric: str,
                          threads: int = 1) -> Tuple[PQCodebook, PQCodebook]:
    """
    One shared codebook per side, each trained on at most config.train_cap rows
    """
    return tuple(
        train_pq(
            reprs.rows,
            config.M,
            n_codewords=config.n_codewords,
            iters=config.iters,
            seed=config.seed,
            metric=metric,
            train_cap=config.train_cap,
            threads=threads
        )
        for reprs in (src_reprs, tgt_reprs)
    )
