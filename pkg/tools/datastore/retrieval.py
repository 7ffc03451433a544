"""
Test-time datastore generation: every source position searches the cache of its own
token type for the top-c neighbours, whose aligned target entries form a small
per-sentence datastore of at most c * n entries.
"""
import logging

from dataclasses import dataclass
from multiprocessing.pool import ThreadPool
from typing import Dict, List, Optional, Sequence

import numpy as np

from tools.general import (
    OpCounter, ensure_parent_dir, write_header, read_header, read_array, write_array
)
from tools.search.index import SearchHit, TokenIndex, search_with_ops
from tools.search.pq import PQCodebook
from tools.datastore.cache import CacheSet, KeyStore

DATASTORE_MAGIC = b'FKNNTGDS'
DATASTORE_HEADER = 'QIB'  # entry count, key width, key format


@dataclass
class RetrievalConfig:
    c: int = 512
    metric: str = 'cosine'
    nprobe: int = 32
    dedupe: bool = True
    threads: int = 1

    def __post_init__(self):
        if self.c < 1:
            raise ValueError(f'c must be >= 1, got {self.c}')


class TargetDatastore:
    """
    Per-sentence datastore D_target.

    attributes:
        - tgt_tokens    <np.ndarray>    (size,) target TokenIds (the values)
        - store         <KeyStore>      target keys (vectors or PQ codes)
        - src_positions <np.ndarray>    (size,) test source position that selected the entry
        - src_locs      <np.ndarray>    (size, 2) training source occurrence (sentence, position)
        - tgt_locs      <np.ndarray>    (size, 2) training target occurrence (sentence, position)
    """

    def __init__(self,
                 tgt_tokens: np.ndarray,
                 store: KeyStore,
                 src_positions: np.ndarray,
                 src_locs: np.ndarray,
                 tgt_locs: np.ndarray):
        self.tgt_tokens = tgt_tokens
        self.store = store
        self.src_positions = src_positions
        self.src_locs = src_locs
        self.tgt_locs = tgt_locs

    def __len__(self):
        return len(self.tgt_tokens)

    @property
    def tokens(self) -> np.ndarray:
        return self.tgt_tokens

    def distances(self, query: np.ndarray, metric: str) -> np.ndarray:
        return self.store.distances(query, metric)

    def entries(self) -> List[dict]:
        return [
            {
                'tgt_token': int(self.tgt_tokens[i]),
                'src_query_pos': int(self.src_positions[i]),
                'src_loc': (int(self.src_locs[i, 0]), int(self.src_locs[i, 1])),
                'tgt_loc': (int(self.tgt_locs[i, 0]), int(self.tgt_locs[i, 1]))
            }
            for i in range(len(self))
        ]

    @classmethod
    def empty(cls, key_width: int, codebook: Optional[PQCodebook] = None) -> 'TargetDatastore':
        dtype = np.uint8 if codebook is not None else np.float32

        return cls(
            np.zeros(0, dtype=np.int64),
            KeyStore(np.zeros((0, key_width), dtype=dtype), codebook),
            np.zeros(0, dtype=np.int64),
            np.zeros((0, 2), dtype=np.int64),
            np.zeros((0, 2), dtype=np.int64)
        )


def select_source_neighbors(test_src: Sequence[int],
                            test_reprs: np.ndarray,
                            cs: CacheSet,
                            indexes: Dict[int, TokenIndex],
                            cfg: RetrievalConfig,
                            counter: Optional[OpCounter] = None) -> List[List[SearchHit]]:
    """
    :param test_src:        source TokenIds of the test sentence
    :param test_reprs:      (n, D) representations of its positions

    :return:                per position, the top-min(c, |D_v|) hits of its own token cache;
                            empty for tokens without a cache

    :raises ValueError:     on a representation shape or index metric that does not match
    """
    test_reprs = np.atleast_2d(np.asarray(test_reprs, dtype=np.float32))

    if len(test_reprs) != len(test_src):
        raise ValueError(
            f'{len(test_reprs)} representations for a source of length {len(test_src)}'
        )

    if test_reprs.shape[1] != cs.dim:
        raise ValueError(f'Representation dim {test_reprs.shape[1]} does not match cache dim {cs.dim}')

    for token in set(int(t) for t in test_src):
        index = indexes.get(token)

        if index is not None and index.metric != cfg.metric:
            raise ValueError(
                f'Token index metric {index.metric} differs from retrieval metric {cfg.metric}'
            )

    def search_position(p: int) -> List[SearchHit]:
        index = indexes.get(int(test_src[p]))

        if index is None:
            return []

        hits, ops = search_with_ops(index, test_reprs[p], cfg.c, cfg.nprobe)

        if counter is not None:
            counter.add(ops)

        return hits

    if cfg.threads > 1:
        with ThreadPool(cfg.threads) as pool:
            return pool.map(search_position, range(len(test_src)))

    return [search_position(p) for p in range(len(test_src))]


def assemble_target_datastore(test_src: Sequence[int],
                              hits: List[List[SearchHit]],
                              cs: CacheSet,
                              cfg: RetrievalConfig) -> TargetDatastore:
    """
    Maps selected source occurrences through their alignments, in order of source
    position then hit rank. With cfg.dedupe a target occurrence reached from several
    positions is kept once.
    """
    key_width = cs.tgt_codebook.M if cs.quantized else cs.dim

    tokens, keys, positions, src_locs, tgt_locs = [], [], [], [], []

    for p, position_hits in enumerate(hits):
        if not position_hits:
            continue

        cache = cs.get(int(test_src[p]))
        entry_ids = np.array([h.entry_id for h in position_hits], dtype=np.int64)

        tokens.append(cache.tgt_tokens[entry_ids])
        keys.append(cache.tgt_keys[entry_ids])
        positions.append(np.full(len(entry_ids), p, dtype=np.int64))
        src_locs.append(cache.src_locs[entry_ids])
        tgt_locs.append(cache.tgt_locs[entry_ids])

    if not tokens:
        return TargetDatastore.empty(key_width, cs.tgt_codebook)

    tokens = np.concatenate(tokens)
    keys = np.concatenate(keys)
    positions = np.concatenate(positions)
    src_locs = np.concatenate(src_locs)
    tgt_locs = np.concatenate(tgt_locs)

    if cfg.dedupe:
        _, first = np.unique(tgt_locs, axis=0, return_index=True)
        keep = np.sort(first)

        tokens, keys, positions = tokens[keep], keys[keep], positions[keep]
        src_locs, tgt_locs = src_locs[keep], tgt_locs[keep]

    datastore = TargetDatastore(tokens, KeyStore(keys, cs.tgt_codebook), positions, src_locs, tgt_locs)

    logging.debug(f'Assembled a target datastore of {len(datastore)} entries for {len(test_src)} source tokens')

    return datastore


def make_target_datastore(test_src: Sequence[int],
                          test_reprs: np.ndarray,
                          cs: CacheSet,
                          indexes: Dict[int, TokenIndex],
                          cfg: RetrievalConfig,
                          counter: Optional[OpCounter] = None) -> TargetDatastore:
    hits = select_source_neighbors(test_src, test_reprs, cs, indexes, cfg, counter)

    return assemble_target_datastore(test_src, hits, cs, cfg)


def save_target_datastore(ds: TargetDatastore, path: str):
    """
    Dumps a datastore with its provenance; keys use the cache key layout
    """
    ensure_parent_dir(path)

    with open(path, 'wb') as f:
        write_header(
            f, DATASTORE_MAGIC, DATASTORE_HEADER,
            len(ds), ds.store.keys.shape[1], int(ds.store.quantized)
        )
        write_array(f, ds.tgt_tokens, 'i8')
        write_array(f, ds.src_positions, 'i8')
        write_array(f, ds.src_locs, 'i8')
        write_array(f, ds.tgt_locs, 'i8')
        write_array(f, ds.store.keys, 'u1' if ds.store.quantized else 'f4')


def load_target_datastore(path: str, codebook: Optional[PQCodebook] = None) -> TargetDatastore:
    with open(path, 'rb') as f:
        count, width, quantized = read_header(f, DATASTORE_MAGIC, DATASTORE_HEADER, path)

        tokens = read_array(f, 'i8', count, path)
        positions = read_array(f, 'i8', count, path)
        src_locs = read_array(f, 'i8', 2 * count, path).reshape(count, 2)
        tgt_locs = read_array(f, 'i8', 2 * count, path).reshape(count, 2)
        keys = read_array(f, 'u1' if quantized else 'f4', count * width, path).reshape(count, width)

    if quantized and codebook is None:
        raise ValueError(f'{path}: quantized datastore needs the target PQ codebook')

    return TargetDatastore(tokens, KeyStore(keys, codebook if quantized else None), positions, src_locs, tgt_locs)
