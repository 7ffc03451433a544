"""
Bench harness: decodes a test set in base / fast / vanilla mode over a grid of settings
and reports distance computations, wall time and translation quality.
"""
import logging

from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from tools.data_structure import BenchReport, BenchResults
from tools.datastore.cache import (
    CacheSet, GlobalDatastore, build_caches, build_global_datastore, train_cache_codebooks
)
from tools.datastore.indexes import build_indexes
from tools.datastore.retrieval import RetrievalConfig, make_target_datastore
from tools.decoding.beam import DecodeConfig, BASE, FAST, VANILLA
from tools.decoding.distribution import knn_distribution
from tools.decoding.models import BaseModel
from tools.decoding.translator import Translator
from tools.evaluation.metrics import corpus_bleu, token_accuracy
from tools.evaluation.synthetic import NeighbourhoodCase
from tools.search.index import IndexConfig, TokenIndex
from tools.search.pq import PQConfig, decode
from tools.text.corpus import ParallelCorpus, TestSet
from tools.text.representations import ReprMatrix, normalize_rows


@dataclass
class BenchGrid:
    """
    Cells of the bench: modes x metrics x quantize, with c swept for the fast mode and
    k swept for the retrieval modes. <decode> and <retrieval> provide the remaining settings.
    """
    modes: Tuple[str, ...] = (BASE, FAST, VANILLA)
    cs: Tuple[int, ...] = (8, 64, 512)
    ks: Tuple[int, ...] = (8,)
    metrics: Tuple[str, ...] = ('cosine',)
    quantize: Tuple[bool, ...] = (False,)
    decode: DecodeConfig = field(default_factory=lambda: DecodeConfig(beam=1))
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)


class BenchContext:
    """
    Training-side artifacts shared by the bench cells. Caches, indexes and the global
    store are built once per (metric, quantize) and reused.
    """

    def __init__(self,
                 corpus: ParallelCorpus,
                 src_reprs: ReprMatrix,
                 tgt_reprs: ReprMatrix,
                 model: BaseModel,
                 index_config: IndexConfig = IndexConfig(),
                 pq_config: PQConfig = PQConfig(),
                 threads: int = 1):
        self.corpus = corpus
        self.src_reprs = src_reprs
        self.tgt_reprs = tgt_reprs
        self.model = model
        self.index_config = index_config
        self.pq_config = pq_config
        self.threads = threads

        self._stores: Dict[Tuple[str, bool], Tuple[CacheSet, Dict[int, TokenIndex]]] = {}
        self._global: Dict[Tuple[str, bool], GlobalDatastore] = {}

    def add_stores(self, metric: str, cs: CacheSet, indexes: Dict[int, TokenIndex]):
        """
        Registers caches and indexes built elsewhere (e.g. loaded from a cache directory)
        """
        self._stores[(metric, cs.quantized)] = (cs, indexes)

    def stores(self, metric: str, quantize: bool) -> Tuple[CacheSet, Dict[int, TokenIndex]]:
        key = (metric, quantize)

        if key not in self._stores:
            src_codebook = tgt_codebook = None

            if quantize:
                src_codebook, tgt_codebook = train_cache_codebooks(
                    self.src_reprs, self.tgt_reprs, self.pq_config, metric, self.threads
                )

            cs = build_caches(
                self.corpus, self.src_reprs, self.tgt_reprs,
                quantize=quantize,
                src_codebook=src_codebook,
                tgt_codebook=tgt_codebook,
                threads=self.threads
            )

            config = replace(self.index_config, metric=metric, quantize=quantize)

            self._stores[key] = (cs, build_indexes(cs, config, self.threads))

        return self._stores[key]

    def global_datastore(self, metric: str, quantize: bool) -> GlobalDatastore:
        key = (metric, quantize)

        if key not in self._global:
            cs, _ = self.stores(metric, quantize)

            self._global[key] = build_global_datastore(
                self.corpus, self.tgt_reprs, codebook=cs.tgt_codebook, threads=self.threads
            )

        return self._global[key]

    def translator(self, decode_cfg: DecodeConfig, retrieval: RetrievalConfig, quantize: bool) -> Translator:
        if decode_cfg.mode == BASE:
            return Translator(self.model, decode_cfg)

        cs, indexes = self.stores(decode_cfg.metric, quantize)

        global_ds = self.global_datastore(decode_cfg.metric, quantize) if decode_cfg.mode == VANILLA else None

        return Translator(self.model, decode_cfg, cs, indexes, retrieval, global_ds)


def _cells(grid: BenchGrid):
    for metric in grid.metrics:
        for quantize in grid.quantize:
            for mode in grid.modes:
                # c only matters for the fast mode, k only for the retrieval modes
                cs = grid.cs if mode == FAST else (0,)
                ks = grid.ks if mode != BASE else (0,)

                for c in cs:
                    for k in ks:
                        yield metric, quantize, mode, c, k


def run_bench(context: BenchContext,
              test_set: TestSet,
              grid: BenchGrid,
              test_reprs: Optional[List[np.ndarray]] = None) -> BenchResults:
    """
    Decodes the test set for every cell of the grid, sequentially.

    :param test_reprs:      per-sentence source representations; synthetic ones from the
                            model's embedder when None
    """
    results = BenchResults()

    for metric, quantize, mode, c, k in _cells(grid):
        decode_cfg = replace(grid.decode, mode=mode, metric=metric, k=max(1, k))
        retrieval = replace(grid.retrieval, c=max(1, c), metric=metric)

        translator = context.translator(decode_cfg, retrieval, quantize)
        translations = translator.translate_all(test_set.sources, test_reprs)

        accuracy = bleu = None

        if test_set.references is not None:
            hyps = [t.best.tokens for t in translations]

            accuracy = token_accuracy(hyps, test_set.references)
            bleu = corpus_bleu(hyps, test_set.references)

        report = BenchReport.from_translations(
            translations, mode, c, k, metric, quantize, decode_cfg.lam,
            token_accuracy=accuracy, bleu=bleu
        )

        logging.info(
            f'Bench cell mode={mode} c={c} k={k} metric={metric} quantized={quantize}: '
            f'{report.total_distance_ops} distance ops, {report.wall_ms:.1f} ms, accuracy={accuracy}'
        )

        results.add_result(report)

    results.fill_speedups()

    return results


def fast_step_bound(c: int, source_length: int) -> int:
    """
    :returns:       entries a fast-mode step may scan at most, c * n
    """
    return c * source_length


def k_sweep(cases: List[NeighbourhoodCase],
            ks: Sequence[int],
            temperature: float = 1.0,
            metric: str = 'l2') -> pd.DataFrame:
    """
    :returns:       share of cases whose kNN argmax is the answer, per k
    """
    rows = []

    for k in ks:
        hits = [
            knn_distribution(case.query, case.datastore, k, temperature, metric).argmax() == case.answer
            for case in cases
        ]

        rows.append({'k': k, 'accuracy': float(np.mean(hits))})

    return pd.DataFrame(rows, columns=['k', 'accuracy'])


@dataclass
class Heatmap:
    """
    attributes:
        - similarity    <np.ndarray>    (m, |D_target|) cosine similarity of gold decoder
                                        states (rows) and retrieved target keys (columns)
        - row_tokens    <list<int>>     reference tokens
        - col_tokens    <list<int>>     datastore values
    """
    similarity: np.ndarray
    row_tokens: List[int]
    col_tokens: List[int]


def similarity_heatmap(context: BenchContext,
                       source: np.ndarray,
                       reference: np.ndarray,
                       retrieval: RetrievalConfig,
                       quantize: bool = False,
                       source_reprs: Optional[np.ndarray] = None) -> Heatmap:
    """
    Compares the decoder states of the gold translation with the keys of the sentence's
    TargetDatastore; retrieved keys of the gold tokens should light up on the diagonal.
    """
    embedder = context.model.embedder
    cs, indexes = context.stores(retrieval.metric, quantize)

    if source_reprs is None:
        source_reprs = embedder.source_matrix([source])

    ds = make_target_datastore(source, source_reprs, cs, indexes, retrieval)

    keys = ds.store.keys

    if ds.store.quantized:
        keys = decode(ds.store.codebook, keys)

    gold = embedder.target_matrix([source], [reference])

    similarity = normalize_rows(gold) @ normalize_rows(np.asarray(keys, dtype=np.float32)).T

    return Heatmap(similarity, [int(t) for t in reference], [int(t) for t in ds.tgt_tokens])
