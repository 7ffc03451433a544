import logging

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from tools.general import OpCounter, timer
from tools.datastore.cache import CacheSet, GlobalDatastore
from tools.datastore.retrieval import RetrievalConfig, make_target_datastore
from tools.decoding.beam import DecodeConfig, Hypothesis, beam_decode, FAST, VANILLA
from tools.decoding.models import BaseModel
from tools.search.index import TokenIndex


@dataclass
class Translation:
    """
    attributes:
        - hypotheses        <list<Hypothesis>>  ranked beam output
        - retrieval_ops     <int>               distance computations of the source-side search
        - step_ops          <list<int>>         distance computations of every decoding step
        - datastore_size    <int>               entries searched at every step
        - wall_ms           <float>             retrieval plus decoding time
    """
    hypotheses: List[Hypothesis]
    retrieval_ops: int
    step_ops: List[int]
    datastore_size: int
    wall_ms: float

    @property
    def best(self) -> Hypothesis:
        return self.hypotheses[0]

    @property
    def decode_ops(self) -> int:
        return int(sum(self.step_ops))


class Translator:
    """
    Decodes test sentences in one of the three modes:
        - fast:     per-sentence TargetDatastore from the token caches
        - vanilla:  the corpus-level GlobalDatastore
        - base:     the base model alone
    """

    def __init__(self,
                 model: BaseModel,
                 cfg: DecodeConfig,
                 cs: Optional[CacheSet] = None,
                 indexes: Optional[Dict[int, TokenIndex]] = None,
                 retrieval: Optional[RetrievalConfig] = None,
                 global_ds: Optional[GlobalDatastore] = None):
        if cfg.mode == FAST and (cs is None or indexes is None):
            raise ValueError('Fast decoding needs the token caches and their indexes')

        if cfg.mode == VANILLA and global_ds is None:
            raise ValueError('Vanilla decoding needs the global datastore')

        self.model = model
        self.cfg = cfg
        self.cs = cs
        self.indexes = indexes
        self.retrieval = retrieval or RetrievalConfig(metric=cfg.metric)
        self.global_ds = global_ds

    def source_representations(self, source: Sequence[int]) -> np.ndarray:
        return self.model.embedder.source_matrix([np.asarray(source, dtype=np.int64)])

    def datastore(self,
                  source: Sequence[int],
                  source_reprs: Optional[np.ndarray] = None,
                  counter: Optional[OpCounter] = None):
        if self.cfg.mode == FAST:
            if source_reprs is None:
                source_reprs = self.source_representations(source)

            return make_target_datastore(source, source_reprs, self.cs, self.indexes, self.retrieval, counter)

        if self.cfg.mode == VANILLA:
            return self.global_ds

        return None

    def translate(self, source: Sequence[int], source_reprs: Optional[np.ndarray] = None) -> Translation:
        retrieval_counter = OpCounter()
        step_counter = OpCounter()

        with timer() as elapsed:
            ds = self.datastore(source, source_reprs, retrieval_counter)
            hypotheses = beam_decode(source, self.model, ds, self.cfg, step_counter)

        return Translation(
            hypotheses=hypotheses,
            retrieval_ops=retrieval_counter.total,
            step_ops=step_counter.steps,
            datastore_size=len(ds) if ds is not None else 0,
            wall_ms=elapsed()
        )

    def translate_all(self,
                      sources: List[np.ndarray],
                      source_reprs: Optional[List[np.ndarray]] = None) -> List[Translation]:
        translations = []

        for i, source in enumerate(sources):
            translations.append(
                self.translate(source, source_reprs[i] if source_reprs is not None else None)
            )

        logging.info(
            f'Decoded {len(sources)} sentences in {self.cfg.mode} mode '
            f'({sum(t.wall_ms for t in translations):.1f} ms)'
        )

        return translations
