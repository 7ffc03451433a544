"""
Length-normalized beam search. Every step of every beam interpolates the base model
distribution with the kNN distribution of the attached datastore.
"""
import logging

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from tools.general import OpCounter
from tools.decoding.distribution import SparseDistribution, knn_distribution, interpolate
from tools.decoding.models import BaseModel
from tools.search.pq import check_metric
from tools.text.corpus import EOS_ID

FAST = 'fast'
VANILLA = 'vanilla'
BASE = 'base'

MODES = (FAST, VANILLA, BASE)


@dataclass
class DecodeConfig:
    """
    attributes:
        - lam           <float>     interpolation weight of the kNN distribution
        - temperature   <float>     softmax temperature over negative distances
        - k             <int>       entries retrieved per step
        - beam          <int>       beam size
        - max_len       <int>       hard cap on generated tokens
        - max_len_a     <float>     generated tokens <= a * source length + b
        - max_len_b     <int>
        - mode          <str>       fast, vanilla or base
        - metric        <str>       l2, cosine or ip
    """
    lam: float = 0.5
    temperature: float = 1.0
    k: int = 512
    beam: int = 4
    max_len: int = 256
    max_len_a: float = 1.0
    max_len_b: int = 5
    mode: str = FAST
    metric: str = 'cosine'

    def __post_init__(self):
        if not 0 <= self.lam <= 1:
            raise ValueError(f'lambda must be in [0, 1], got {self.lam}')

        if self.temperature <= 0:
            raise ValueError(f'temperature must be > 0, got {self.temperature}')

        if self.k < 1:
            raise ValueError(f'k must be >= 1, got {self.k}')

        if self.beam < 1:
            raise ValueError(f'beam must be >= 1, got {self.beam}')

        if self.mode not in MODES:
            raise ValueError(f'Unknown decoding mode "{self.mode}", expected one of {MODES}')

        check_metric(self.metric)

    def max_length(self, source_length: int) -> int:
        return max(1, min(self.max_len, int(self.max_len_a * source_length + self.max_len_b)))


@dataclass
class Hypothesis:
    """
    attributes:
        - tokens        <list<int>>     generated TokenIds without </s>
        - score         <float>         cumulative log probability
        - per_step_ops  <list<int>>     distance computations of every step on this path
        - finished      <bool>          ended with </s> before the length limit
    """
    tokens: List[int]
    score: float
    per_step_ops: List[int] = field(default_factory=list)
    finished: bool = False

    @property
    def normalized_score(self) -> float:
        return self.score / max(1, len(self.tokens) + int(self.finished))


def step_distribution(model_step,
                      ds,
                      cfg: DecodeConfig) -> Tuple[SparseDistribution, int]:
    """
    :returns:       the interpolated distribution and the number of scanned entries
    """
    if cfg.mode == BASE or ds is None or len(ds) == 0:
        return model_step.p_mt, 0

    p_knn = knn_distribution(model_step.hidden, ds, cfg.k, cfg.temperature, cfg.metric)

    return interpolate(model_step.p_mt, p_knn, cfg.lam), len(ds)


def beam_decode(source: Sequence[int],
                model: BaseModel,
                ds,
                cfg: DecodeConfig,
                counter: Optional[OpCounter] = None) -> List[Hypothesis]:
    """
    :param ds:          TargetDatastore of this source (fast), GlobalDatastore (vanilla),
                        ignored in base mode; an empty store falls back to p_MT
    :param counter:     receives the distance computations of every step over all beams

    :returns:           hypotheses ranked by length-normalized score, earlier completion
                        first on ties; unfinished ones are flagged
    """
    if cfg.mode != BASE and ds is None:
        raise ValueError(f'Mode {cfg.mode} needs a datastore')

    source = np.asarray(source, dtype=np.int64)
    max_length = cfg.max_length(len(source))

    active = [Hypothesis(tokens=[], score=0.0)]
    finished: List[Hypothesis] = []

    for _ in range(max_length):
        scores, beam_ids, tokens = [], [], []
        step_ops = []

        for b, hyp in enumerate(active):
            p, ops = step_distribution(model.step(source, hyp.tokens), ds, cfg)
            step_ops.append(ops)

            support = p.probs > 0

            scores.append(hyp.score + np.log(p.probs[support]))
            tokens.append(p.tokens[support])
            beam_ids.append(np.full(int(support.sum()), b))

        if counter is not None:
            counter.add_step(sum(step_ops))

        scores = np.concatenate(scores)
        tokens = np.concatenate(tokens)
        beam_ids = np.concatenate(beam_ids)

        # best score first, then lower token id, then earlier beam
        order = np.lexsort((beam_ids, tokens, -scores))[:cfg.beam - len(finished)]

        next_active = []

        for i in order:
            parent = active[beam_ids[i]]
            ops = parent.per_step_ops + [step_ops[beam_ids[i]]]

            if tokens[i] == EOS_ID:
                finished.append(Hypothesis(list(parent.tokens), float(scores[i]), ops, finished=True))

            else:
                next_active.append(Hypothesis(parent.tokens + [int(tokens[i])], float(scores[i]), ops))

        active = next_active

        if not active or len(finished) >= cfg.beam:
            break

    if active:
        logging.debug(f'{len(active)} hypotheses reached the length limit {max_length} unfinished')

    return sorted(finished + active, key=lambda h: -h.normalized_score)
