import json

from collections import Counter
from dataclasses import dataclass, field, asdict
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from tools.general import ensure_parent_dir


@dataclass
class BenchReport:
    """
    One bench cell: a decoding mode under one (c, k, metric, quantize) setting.

    attributes:
        - total_distance_ops    <int>           retrieval_ops + decode_ops
        - per_step_ops          <dict>          histogram: scanned entries -> number of steps
        - speedup_vs_vanilla    <float>         vanilla total_distance_ops / this cell's
        - tokens_per_sec        <float>         generated tokens per second of wall time
    """
    mode: str
    c: int
    k: int
    metric: str
    quantized: bool
    lam: float
    sentences: int
    tokens: int
    retrieval_ops: int
    decode_ops: int
    total_distance_ops: int
    max_step_ops: int
    mean_datastore_size: float
    per_step_ops: Dict[int, int] = field(default_factory=dict)
    wall_ms: float = 0.0
    tokens_per_sec: float = 0.0
    speedup_vs_vanilla: Optional[float] = None
    token_accuracy: Optional[float] = None
    bleu: Optional[float] = None

    @classmethod
    def from_translations(cls,
                          translations: list,
                          mode: str,
                          c: int,
                          k: int,
                          metric: str,
                          quantized: bool,
                          lam: float,
                          token_accuracy: Optional[float] = None,
                          bleu: Optional[float] = None) -> 'BenchReport':
        """
        :param translations:    Translation results of one decoding run
        """
        steps = [ops for t in translations for ops in t.step_ops]

        retrieval_ops = int(sum(t.retrieval_ops for t in translations))
        decode_ops = int(sum(steps))
        tokens = int(sum(len(t.best.tokens) for t in translations))
        wall_ms = float(sum(t.wall_ms for t in translations))

        return cls(
            mode=mode,
            c=c,
            k=k,
            metric=metric,
            quantized=quantized,
            lam=lam,
            sentences=len(translations),
            tokens=tokens,
            retrieval_ops=retrieval_ops,
            decode_ops=decode_ops,
            total_distance_ops=retrieval_ops + decode_ops,
            max_step_ops=int(max(steps, default=0)),
            mean_datastore_size=float(np.mean([t.datastore_size for t in translations])) if translations else 0.0,
            per_step_ops=dict(sorted(Counter(steps).items())),
            wall_ms=wall_ms,
            tokens_per_sec=1000 * tokens / wall_ms if wall_ms > 0 else 0.0,
            token_accuracy=token_accuracy,
            bleu=bleu
        )

    def to_dict(self) -> dict:
        data = asdict(self)
        data['per_step_ops'] = {str(ops): count for ops, count in self.per_step_ops.items()}

        return data

    @classmethod
    def from_dict(cls, data: dict) -> 'BenchReport':
        data = dict(data)
        data['per_step_ops'] = {int(ops): count for ops, count in data.get('per_step_ops', {}).items()}

        return cls(**data)


class BenchResults:
    """
    Collection of bench reports, exported as JSON lines, CSV or a text table
    """

    COLUMNS = [
        'mode', 'c', 'k', 'metric', 'quantized', 'sentences', 'tokens', 'total_distance_ops',
        'max_step_ops', 'mean_datastore_size', 'speedup_vs_vanilla', 'tokens_per_sec', 'wall_ms',
        'token_accuracy', 'bleu'
    ]

    def __init__(self, reports: Optional[List[BenchReport]] = None):
        self.reports = list(reports or [])

    def __len__(self):
        return len(self.reports)

    def __iter__(self):
        return iter(self.reports)

    def add_result(self, report: BenchReport):
        self.reports.append(report)

    def fill_speedups(self):
        """
        Relates every report to the vanilla report of the same metric and key format;
        a vanilla step scans the whole store whatever k is
        """
        vanilla = {}

        for r in self.reports:
            if r.mode == 'vanilla':
                vanilla.setdefault((r.metric, r.quantized), r.total_distance_ops)

        for r in self.reports:
            ops = vanilla.get((r.metric, r.quantized))

            if ops is not None and r.total_distance_ops > 0:
                r.speedup_vs_vanilla = ops / r.total_distance_ops

    def select(self, **conditions) -> List[BenchReport]:
        return [
            r for r in self.reports
            if all(getattr(r, key) == value for key, value in conditions.items())
        ]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([r.to_dict() for r in self.reports], columns=list(BenchReport.__dataclass_fields__))

    def to_table(self) -> str:
        if not self.reports:
            return '(no bench reports)'

        return self.to_frame()[self.COLUMNS].to_string(index=False, float_format=lambda x: f'{x:.4g}')

    def to_csv(self, filepath: str):
        ensure_parent_dir(filepath)

        self.to_frame().drop(columns=['per_step_ops']).to_csv(filepath, index=False)

    def to_jsonl(self, filepath: str):
        """
        Saves reports as one JSON record per line
        """
        ensure_parent_dir(filepath)

        with open(filepath, 'w') as f:
            for report in self.reports:
                f.write(json.dumps(report.to_dict()) + '\n')

    @classmethod
    def read_jsonl(cls, filepath: str) -> 'BenchResults':
        instance = cls()

        with open(filepath) as f:
            for line in f:
                if line.strip():
                    instance.add_result(BenchReport.from_dict(json.loads(line)))

        return instance
