import math

from collections import Counter
from typing import List, Sequence

MAX_ORDER = 4


def _ngrams(sentence: Sequence, n: int) -> Counter:
    return Counter(tuple(sentence[i:i + n]) for i in range(len(sentence) - n + 1))


def _check_counts(hyps: List[Sequence], refs: List[Sequence]):
    if len(hyps) != len(refs):
        raise ValueError(f'{len(hyps)} hypotheses but {len(refs)} references')

    if not refs or sum(len(r) for r in refs) == 0:
        raise ValueError('empty reference')


def corpus_bleu(hyps: List[Sequence], refs: List[Sequence], max_order: int = MAX_ORDER) -> float:
    """
    Corpus-level BLEU on a 0-100 scale with one reference per hypothesis.

    Clipped n-gram matches and totals are summed over the corpus. An order without
    matches gets 1 / (2^k * total) for its k-th occurrence (exponential smoothing);
    orders longer than every hypothesis are left out. No unigram match gives 0.

    :raises ValueError:     on differing counts or an empty reference side
    """
    _check_counts(hyps, refs)

    matches = [0] * max_order
    totals = [0] * max_order

    for hyp, ref in zip(hyps, refs):
        hyp, ref = list(hyp), list(ref)

        for n in range(1, max_order + 1):
            hyp_ngrams = _ngrams(hyp, n)
            ref_ngrams = _ngrams(ref, n)

            matches[n - 1] += sum(min(count, ref_ngrams[g]) for g, count in hyp_ngrams.items())
            totals[n - 1] += max(0, len(hyp) - n + 1)

    if matches[0] == 0:
        return 0.0

    log_precisions = []
    smooth = 1

    for match, total in zip(matches, totals):
        if total == 0:
            continue

        if match == 0:
            smooth *= 2
            log_precisions.append(-math.log(smooth * total))

        else:
            log_precisions.append(math.log(match / total))

    hyp_length = sum(len(h) for h in hyps)
    ref_length = sum(len(r) for r in refs)

    brevity_penalty = 1.0 if hyp_length > ref_length else math.exp(1 - ref_length / hyp_length)

    return 100 * brevity_penalty * math.exp(math.fsum(log_precisions) / len(log_precisions))


def token_accuracy(hyps: List[Sequence], refs: List[Sequence]) -> float:
    """
    :returns:       share of reference positions whose token the hypothesis reproduces
                    at the same position
    """
    _check_counts(hyps, refs)

    correct = sum(
        sum(1 for h, r in zip(hyp, ref) if h == r)
        for hyp, ref in zip(hyps, refs)
    )

    return correct / sum(len(r) for r in refs)
