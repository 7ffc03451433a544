import math

import pytest

from tools.evaluation.metrics import corpus_bleu, token_accuracy


def words(line):
    return line.split()


def test_bleu_of_an_identical_corpus():
    refs = [words('the cat sat on the mat'), words('a dog barked')]

    assert corpus_bleu(refs, refs) == pytest.approx(100)


def test_bleu_with_smoothed_precisions():
    hyp = [words('a x c y e')]
    ref = [words('a b c d e')]

    expected = 100 * (3 / 5 * 1 / 8 * 1 / 12 * 1 / 16) ** 0.25

    assert corpus_bleu(hyp, ref) == pytest.approx(expected)
    assert corpus_bleu(hyp, ref) == pytest.approx(14.06, abs=0.01)


def test_bleu_brevity_penalty():
    hyp = [words('a b c d')]
    ref = [words('a b c d e f')]

    assert corpus_bleu(hyp, ref) == pytest.approx(100 * math.exp(1 - 6 / 4))


def test_bleu_without_unigram_matches():
    assert corpus_bleu([words('x y z')], [words('a b c')]) == 0


def test_bleu_skips_orders_longer_than_the_hypotheses():
    # only unigrams and bigrams exist; both match fully
    assert corpus_bleu([words('a b')], [words('a b')]) == pytest.approx(100)


def test_token_accuracy():
    hyps = [[1, 2, 3], [4, 9]]
    refs = [[1, 2, 4], [4, 5, 6]]

    assert token_accuracy(hyps, refs) == pytest.approx(3 / 6)

    # extra hypothesis tokens are not counted
    assert token_accuracy([[1, 2, 3, 7]], [[1, 2, 3]]) == 1


@pytest.mark.parametrize('metric', [corpus_bleu, token_accuracy])
def test_invalid_inputs(metric):
    with pytest.raises(ValueError, match='empty reference'):
        metric([[]], [[]])

    with pytest.raises(ValueError, match='2 hypotheses but 1 references'):
        metric([[1], [2]], [[1]])
