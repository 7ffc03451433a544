import numpy as np
import pytest

from tools.text.corpus import (
    Vocabulary, UNK_ID, BOS_ID, EOS_ID, SOURCE, TARGET, load_parallel_corpus, load_alignments,
    load_test_set, parse_alignment, format_alignment, save_parallel_corpus
)


def write(path, lines):
    path.write_text('\n'.join(lines) + '\n', encoding='utf-8')
    return str(path)


@pytest.fixture
def files(tmp_path):
    src = write(tmp_path / 'train.src', ['A B C', 'B C'])
    tgt = write(tmp_path / 'train.tgt', ['a b c', 'c b d'])
    align = write(tmp_path / 'train.align', ['0-0 1-1 2-2', '0-1 1-0'])

    return src, tgt, align


def test_vocabulary_reserves_special_tokens():
    vocab = Vocabulary.build([['x', 'y', 'x'], ['z']])

    assert vocab.entries[:3] == ['<unk>', '<s>', '</s>']
    assert (UNK_ID, BOS_ID, EOS_ID) == (0, 1, 2)
    assert vocab.id('x') == 3
    assert vocab.id('never seen') == UNK_ID
    assert vocab.freq == {3: 2, 4: 1, 5: 1}
    assert vocab.median_frequency() == 1.0


def test_load_corpus_and_alignments(files):
    src, tgt, align = files

    corpus = load_alignments(align, load_parallel_corpus(src, tgt))

    assert len(corpus) == 2
    assert corpus.token_count(SOURCE) == 5
    assert corpus.token_count(TARGET) == 6
    assert corpus.alignment_count() == 5

    assert corpus.pairs[1].alignment.tolist() == [[0, 1], [1, 0]]
    assert corpus.vocab_src.decode(corpus.pairs[1].src) == ['B', 'C']
    assert corpus.locate(SOURCE, 3) == (1, 0)
    assert corpus.row(TARGET, 1, 2) == 5


def test_save_and_reload_keeps_the_canonical_form(files, tmp_path):
    src, tgt, align = files
    corpus = load_alignments(align, load_parallel_corpus(src, tgt))

    out = [str(tmp_path / name) for name in ('out.src', 'out.tgt', 'out.align')]
    save_parallel_corpus(corpus, *out)

    reloaded = load_alignments(out[2], load_parallel_corpus(out[0], out[1]))

    assert [p.alignment_set() for p in reloaded.pairs] == [p.alignment_set() for p in corpus.pairs]
    assert [p.src.tolist() for p in reloaded.pairs] == [p.src.tolist() for p in corpus.pairs]
    assert open(out[2]).read().splitlines() == ['0-0 1-1 2-2', '0-1 1-0']


def test_line_count_mismatch(tmp_path):
    src = write(tmp_path / 'a.src', ['A', 'B'])
    tgt = write(tmp_path / 'a.tgt', ['a'])

    with pytest.raises(ValueError, match='line-count mismatch'):
        load_parallel_corpus(src, tgt)


def test_empty_corpus(tmp_path):
    src = tmp_path / 'empty.src'
    tgt = tmp_path / 'empty.tgt'
    src.write_text('')
    tgt.write_text('')

    with pytest.raises(ValueError, match='empty corpus'):
        load_parallel_corpus(str(src), str(tgt))


def test_empty_line_is_rejected(tmp_path):
    src = write(tmp_path / 'b.src', ['A', ''])
    tgt = write(tmp_path / 'b.tgt', ['a', 'b'])

    with pytest.raises(ValueError, match=':2: empty line'):
        load_parallel_corpus(src, tgt)


def test_reserved_tokens_are_rejected(tmp_path):
    src = write(tmp_path / 'c.src', ['A B', 'A </s> B'])
    tgt = write(tmp_path / 'c.tgt', ['a b', 'a b'])

    with pytest.raises(ValueError, match=r'c.src:2: reserved token "</s>"'):
        load_parallel_corpus(src, tgt)

    with pytest.raises(ValueError, match='reserved token "<unk>"'):
        Vocabulary.build([['x'], ['<unk>', 'y']])


def test_frequencies_sum_to_the_token_count(files):
    corpus = load_parallel_corpus(files[0], files[1])

    assert sum(corpus.vocab_src.freq.values()) == corpus.token_count(SOURCE) == 5
    assert sum(corpus.vocab_tgt.freq.values()) == corpus.token_count(TARGET) == 6


def test_parse_alignment():
    assert parse_alignment('0-0 2-1 1-1') == {(0, 0), (1, 1), (2, 1)}
    assert parse_alignment('') == set()
    assert format_alignment({(2, 1), (0, 0)}) == '0-0 2-1'

    for line in ('0-', '0-1-2', 'a-1', '0:1'):
        with pytest.raises(ValueError, match='malformed'):
            parse_alignment(line)


def test_out_of_range_alignment_names_the_line(files, tmp_path):
    src, tgt, _ = files
    align = write(tmp_path / 'bad.align', ['0-0', '2-0'])

    with pytest.raises(ValueError, match=r'bad\.align:2: alignment 2-0 out of range'):
        load_alignments(align, load_parallel_corpus(src, tgt))


def test_unaligned_positions(files, tmp_path):
    src, tgt, _ = files
    align = write(tmp_path / 'sparse.align', ['0-0', ''])

    corpus = load_alignments(align, load_parallel_corpus(src, tgt))

    assert corpus.pairs[0].unaligned_source_positions() == [1, 2]
    assert corpus.pairs[1].unaligned_source_positions() == [0, 1]


def test_test_set_maps_unknown_tokens(files, tmp_path):
    src, tgt, _ = files
    corpus = load_parallel_corpus(src, tgt)

    test_src = write(tmp_path / 'test.src', ['A Z C'])
    test_ref = write(tmp_path / 'test.ref', ['a b'])

    test_set = load_test_set(test_src, corpus.vocab_src, test_ref, corpus.vocab_tgt)

    assert len(test_set) == 1
    assert test_set.sources[0][1] == UNK_ID
    assert corpus.vocab_tgt.decode(test_set.references[0]) == ['a', 'b']
    np.testing.assert_array_equal(test_set.sentence_lengths(SOURCE), [3])
