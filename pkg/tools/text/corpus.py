import logging

from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np

from tools.general import ensure_parent_dir

UNK = '<unk>'
BOS = '<s>'
EOS = '</s>'

SPECIAL_TOKENS = (UNK, BOS, EOS)

UNK_ID = 0
BOS_ID = 1
EOS_ID = 2

SOURCE = 'source'
TARGET = 'target'


class Vocabulary:
    """
    Corpus-derived token inventory.

    attributes:
        - entries       <list<str>>         token strings, position = TokenId
        - ids           <dict<str, int>>    token string -> TokenId
        - freq          <dict<int, int>>    TokenId -> occurrences in the counted side
                                            (reserved tokens carry no frequency)
    """

    def __init__(self, entries: Sequence[str], freq: Optional[Dict[int, int]] = None):
        self.entries = list(entries)
        self.ids = {token: i for i, token in enumerate(self.entries)}
        self.freq = dict(freq or {})

        if len(self.ids) != len(self.entries):
            raise ValueError('Vocabulary entries must be unique')

    @classmethod
    def build(cls, sentences: Iterable[Sequence[str]]) -> 'Vocabulary':
        """
        Builds a vocabulary in order of first occurrence, after the reserved tokens.
        Every counted token is a corpus token, so freq sums to the token count.

        :raises ValueError:     when a sentence contains a reserved token
        """
        counts = Counter()
        order = []

        for sentence_i, sentence in enumerate(sentences):
            for token in sentence:
                if token in SPECIAL_TOKENS:
                    raise ValueError(f'Sentence {sentence_i}: reserved token "{token}" in the text')

                if token not in counts:
                    order.append(token)

                counts[token] += 1

        entries = list(SPECIAL_TOKENS) + order

        instance = cls(entries)
        instance.freq = {instance.ids[t]: n for t, n in counts.items()}

        return instance

    def __len__(self):
        return len(self.entries)

    def __contains__(self, token: str):
        return token in self.ids

    def id(self, token: str) -> int:
        """
        :returns:       TokenId of <token>, the <unk> id for unknown tokens
        """
        return self.ids.get(token, UNK_ID)

    def lookup(self, token_id: int) -> str:
        return self.entries[token_id]

    def encode(self, tokens: Sequence[str]) -> np.ndarray:
        return np.array([self.id(t) for t in tokens], dtype=np.int64)

    def decode(self, token_ids: Iterable[int]) -> List[str]:
        return [self.entries[int(i)] for i in token_ids]

    def median_frequency(self) -> float:
        """
        :returns:       median token frequency mid(F) over the counted tokens
        """
        if not self.freq:
            return 0.0

        return float(np.median(list(self.freq.values())))


@dataclass
class SentencePair:
    """
    One training example; alignment rows are unique (src_pos, tgt_pos) pairs sorted
    by source position then target position.
    """
    src: np.ndarray
    tgt: np.ndarray
    alignment: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))

    def __post_init__(self):
        self.src = np.asarray(self.src, dtype=np.int64)
        self.tgt = np.asarray(self.tgt, dtype=np.int64)
        self.alignment = np.asarray(self.alignment, dtype=np.int64).reshape(-1, 2)

        assert len(self.src) >= 1 and len(self.tgt) >= 1

    @property
    def n(self) -> int:
        return len(self.src)

    @property
    def m(self) -> int:
        return len(self.tgt)

    def alignment_set(self) -> Set[Tuple[int, int]]:
        return {(int(j), int(k)) for j, k in self.alignment}

    def unaligned_source_positions(self) -> List[int]:
        aligned = set(self.alignment[:, 0].tolist())

        return [j for j in range(self.n) if j not in aligned]


class ParallelCorpus:
    """
    Tokenized training corpus with alignments. A token is addressed by
    (sentence_index, position); flat row indexes of a side follow sentence order.
    """

    def __init__(self,
                 pairs: List[SentencePair],
                 vocab_src: Vocabulary,
                 vocab_tgt: Vocabulary):
        self.pairs = pairs
        self.vocab_src = vocab_src
        self.vocab_tgt = vocab_tgt

        self._lengths = {
            SOURCE: np.array([p.n for p in pairs], dtype=np.int64),
            TARGET: np.array([p.m for p in pairs], dtype=np.int64)
        }

        self._offsets = {
            side: np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64)
            for side, lengths in self._lengths.items()
        }

    def __len__(self):
        return len(self.pairs)

    def vocab(self, side: str) -> Vocabulary:
        return self.vocab_src if side == SOURCE else self.vocab_tgt

    def sentences(self, side: str) -> List[np.ndarray]:
        return [p.src if side == SOURCE else p.tgt for p in self.pairs]

    def sentence_lengths(self, side: str) -> np.ndarray:
        return self._lengths[side]

    def offsets(self, side: str) -> np.ndarray:
        """
        :returns:       start row of every sentence, followed by the total token count
        """
        return self._offsets[side]

    def token_count(self, side: str = SOURCE) -> int:
        """
        :returns:       |S| for the source side
        """
        return int(self._offsets[side][-1])

    def flat_tokens(self, side: str) -> np.ndarray:
        sentences = self.sentences(side)

        if not sentences:
            return np.zeros(0, dtype=np.int64)

        return np.concatenate(sentences)

    def row(self, side: str, sentence_i: int, position: int) -> int:
        return int(self._offsets[side][sentence_i] + position)

    def locate(self, side: str, row: int) -> Tuple[int, int]:
        """
        :returns:       (sentence_index, position) of a flat row index
        """
        sentence_i = int(np.searchsorted(self._offsets[side], row, side='right') - 1)

        return sentence_i, int(row - self._offsets[side][sentence_i])

    def alignment_count(self) -> int:
        return int(sum(len(p.alignment) for p in self.pairs))

    def with_alignments(self, alignments: List[np.ndarray]) -> 'ParallelCorpus':
        assert len(alignments) == len(self.pairs)

        pairs = [
            SentencePair(src=p.src, tgt=p.tgt, alignment=a)
            for p, a in zip(self.pairs, alignments)
        ]

        return ParallelCorpus(pairs, self.vocab_src, self.vocab_tgt)


class TestSet:
    """
    Held-out source sentences (and optional references) encoded with training vocabularies
    """
    __test__ = False

    def __init__(self,
                 sources: List[np.ndarray],
                 references: Optional[List[np.ndarray]] = None):
        if references is not None and len(references) != len(sources):
            raise ValueError(
                f'Test set has {len(sources)} sources but {len(references)} references'
            )

        self.sources = sources
        self.references = references

    def __len__(self):
        return len(self.sources)

    def sentences(self, side: str) -> List[np.ndarray]:
        if side == SOURCE:
            return self.sources

        if self.references is None:
            raise ValueError('Test set has no references')

        return self.references

    def sentence_lengths(self, side: str) -> np.ndarray:
        return np.array([len(s) for s in self.sentences(side)], dtype=np.int64)


def _read_lines(path: str) -> List[str]:
    try:
        with open(path, encoding='utf-8') as f:
            return f.read().splitlines()

    except FileNotFoundError:
        raise FileNotFoundError(f'Failed to find a corpus file at: {path}')

    except (OSError, UnicodeDecodeError) as e:
        raise ValueError(f'Failed to read corpus file {path}: {e}')


def _tokenize(lines: List[str], path: str) -> List[List[str]]:
    sentences = []

    for line_i, line in enumerate(lines, start=1):
        tokens = line.split()

        if not tokens:
            raise ValueError(f'{path}:{line_i}: empty line')

        reserved = [t for t in tokens if t in SPECIAL_TOKENS]

        if reserved:
            raise ValueError(f'{path}:{line_i}: reserved token "{reserved[0]}" in the text')

        sentences.append(tokens)

    return sentences


def load_parallel_corpus(src_path: str, tgt_path: str) -> ParallelCorpus:
    """
    Loads a whitespace-tokenized parallel corpus, one sentence per line.
    Alignments stay empty until load_alignments is called.

    :raises ValueError:     on an empty corpus, a line-count mismatch or an empty line
    """
    src_lines = _read_lines(src_path)
    tgt_lines = _read_lines(tgt_path)

    if not src_lines and not tgt_lines:
        raise ValueError('empty corpus')

    if len(src_lines) != len(tgt_lines):
        raise ValueError(
            f'line-count mismatch: {src_path} has {len(src_lines)} lines, '
            f'{tgt_path} has {len(tgt_lines)}'
        )

    src_sentences = _tokenize(src_lines, src_path)
    tgt_sentences = _tokenize(tgt_lines, tgt_path)

    vocab_src = Vocabulary.build(src_sentences)
    vocab_tgt = Vocabulary.build(tgt_sentences)

    pairs = [
        SentencePair(src=vocab_src.encode(s), tgt=vocab_tgt.encode(t))
        for s, t in zip(src_sentences, tgt_sentences)
    ]

    corpus = ParallelCorpus(pairs, vocab_src, vocab_tgt)

    logging.info(
        f'Loaded {len(corpus)} sentence pairs: {corpus.token_count(SOURCE)} source / '
        f'{corpus.token_count(TARGET)} target tokens, vocabularies '
        f'{len(vocab_src)} / {len(vocab_tgt)}'
    )

    return corpus


def parse_alignment(line: str) -> Set[Tuple[int, int]]:
    """
    Parses a Pharaoh-format line, e.g. "0-0 1-2" -> {(0, 0), (1, 2)}

    :raises ValueError:     on a token that is not "int-int"
    """
    alignment = set()

    for token in line.split():
        parts = token.split('-')

        if len(parts) != 2 or not parts[0].isdigit() or not parts[1].isdigit():
            raise ValueError(f'malformed alignment token "{token}"')

        alignment.add((int(parts[0]), int(parts[1])))

    return alignment


def format_alignment(alignment: Iterable[Tuple[int, int]]) -> str:
    return ' '.join(f'{j}-{k}' for j, k in sorted(alignment))


def _alignment_array(alignment: Set[Tuple[int, int]]) -> np.ndarray:
    if not alignment:
        return np.zeros((0, 2), dtype=np.int64)

    return np.array(sorted(alignment), dtype=np.int64)


def load_alignments(path: str, corpus: ParallelCorpus) -> ParallelCorpus:
    """
    Attaches Pharaoh-format alignments (one line per sentence pair, zero-based)
    to a corpus. Source positions without a link stay unaligned.

    :raises ValueError:     on malformed tokens, out-of-range indices or a line-count mismatch
    """
    lines = _read_lines(path)

    if len(lines) != len(corpus):
        raise ValueError(
            f'{path} has {len(lines)} lines but the corpus has {len(corpus)} sentence pairs'
        )

    alignments = []
    n_unaligned = 0

    for line_i, (line, pair) in enumerate(zip(lines, corpus.pairs), start=1):
        try:
            alignment = parse_alignment(line)

        except ValueError as e:
            raise ValueError(f'{path}:{line_i}: {e}')

        for j, k in alignment:
            if j >= pair.n or k >= pair.m:
                raise ValueError(
                    f'{path}:{line_i}: alignment {j}-{k} out of range '
                    f'for a pair of lengths {pair.n}-{pair.m}'
                )

        alignments.append(_alignment_array(alignment))
        n_unaligned += pair.n - len({j for j, _ in alignment})

    logging.info(
        f'Loaded alignments from {path}: {sum(len(a) for a in alignments)} links, '
        f'{n_unaligned} unaligned source tokens'
    )

    return corpus.with_alignments(alignments)


def save_parallel_corpus(corpus: ParallelCorpus,
                         src_path: str,
                         tgt_path: str,
                         align_path: Optional[str] = None):
    """
    Writes the canonical text form: single-space separated tokens, Pharaoh alignments
    """
    for path, side in ((src_path, SOURCE), (tgt_path, TARGET)):
        ensure_parent_dir(path)
        vocab = corpus.vocab(side)

        with open(path, 'w', encoding='utf-8') as f:
            for sentence in corpus.sentences(side):
                f.write(' '.join(vocab.decode(sentence)) + '\n')

    if align_path is not None:
        ensure_parent_dir(align_path)

        with open(align_path, 'w', encoding='utf-8') as f:
            for pair in corpus.pairs:
                f.write(format_alignment(pair.alignment_set()) + '\n')


def load_test_set(src_path: str,
                  vocab_src: Vocabulary,
                  ref_path: Optional[str] = None,
                  vocab_tgt: Optional[Vocabulary] = None) -> TestSet:
    """
    Encodes held-out sources (and references) with the training vocabularies;
    unseen tokens map to <unk>.
    """
    sources = [vocab_src.encode(s) for s in _tokenize(_read_lines(src_path), src_path)]

    references = None

    if ref_path is not None:
        assert vocab_tgt is not None

        references = [vocab_tgt.encode(s) for s in _tokenize(_read_lines(ref_path), ref_path)]

    test_set = TestSet(sources, references)

    logging.info(f'Loaded {len(test_set)} test sentences from {src_path}')

    return test_set
