import logging

from typing import Dict, List, Sequence, Tuple

import numpy as np

from tools.general import (
    FormatError, ensure_parent_dir, write_header, read_header, read_array, write_array
)
from tools.text.corpus import SOURCE, TARGET, BOS_ID, EOS_ID

REPR_MAGIC = b'FKNNREPR'
REPR_HEADER = 'BIQ'  # dtype code, dim, row count
DTYPE_F32 = 0

# roles of the seeded token vectors
_SRC_CENTER = 0
_SRC_CONTEXT = 1
_TGT_PREVIOUS = 2
_TGT_CONTEXT = 3

CENTER_WEIGHT = 2.0


def normalize_rows(rows: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(rows, axis=-1, keepdims=True)
    norms[norms == 0] = 1

    return (rows / norms).astype(np.float32)


class ReprMatrix:
    """
    Dense contextual representations of every token of one corpus side.

    attributes:
        - side          <str>               source or target
        - rows          <np.ndarray>        (count, dim) float32
        - offsets       <np.ndarray>        start row of every sentence plus the total
    """

    def __init__(self, side: str, rows: np.ndarray, lengths: Sequence[int]):
        rows = np.ascontiguousarray(rows, dtype=np.float32)

        if rows.ndim != 2 or rows.shape[1] < 1:
            raise ValueError(f'Representations must be a (count, dim) matrix, got {rows.shape}')

        if not np.all(np.isfinite(rows)):
            raise ValueError('Representations contain non-finite values')

        self.side = side
        self.rows = rows
        self.offsets = np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64)

        if self.offsets[-1] != len(rows):
            raise ValueError(
                f'{side} representations have {len(rows)} rows but the sentences '
                f'hold {self.offsets[-1]} tokens'
            )

        self._normalized = None

    def __len__(self):
        return len(self.rows)

    @property
    def dim(self) -> int:
        return int(self.rows.shape[1])

    def normalized(self) -> np.ndarray:
        """
        :returns:       unit-L2 view of the rows (computed once)
        """
        if self._normalized is None:
            self._normalized = normalize_rows(self.rows)

        return self._normalized

    def locate(self, row: int) -> Tuple[int, int]:
        """
        :returns:       (sentence_index, position) of a row
        """
        sentence_i = int(np.searchsorted(self.offsets, row, side='right') - 1)

        return sentence_i, int(row - self.offsets[sentence_i])

    def row_index(self, sentence_i: int, position: int) -> int:
        return int(self.offsets[sentence_i] + position)

    def sentence(self, sentence_i: int) -> np.ndarray:
        return self.rows[self.offsets[sentence_i]:self.offsets[sentence_i + 1]]


def save_representations(matrix: ReprMatrix, path: str):
    """
    Writes the FKNNREPR format: magic, u8 dtype, u32 dim, u64 rows, row-major float32
    """
    ensure_parent_dir(path)

    with open(path, 'wb') as f:
        write_header(f, REPR_MAGIC, REPR_HEADER, DTYPE_F32, matrix.dim, len(matrix))
        write_array(f, matrix.rows, 'f4')


def load_representations(path: str, corpus, side: str) -> ReprMatrix:
    """
    :param corpus:      ParallelCorpus or TestSet providing the sentence lengths of <side>

    :raises FormatError:    on a wrong magic, dtype or truncated payload
    :raises ValueError:     when the row count does not match the corpus side
    """
    lengths = corpus.sentence_lengths(side)

    with open(path, 'rb') as f:
        dtype_code, dim, count = read_header(f, REPR_MAGIC, REPR_HEADER, path)

        if dtype_code != DTYPE_F32:
            raise FormatError(f'{path}: unsupported dtype code {dtype_code}')

        if dim < 1:
            raise FormatError(f'{path}: invalid dim {dim}')

        if count != int(np.sum(lengths)):
            raise ValueError(
                f'{path}: {count} rows but the {side} side has {int(np.sum(lengths))} tokens'
            )

        rows = read_array(f, 'f4', dim * count, path).reshape(count, dim)

    logging.info(f'Loaded {side} representations {path}: {count} x {dim}')

    return ReprMatrix(side, rows, lengths)


class SyntheticEmbedder:
    """
    Deterministic stand-in for a trained encoder-decoder.

    Every (role, token id) pair owns a seeded pseudo-random vector. A source position is
    the normalized sum of its token's center vector (weighted) and the context vectors of
    the tokens within <window> (sentence boundaries padded with <s> / </s>), so equal
    contexts give equal rows and overlapping contexts give graded similarity.

    A decoder state at target step k attends the source position min(k, n - 1) and adds
    the previous target token plus earlier prefix tokens within the window. The same
    function produces training target keys and decode-time queries.
    """

    def __init__(self, dim: int, window: int = 2, seed: int = 0):
        if dim < 8:
            raise ValueError(f'Synthetic embedding dim must be >= 8, got {dim}')

        if window < 0:
            raise ValueError(f'Synthetic embedding window must be >= 0, got {window}')

        self.dim = dim
        self.window = window
        self.seed = seed

        self._tables: Dict[int, np.ndarray] = {}

    def _table(self, role: int, max_token: int) -> np.ndarray:
        table = self._tables.get(role, np.zeros((0, self.dim), dtype=np.float64))

        if len(table) <= max_token:
            extra = np.array([
                np.random.default_rng([self.seed, role, token]).standard_normal(self.dim)
                for token in range(len(table), max_token + 1)
            ]) / np.sqrt(self.dim)

            table = np.concatenate([table, extra])
            self._tables[role] = table

        return table

    def _lookup(self, role: int, tokens: np.ndarray) -> np.ndarray:
        tokens = np.asarray(tokens, dtype=np.int64)
        table = self._table(role, int(tokens.max()) if tokens.size else 0)

        return table[tokens]

    def source_part(self, sentences: List[np.ndarray]) -> np.ndarray:
        """
        :returns:       unnormalized source representations of all positions, (N, dim) float64
        """
        if not sentences:
            return np.zeros((0, self.dim))

        tokens = np.concatenate(sentences).astype(np.int64)
        lengths = np.array([len(s) for s in sentences], dtype=np.int64)
        starts = np.repeat(np.concatenate([[0], np.cumsum(lengths)[:-1]]), lengths)
        positions = np.arange(len(tokens)) - starts
        sentence_lengths = np.repeat(lengths, lengths)

        rows = CENTER_WEIGHT * self._lookup(_SRC_CENTER, tokens)

        for offset in range(-self.window, self.window + 1):
            if offset == 0:
                continue

            neighbor = positions + offset
            inside = (neighbor >= 0) & (neighbor < sentence_lengths)

            context = np.full(len(tokens), BOS_ID if offset < 0 else EOS_ID, dtype=np.int64)
            context[inside] = tokens[np.flatnonzero(inside) + offset]

            rows = rows + self._lookup(_SRC_CONTEXT, context)

        return rows

    def previous_tokens(self, prefix: Sequence[int]) -> np.ndarray:
        """
        :returns:       the last max(1, window) prefix tokens, most recent first, <s>-padded
        """
        width = max(1, self.window)
        previous = np.full(width, BOS_ID, dtype=np.int64)

        recent = np.asarray(prefix[-width:] if len(prefix) else [], dtype=np.int64)[::-1]
        previous[:len(recent)] = recent

        return previous

    def prefix_part(self, previous: np.ndarray) -> np.ndarray:
        """
        :param previous:    (N, width) previous target tokens, most recent first
        """
        rows = self._lookup(_TGT_PREVIOUS, previous[:, 0])

        for o in range(1, previous.shape[1]):
            rows = rows + self._lookup(_TGT_CONTEXT, previous[:, o])

        return rows

    def source_matrix(self, sentences: List[np.ndarray]) -> np.ndarray:
        return normalize_rows(self.source_part(sentences))

    def target_matrix(self,
                      src_sentences: List[np.ndarray],
                      tgt_sentences: List[np.ndarray]) -> np.ndarray:
        """
        :returns:       decoder states for every target position of the given pairs
        """
        if not tgt_sentences:
            return np.zeros((0, self.dim), dtype=np.float32)

        source = self.source_part(src_sentences)

        src_lengths = np.array([len(s) for s in src_sentences], dtype=np.int64)
        src_starts = np.concatenate([[0], np.cumsum(src_lengths)[:-1]])

        tgt_lengths = np.array([len(s) for s in tgt_sentences], dtype=np.int64)
        tokens = np.concatenate(tgt_sentences).astype(np.int64)
        starts = np.repeat(np.concatenate([[0], np.cumsum(tgt_lengths)[:-1]]), tgt_lengths)
        positions = np.arange(len(tokens)) - starts

        attended = np.repeat(src_starts, tgt_lengths) + np.minimum(
            positions, np.repeat(src_lengths, tgt_lengths) - 1
        )

        previous = np.full((len(tokens), max(1, self.window)), BOS_ID, dtype=np.int64)

        for o in range(previous.shape[1]):
            back = positions - 1 - o
            inside = back >= 0
            previous[inside, o] = tokens[np.flatnonzero(inside) - 1 - o]

        return normalize_rows(source[attended] + self.prefix_part(previous))

    def decoder_state(self, source_part: np.ndarray, prefix: Sequence[int]) -> np.ndarray:
        """
        :param source_part:     source_part([source]) of the sentence being decoded

        :returns:               normalized decoder state used as the step query
        """
        attended = min(len(prefix), len(source_part) - 1)
        row = source_part[attended:attended + 1] + self.prefix_part(self.previous_tokens(prefix)[None, :])

        return normalize_rows(row)[0]


def synthetic_embed(corpus, side: str, dim: int, window: int = 2, seed: int = 0) -> ReprMatrix:
    """
    :param corpus:      ParallelCorpus (either side) or TestSet (source side)

    :returns:           deterministic representations, a pure function of all arguments
    """
    embedder = SyntheticEmbedder(dim, window, seed)

    if side == SOURCE:
        rows = embedder.source_matrix(corpus.sentences(SOURCE))

    elif side == TARGET:
        rows = embedder.target_matrix(corpus.sentences(SOURCE), corpus.sentences(TARGET))

    else:
        raise ValueError(f'Unknown side "{side}"')

    logging.info(f'Embedded {len(rows)} {side} tokens (dim={dim}, window={window}, seed={seed})')

    return ReprMatrix(side, rows, corpus.sentence_lengths(side))
