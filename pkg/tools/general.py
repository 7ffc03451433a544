import os
import time
import struct
import threading
import hashlib

from contextlib import contextmanager
from typing import BinaryIO, Tuple

import numpy as np


class FormatError(ValueError):
    """
    Raised when a binary artifact has a wrong magic, version or is truncated
    """


class MissingArtifactError(FileNotFoundError):
    """
    Raised when a pipeline stage needs an artifact that was never produced
    """

    def __init__(self, artifact: str, command: str):
        self.artifact = artifact
        self.command = command

        super().__init__(
            f'Missing {artifact}; run `python main.py {command}` first'
        )


def singleton(class_):
    instances = {}

    def getinstance(*args, **kwargs):
        if class_ not in instances:
            instances[class_] = class_(*args, **kwargs)
        return instances[class_]

    return getinstance


def ensure_dir(output_dir: str):
    """
    Checks whether all directories in <output_dir> exist and creates them if not.

    :param output_dir:              desired directory
    """
    if output_dir:
        os.makedirs(output_dir, exist_ok=True)


def ensure_parent_dir(filepath: str):
    ensure_dir(os.path.dirname(filepath))


def file_digest(filepath: str) -> str:
    """
    :returns:       sha256 hex digest of the file content
    """
    digest = hashlib.sha256()

    with open(filepath, 'rb') as f:
        for chunk in iter(lambda: f.read(1 << 20), b''):
            digest.update(chunk)

    return digest.hexdigest()


def write_header(f: BinaryIO, magic: bytes, fmt: str, *values):
    """
    Writes an 8-byte magic followed by little-endian packed values.

    :param fmt:         struct format of the values (without byte order)
    """
    assert len(magic) == 8

    f.write(magic)
    f.write(struct.pack('<' + fmt, *values))


def read_header(f: BinaryIO, magic: bytes, fmt: str, filepath: str) -> Tuple:
    """
    Reads and validates a header written by write_header.

    :raises FormatError:    if the magic does not match or the file is truncated
    """
    found = f.read(8)

    if found != magic:
        raise FormatError(
            f'{filepath}: expected magic {magic!r}, found {found!r}'
        )

    size = struct.calcsize('<' + fmt)
    raw = f.read(size)

    if len(raw) != size:
        raise FormatError(f'{filepath}: truncated header')

    return struct.unpack('<' + fmt, raw)


def read_array(f: BinaryIO, dtype: str, count: int, filepath: str) -> np.ndarray:
    """
    Reads exactly <count> little-endian items of <dtype>.

    :raises FormatError:    if fewer bytes are available
    """
    dtype = np.dtype(dtype).newbyteorder('<')
    n_bytes = dtype.itemsize * count
    raw = f.read(n_bytes)

    if len(raw) != n_bytes:
        raise FormatError(
            f'{filepath}: truncated payload ({len(raw)} of {n_bytes} bytes)'
        )

    return np.frombuffer(raw, dtype=dtype).astype(dtype.newbyteorder('='))


def write_array(f: BinaryIO, array: np.ndarray, dtype: str):
    f.write(np.ascontiguousarray(array, dtype=np.dtype(dtype).newbyteorder('<')).tobytes())


@contextmanager
def timer():
    """
    Measures wall time of the enclosed block, e.g.

        with timer() as elapsed:
            ...

        elapsed()  # milliseconds
    """
    start = time.perf_counter()
    end = None

    def elapsed_ms() -> float:
        stop = end if end is not None else time.perf_counter()
        return (stop - start) * 1000

    try:
        yield elapsed_ms

    finally:
        end = time.perf_counter()


class OpCounter:
    """
    Thread-safe tally of distance computations
    """

    def __init__(self):
        self._lock = threading.Lock()
        self.total = 0
        self.steps = []

    def add(self, n: int):
        with self._lock:
            self.total += int(n)

    def add_step(self, n: int):
        with self._lock:
            self.total += int(n)
            self.steps.append(int(n))
