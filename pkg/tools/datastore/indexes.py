import os
import json
import logging

from multiprocessing.pool import ThreadPool
from typing import Dict

import pandas as pd

from tools.general import FormatError, MissingArtifactError, ensure_dir
from tools.search.index import IndexConfig, TokenIndex, build_token_index, save_index, load_index
from tools.datastore.cache import CacheSet

INDEX_DIR = 'indexes'
INDEX_MANIFEST = 'manifest.json'


def build_indexes(cs: CacheSet, config: IndexConfig, threads: int = 1) -> Dict[int, TokenIndex]:
    """
    Builds one index per token cache; token types are independent and run in parallel
    """
    if cs.quantized and cs.src_codebook.metric != config.metric:
        raise ValueError(
            f'Caches were quantized for metric {cs.src_codebook.metric}, '
            f'the index asks for {config.metric}'
        )

    tokens = sorted(cs.caches)

    def build(token: int) -> TokenIndex:
        return build_token_index(cs.caches[token].keys, config, codebook=cs.src_codebook, token=token)

    with ThreadPool(max(1, threads)) as pool:
        built = pool.map(build, tokens)

    indexes = dict(zip(tokens, built))

    n_ivf = sum(index.kind == 'ivf' for index in built)

    logging.info(
        f'Built {len(indexes)} token indexes ({n_ivf} ivf, {len(indexes) - n_ivf} flat, '
        f'metric={config.metric}, threshold={config.freq_threshold})'
    )

    return indexes


def index_stats(indexes: Dict[int, TokenIndex], vocab=None) -> pd.DataFrame:
    rows = [
        {
            'token_id': token,
            'token': vocab.lookup(token) if vocab is not None else str(token),
            'entries': index.entry_count,
            'kind': index.kind,
            'nlist': index.nlist
        }
        for token, index in indexes.items()
    ]

    df = pd.DataFrame(rows, columns=['token_id', 'token', 'entries', 'kind', 'nlist'])

    return df.sort_values(['entries', 'token_id'], ascending=[False, True]).reset_index(drop=True)


def persist_indexes(indexes: Dict[int, TokenIndex], cache_dir: str, config: IndexConfig, extra: dict = None):
    directory = os.path.join(cache_dir, INDEX_DIR)
    ensure_dir(directory)

    files = {}

    for token, index in indexes.items():
        files[str(token)] = f'token_{token}.idx'
        save_index(index, os.path.join(directory, files[str(token)]))

    manifest = {
        'metric': config.metric,
        'freq_threshold': config.freq_threshold,
        'train_cap': config.train_cap,
        'files': files
    }

    manifest.update(extra or {})

    with open(os.path.join(directory, INDEX_MANIFEST), 'w') as f:
        json.dump(manifest, f, indent=2)


def read_index_manifest(cache_dir: str) -> dict:
    path = os.path.join(cache_dir, INDEX_DIR, INDEX_MANIFEST)

    if not os.path.isfile(path):
        raise MissingArtifactError(f'index manifest in {cache_dir}', 'build-index')

    with open(path) as f:
        return json.load(f)


def load_indexes(cache_dir: str, cs: CacheSet) -> Dict[int, TokenIndex]:
    manifest = read_index_manifest(cache_dir)

    indexes = {}

    for token, name in manifest['files'].items():
        index = load_index(os.path.join(cache_dir, INDEX_DIR, name), codebook=cs.src_codebook)

        if int(token) not in cs or index.entry_count != len(cs.get(int(token))):
            raise FormatError(f'Index {name} does not match the caches in {cache_dir}')

        indexes[int(token)] = index

    logging.info(f'Loaded {len(indexes)} token indexes from {cache_dir}')

    return indexes
