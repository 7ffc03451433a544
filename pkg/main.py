import os
import sys
import json
import logging
import argparse

from typing import List, Optional

import numpy as np
import pandas as pd
import yaml

from tools.config import Config
from tools.general import MissingArtifactError, ensure_dir, timer
from tools.factories import (
    pq_config_factory, index_config_factory, retrieval_config_factory, decode_config_factory,
    embedder_factory, model_factory, bench_grid_factory
)
from tools.text.corpus import (
    ParallelCorpus, TestSet, SOURCE, TARGET, load_parallel_corpus, load_alignments, load_test_set,
    save_parallel_corpus
)
from tools.text.representations import ReprMatrix, load_representations, save_representations
from tools.search.index import IVF, FLAT, n_clusters
from tools.search.pq import save_codebook, load_codebook
from tools.datastore.cache import (
    build_caches, persist_caches, load_caches, build_global_datastore, train_cache_codebooks
)
from tools.datastore.indexes import build_indexes, persist_indexes, load_indexes, index_stats
from tools.datastore.retrieval import make_target_datastore, save_target_datastore
from tools.decoding.beam import FAST, VANILLA, MODES
from tools.decoding.translator import Translator
from tools.evaluation.bench import BenchContext, run_bench
from tools.evaluation.metrics import corpus_bleu, token_accuracy
from tools.evaluation import synthetic

logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s %(levelname)s: %(message)s'
)

DEFAULT_CONFIG_PATH = 'config/fast_knnmt.yml'

PQ_DIR = 'pq'
PQ_MANIFEST = 'manifest.json'

COMMANDS = (
    'generate', 'train-pq', 'build-cache', 'build-index', 'make-datastore', 'decode', 'bench', 'inspect'
)

# flag -> config keys it overrides
OVERRIDES = {
    'c': ('retrieval', 'c'),
    'k': ('decoding', 'k'),
    'lam': ('decoding', 'lambda'),
    'temperature': ('decoding', 'temperature'),
    'nprobe': ('index', 'nprobe'),
    'freq_threshold': ('index', 'freq_threshold'),
    'metric': ('retrieval', 'metric'),
    'quantize': ('pq', 'quantize'),
    'mode': ('decoding', 'mode'),
    'beam': ('decoding', 'beam'),
    'threads': ('threads',),
    'seed': ('seed',)
}


class StageError(RuntimeError):
    """
    Raised when a stage finishes without meeting its postconditions
    """


def verify(condition: bool, message: str):
    if not condition:
        raise StageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)

    common.add_argument('-c', '--config-path', help='Path to the config file (.yml)', required=False)
    common.add_argument('--c', type=int, help='neighbours retrieved per source token')
    common.add_argument('--k', type=int, help='neighbours retrieved per decoding step')
    common.add_argument('--lambda', dest='lam', type=float, help='interpolation weight of the kNN distribution')
    common.add_argument('--temperature', type=float, help='softmax temperature')
    common.add_argument('--nprobe', type=int, help='probed clusters of IVF indexes')
    common.add_argument('--freq-threshold', type=int, help='cache size above which an IVF index is built')
    common.add_argument('--metric', choices=['cosine', 'l2', 'ip'])
    common.add_argument('--quantize', action=argparse.BooleanOptionalAction, default=None)
    common.add_argument('--mode', choices=MODES)
    common.add_argument('--beam', type=int)
    common.add_argument('--threads', type=int)
    common.add_argument('--seed', type=int)
    common.add_argument('--verbose', action='store_true')

    parser = argparse.ArgumentParser(
        description='Fast kNN-MT: token-restricted retrieval-augmented decoding'
    )

    subparsers = parser.add_subparsers(dest='command', required=True)

    generate = subparsers.add_parser('generate', parents=[common], help='write a synthetic corpus')
    generate.add_argument('--task', choices=['toy', 'disambiguation', 'scaled'], default='toy')
    generate.add_argument('--out', required=True, help='output directory')

    for command in COMMANDS[1:]:
        sub = subparsers.add_parser(command, parents=[common])

        if command in ('make-datastore', 'inspect'):
            sub.add_argument('--sentence', type=int, help='index of a test sentence')

    return parser


def read_config(args: argparse.Namespace):
    config = Config()

    config_path = args.config_path or DEFAULT_CONFIG_PATH
    config.read(config_path)

    logging.info(f'Using config: {config_path}')

    for flag, keys in OVERRIDES.items():
        value = getattr(args, flag, None)

        if value is not None:
            config.set(*keys, value)


def input_paths() -> List[str]:
    config = Config()

    keys = ['train_src', 'train_tgt', 'alignments', 'src_reprs', 'tgt_reprs']

    return [
        config.get('paths', key) for key in keys
        if config.get('paths', key, default=None) and os.path.isfile(config.get('paths', key))
    ]


def manifest_extra() -> dict:
    config = Config()

    return {
        'config_hash': config.config_hash(input_paths()),
        'config': config.to_yaml()
    }


def load_training() -> ParallelCorpus:
    config = Config()

    corpus = load_parallel_corpus(config.get('paths', 'train_src'), config.get('paths', 'train_tgt'))

    return load_alignments(config.get('paths', 'alignments'), corpus)


def training_representations(corpus: ParallelCorpus):
    """
    :returns:       dumped source / target representations, synthetic ones when no dump is set
    """
    config = Config()

    src_path = config.get('paths', 'src_reprs', default=None)
    tgt_path = config.get('paths', 'tgt_reprs', default=None)

    if src_path and tgt_path:
        return (
            load_representations(src_path, corpus, SOURCE),
            load_representations(tgt_path, corpus, TARGET)
        )

    embedder = embedder_factory()

    return (
        ReprMatrix(SOURCE, embedder.source_matrix(corpus.sentences(SOURCE)), corpus.sentence_lengths(SOURCE)),
        ReprMatrix(
            TARGET,
            embedder.target_matrix(corpus.sentences(SOURCE), corpus.sentences(TARGET)),
            corpus.sentence_lengths(TARGET)
        )
    )


def read_test_inputs(corpus: ParallelCorpus):
    """
    :returns:       test set and its per-sentence source representations (None: synthetic)
    """
    config = Config()

    ref_path = config.get('paths', 'test_ref', default=None)

    test_set = load_test_set(
        config.get('paths', 'test_src'),
        corpus.vocab_src,
        ref_path if ref_path and os.path.isfile(ref_path) else None,
        corpus.vocab_tgt
    )

    reprs_path = config.get('paths', 'test_reprs', default=None)

    if not reprs_path:
        return test_set, None

    matrix = load_representations(reprs_path, test_set, SOURCE)

    return test_set, [matrix.sentence(i) for i in range(len(test_set))]


def load_stores():
    cache_dir = Config().get('paths', 'cache_dir')

    cs = load_caches(cache_dir)
    indexes = load_indexes(cache_dir, cs)

    return cs, indexes


def check_dims(cs, embedder):
    if cs.dim != embedder.dim:
        raise ValueError(
            f'Cache dim {cs.dim} differs from synthetic/dim {embedder.dim}; the decoder '
            f'states must live in the space of the target keys'
        )


def cmd_generate(args: argparse.Namespace) -> int:
    out = args.out
    ensure_dir(out)

    if args.task == 'toy':
        corpus, test_set = synthetic.toy_corpus()

    elif args.task == 'disambiguation':
        corpus, test_set = synthetic.disambiguation_task(seed=Config().get('seed', default=0))

    else:
        corpus, test_set = synthetic.scaled_corpus(seed=Config().get('seed', default=0))

    paths = {
        'train_src': os.path.join(out, 'train.src'),
        'train_tgt': os.path.join(out, 'train.tgt'),
        'alignments': os.path.join(out, 'train.align'),
        'test_src': os.path.join(out, 'test.src'),
        'test_ref': os.path.join(out, 'test.ref') if test_set.references is not None else None,
        'src_reprs': None,
        'tgt_reprs': None,
        'test_reprs': None,
        'cache_dir': os.path.join(out, 'cache'),
        'datastore_dir': os.path.join(out, 'datastores'),
        'output': os.path.join(out, 'decode.txt'),
        'bench_dir': os.path.join(out, 'bench'),
        'plots_dir': os.path.join(out, 'plots')
    }

    save_parallel_corpus(corpus, paths['train_src'], paths['train_tgt'], paths['alignments'])

    with open(paths['test_src'], 'w', encoding='utf-8') as f:
        for source in test_set.sources:
            f.write(' '.join(corpus.vocab_src.decode(source)) + '\n')

    if paths['test_ref'] is not None:
        with open(paths['test_ref'], 'w', encoding='utf-8') as f:
            for reference in test_set.references:
                f.write(' '.join(corpus.vocab_tgt.decode(reference)) + '\n')

    config = Config().to_dict()

    if args.task == 'toy':
        src_reprs, tgt_reprs, queries = synthetic.toy_representations(corpus)

        paths['src_reprs'] = os.path.join(out, 'train.src.repr')
        paths['tgt_reprs'] = os.path.join(out, 'train.tgt.repr')
        paths['test_reprs'] = os.path.join(out, 'test.src.repr')

        save_representations(src_reprs, paths['src_reprs'])
        save_representations(tgt_reprs, paths['tgt_reprs'])
        save_representations(ReprMatrix(SOURCE, queries, test_set.sentence_lengths(SOURCE)), paths['test_reprs'])

        config['synthetic']['dim'] = synthetic.TOY_DIM
        config['retrieval']['c'] = 2

    config['paths'] = paths

    config_path = os.path.join(out, 'config.yml')

    with open(config_path, 'w') as f:
        yaml.dump(config, f, sort_keys=False)

    verify(os.path.isfile(paths['train_src']) and os.path.isfile(config_path), f'Nothing written to {out}')

    logging.info(f'Wrote the {args.task} task to {out}; continue with `python main.py <command> -c {config_path}`')

    return 0


def cmd_train_pq(args: argparse.Namespace) -> int:
    config = Config()

    corpus = load_training()
    src_reprs, tgt_reprs = training_representations(corpus)

    pq_config = pq_config_factory()
    metric = config.get('retrieval', 'metric')

    src_codebook, tgt_codebook = train_cache_codebooks(
        src_reprs, tgt_reprs, pq_config, metric, config.get('threads', default=1)
    )

    directory = os.path.join(config.get('paths', 'cache_dir'), PQ_DIR)
    ensure_dir(directory)

    for side, codebook in ((SOURCE, src_codebook), (TARGET, tgt_codebook)):
        save_codebook(codebook, os.path.join(directory, f'{side}.pqcb'))

        verify(codebook.code_size == pq_config.M, f'{side} codes take {codebook.code_size} bytes, expected M')

    manifest = {'metric': metric, 'M': pq_config.M, 'n_codewords': pq_config.n_codewords}
    manifest.update(manifest_extra())

    with open(os.path.join(directory, PQ_MANIFEST), 'w') as f:
        json.dump(manifest, f, indent=2)

    return 0


def load_pq_codebooks(metric: str):
    directory = os.path.join(Config().get('paths', 'cache_dir'), PQ_DIR)

    if not os.path.isfile(os.path.join(directory, PQ_MANIFEST)):
        raise MissingArtifactError(f'PQ codebooks in {directory}', 'train-pq')

    codebooks = [load_codebook(os.path.join(directory, f'{side}.pqcb')) for side in (SOURCE, TARGET)]

    if any(cb.metric != metric for cb in codebooks):
        raise ValueError(
            f'PQ codebooks were trained for metric {codebooks[0].metric}, not {metric}; rerun train-pq'
        )

    return codebooks


def cmd_build_cache(args: argparse.Namespace) -> int:
    config = Config()

    corpus = load_training()
    src_reprs, tgt_reprs = training_representations(corpus)

    quantize = config.get('pq', 'quantize', default=False)
    src_codebook = tgt_codebook = None

    if quantize:
        src_codebook, tgt_codebook = load_pq_codebooks(config.get('retrieval', 'metric'))

    cs = build_caches(
        corpus, src_reprs, tgt_reprs,
        quantize=quantize,
        src_codebook=src_codebook,
        tgt_codebook=tgt_codebook,
        threads=config.get('threads', default=1)
    )

    cache_dir = config.get('paths', 'cache_dir')

    persist_caches(cs, cache_dir, config.get('cache', 'pool_threshold', default=64), manifest_extra())

    reloaded = load_caches(cache_dir)

    verify(
        reloaded.total_entries == corpus.alignment_count(),
        f'{reloaded.total_entries} cached entries for {corpus.alignment_count()} alignment links'
    )

    return 0


def cmd_build_index(args: argparse.Namespace) -> int:
    config = Config()

    cache_dir = config.get('paths', 'cache_dir')
    cs = load_caches(cache_dir)

    index_config = index_config_factory()
    index_config.quantize = cs.quantized

    indexes = build_indexes(cs, index_config, config.get('threads', default=1))

    persist_indexes(indexes, cache_dir, index_config, manifest_extra())

    verify(set(indexes) == set(cs.caches), 'Some token caches have no index')

    for token, index in indexes.items():
        n_v = index.entry_count
        expected = IVF if n_v > index_config.freq_threshold else FLAT

        verify(index.kind == expected, f'Token {token}: {index.kind} index for {n_v} entries')
        verify(index.kind == FLAT or index.nlist == n_clusters(n_v), f'Token {token}: nlist {index.nlist}')

    return 0


def _sentences(args: argparse.Namespace, test_set: TestSet) -> List[int]:
    if args.sentence is None:
        return list(range(len(test_set)))

    if not 0 <= args.sentence < len(test_set):
        raise ValueError(f'Sentence {args.sentence} is out of range of the {len(test_set)} test sentences')

    return [args.sentence]


def cmd_make_datastore(args: argparse.Namespace) -> int:
    config = Config()

    corpus = load_training()
    cs, indexes = load_stores()
    test_set, test_reprs = read_test_inputs(corpus)

    retrieval = retrieval_config_factory()
    embedder = embedder_factory()

    directory = config.get('paths', 'datastore_dir')

    for i in _sentences(args, test_set):
        source = test_set.sources[i]
        reprs = test_reprs[i] if test_reprs is not None else embedder.source_matrix([source])

        ds = make_target_datastore(source, reprs, cs, indexes, retrieval)

        save_target_datastore(ds, os.path.join(directory, f'sentence_{i}.ds'))

        verify(len(ds) <= retrieval.c * len(source), f'Sentence {i}: {len(ds)} entries exceed c * n')
        verify(
            not retrieval.dedupe or len(np.unique(ds.tgt_locs, axis=0)) == len(ds),
            f'Sentence {i}: duplicate target occurrences'
        )

        logging.info(f'Sentence {i}: {len(ds)} target entries for {len(source)} source tokens')

    return 0


def cmd_decode(args: argparse.Namespace) -> int:
    config = Config()

    corpus = load_training()
    test_set, test_reprs = read_test_inputs(corpus)

    decode_cfg = decode_config_factory()
    embedder = embedder_factory()
    model = model_factory(corpus, embedder)

    cs = indexes = global_ds = None

    if decode_cfg.mode == FAST:
        cs, indexes = load_stores()
        check_dims(cs, embedder)

    elif decode_cfg.mode == VANILLA:
        cs = load_caches(config.get('paths', 'cache_dir'))
        check_dims(cs, embedder)

        _, tgt_reprs = training_representations(corpus)
        global_ds = build_global_datastore(
            corpus, tgt_reprs, codebook=cs.tgt_codebook, threads=config.get('threads', default=1)
        )

    translator = Translator(model, decode_cfg, cs, indexes, retrieval_config_factory(), global_ds)

    with timer() as elapsed:
        translations = translator.translate_all(test_set.sources, test_reprs)

    output = config.get('paths', 'output')
    ensure_dir(os.path.dirname(output))

    with open(output, 'w', encoding='utf-8') as f:
        for t in translations:
            f.write(' '.join(corpus.vocab_tgt.decode(t.best.tokens)) + '\n')

    with open(f'{output}.metrics.jsonl', 'w') as f:
        for i, t in enumerate(translations):
            f.write(json.dumps({
                'sentence': i,
                'mode': decode_cfg.mode,
                'finished': t.best.finished,
                'retrieval_ops': t.retrieval_ops,
                'step_ops': t.step_ops,
                'datastore_size': t.datastore_size,
                'wall_ms': t.wall_ms
            }) + '\n')

    tokens = sum(len(t.best.tokens) for t in translations)

    logging.info(f'Decoded {tokens} tokens in {elapsed():.1f} ms, wrote {output}')

    if test_set.references is not None:
        hyps = [t.best.tokens for t in translations]

        logging.info(
            f'BLEU {corpus_bleu(hyps, test_set.references):.2f}, '
            f'token accuracy {token_accuracy(hyps, test_set.references):.4f}'
        )

    if decode_cfg.mode == FAST:
        c = translator.retrieval.c

        verify(
            all(ops <= c * len(s) for t, s in zip(translations, test_set.sources) for ops in t.step_ops),
            'A fast-mode step scanned more than c * n entries'
        )

    verify(len(translations) == len(test_set), 'Not every test sentence was decoded')

    return 0


def cmd_bench(args: argparse.Namespace) -> int:
    config = Config()

    corpus = load_training()
    test_set, test_reprs = read_test_inputs(corpus)

    src_reprs, tgt_reprs = training_representations(corpus)

    embedder = embedder_factory()
    model = model_factory(corpus, embedder)

    cs, indexes = load_stores()
    check_dims(cs, embedder)

    context = BenchContext(
        corpus, src_reprs, tgt_reprs, model,
        index_config=index_config_factory(),
        pq_config=pq_config_factory(),
        threads=config.get('threads', default=1)
    )
    context.add_stores(config.get('retrieval', 'metric'), cs, indexes)

    grid = bench_grid_factory()
    results = run_bench(context, test_set, grid, test_reprs)

    directory = config.get('paths', 'bench_dir')

    results.to_jsonl(os.path.join(directory, 'reports.jsonl'))
    results.to_csv(os.path.join(directory, 'reports.csv'))

    print(results.to_table())

    verify(len(results) > 0, 'The bench grid produced no reports')

    return 0


def _context(corpus: ParallelCorpus, loc, width: int = 3) -> str:
    """
    :returns:       the training source sentence around <loc> with the token bracketed
    """
    sentence_i, position = loc
    tokens = corpus.vocab_src.decode(corpus.pairs[sentence_i].src)

    start, end = max(0, position - width), min(len(tokens), position + width + 1)
    words = tokens[start:position] + [f'[{tokens[position]}]'] + tokens[position + 1:end]

    return ' '.join(words)


def cmd_inspect(args: argparse.Namespace) -> int:
    config = Config()

    corpus = load_training()
    cs, indexes = load_stores()

    stats = cs.stats(corpus.vocab_src).merge(
        index_stats(indexes)[['token_id', 'kind', 'nlist']], on='token_id', how='left'
    )

    print(stats.to_string(index=False))

    mid = corpus.vocab_src.median_frequency()

    print(
        f'\ncaches: {len(cs)}, entries: {cs.total_entries}, key bytes: {cs.key_bytes()}, '
        f'|S| = {corpus.token_count(SOURCE)}, mid(F) = {mid:g}'
        + (f', |S| / mid(F) = {corpus.token_count(SOURCE) / mid:.1f}' if mid else '')
    )

    if args.sentence is None:
        return 0

    test_set, test_reprs = read_test_inputs(corpus)
    embedder = embedder_factory()

    i = _sentences(args, test_set)[0]
    source = test_set.sources[i]
    reprs = test_reprs[i] if test_reprs is not None else embedder.source_matrix([source])

    ds = make_target_datastore(source, reprs, cs, indexes, retrieval_config_factory())

    rows = [
        {
            'query_pos': e['src_query_pos'],
            'query_token': corpus.vocab_src.lookup(int(source[e['src_query_pos']])),
            'src_loc': e['src_loc'],
            'src_context': _context(corpus, e['src_loc']),
            'tgt_loc': e['tgt_loc'],
            'tgt_token': corpus.vocab_tgt.lookup(e['tgt_token'])
        }
        for e in ds.entries()
    ]

    print(f'\nTarget datastore of sentence {i} ({len(ds)} entries):')
    print(pd.DataFrame(rows, columns=['query_pos', 'query_token', 'src_loc', 'src_context', 'tgt_loc', 'tgt_token'])
          .to_string(index=False))

    return 0


HANDLERS = {
    'generate': cmd_generate,
    'train-pq': cmd_train_pq,
    'build-cache': cmd_build_cache,
    'build-index': cmd_build_index,
    'make-datastore': cmd_make_datastore,
    'decode': cmd_decode,
    'bench': cmd_bench,
    'inspect': cmd_inspect
}


def main(argv: Optional[List[str]] = None) -> int:
    """
    :returns:       exit code, 0 only when the stage verified its postconditions
    """
    args = build_parser().parse_args(argv)

    if args.verbose:
        logging.getLogger().setLevel(logging.DEBUG)

    try:
        read_config(args)

        logging.info(f'Starting {args.command}')

        return HANDLERS[args.command](args)

    except (StageError, ValueError, KeyError, FileNotFoundError) as e:
        logging.error(f'{args.command} failed: {e}')

        return 1


if __name__ == '__main__':
    sys.exit(main())
