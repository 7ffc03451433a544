import os
import logging
import argparse

from tools.config import Config
from tools.data_structure import BenchResults
from tools.factories import embedder_factory, model_factory, index_config_factory, retrieval_config_factory
from tools.datastore.cache import load_caches
from tools.datastore.indexes import load_indexes
from tools.evaluation.bench import BenchContext, k_sweep, similarity_heatmap
from tools.evaluation.synthetic import neighbourhood_task
from tools.plotting.bench import plot_speed, plot_quality, plot_k_sweep, plot_heatmap
from tools.text.corpus import load_parallel_corpus, load_alignments, load_test_set

logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s %(levelname)s: %(message)s'
)

DEFAULT_CONFIG_PATH = 'config/fast_knnmt.yml'

K_SWEEP = [1, 2, 4, 8, 16, 32, 64]

parser = argparse.ArgumentParser(
    description='Plots of the Fast kNN-MT bench reports'
)

parser.add_argument(
    '-c',
    '--config-path',
    help='Path to the config file (.yml)',
    required=False
)

parser.add_argument(
    '--heatmap-sentence',
    type=int,
    help='test sentence whose gold decoder states are compared with its retrieved keys',
    required=False
)


def plot_sentence_heatmap(sentence_i: int, filepath: str):
    """
    Synthetic-representation heatmap for one referenced test sentence, using the
    caches and indexes under paths/cache_dir
    """
    config = Config()

    corpus = load_alignments(
        config.get('paths', 'alignments'),
        load_parallel_corpus(config.get('paths', 'train_src'), config.get('paths', 'train_tgt'))
    )

    test_set = load_test_set(
        config.get('paths', 'test_src'), corpus.vocab_src, config.get('paths', 'test_ref'), corpus.vocab_tgt
    )

    cache_dir = config.get('paths', 'cache_dir')
    cs = load_caches(cache_dir)

    embedder = embedder_factory()
    retrieval = retrieval_config_factory()

    context = BenchContext(corpus, None, None, model_factory(corpus, embedder), index_config_factory())
    context.add_stores(retrieval.metric, cs, load_indexes(cache_dir, cs))

    heatmap = similarity_heatmap(
        context, test_set.sources[sentence_i], test_set.references[sentence_i], retrieval, cs.quantized
    )

    plot_heatmap(
        heatmap.similarity,
        corpus.vocab_tgt.decode(heatmap.row_tokens),
        corpus.vocab_tgt.decode(heatmap.col_tokens),
        filepath
    )


if __name__ == '__main__':
    args = parser.parse_args()

    config = Config()
    config.read(args.config_path or DEFAULT_CONFIG_PATH)

    logging.info('Plotting bench results')

    plots_dir = config.get('paths', 'plots_dir')

    results = BenchResults.read_jsonl(
        os.path.join(config.get('paths', 'bench_dir'), 'reports.jsonl')
    )

    plot_speed(results, f'{plots_dir}/speed.png')

    for parameter in ('c', 'k'):
        for quality in ('token_accuracy', 'bleu'):
            plot_quality(results, parameter, f'{plots_dir}/{quality}_vs_{parameter}.png', quality)

    sweep = k_sweep(neighbourhood_task(seed=config.get('seed', default=0)), K_SWEEP)

    plot_k_sweep(sweep, f'{plots_dir}/k_sweep.png')

    if args.heatmap_sentence is not None:
        plot_sentence_heatmap(args.heatmap_sentence, f'{plots_dir}/heatmap_{args.heatmap_sentence}.png')
