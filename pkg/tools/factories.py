"""
Typed settings of every stage, built from the Config singleton
"""
from tools.config import Config
from tools.datastore.retrieval import RetrievalConfig
from tools.decoding.beam import DecodeConfig
from tools.decoding.models import BaseModel
from tools.evaluation.bench import BenchGrid
from tools.search.index import IndexConfig
from tools.search.pq import PQConfig
from tools.text.corpus import ParallelCorpus
from tools.text.representations import SyntheticEmbedder


def pq_config_factory() -> PQConfig:
    config = Config()

    return PQConfig(
        M=config.get('pq', 'M'),
        n_codewords=config.get('pq', 'n_codewords', default=256),
        iters=config.get('pq', 'iters', default=25),
        train_cap=config.get('pq', 'train_cap', default=5_000_000),
        seed=config.get('seed', default=0)
    )


def index_config_factory() -> IndexConfig:
    config = Config()

    return IndexConfig(
        freq_threshold=config.get('index', 'freq_threshold', default=30000),
        nprobe=config.get('index', 'nprobe', default=32),
        train_cap=config.get('index', 'train_cap', default=5_000_000),
        metric=config.get('retrieval', 'metric', default='cosine'),
        quantize=config.get('pq', 'quantize', default=False),
        kmeans_iters=config.get('index', 'kmeans_iters', default=25),
        seed=config.get('seed', default=0)
    )


def retrieval_config_factory() -> RetrievalConfig:
    config = Config()

    return RetrievalConfig(
        c=config.get('retrieval', 'c', default=512),
        metric=config.get('retrieval', 'metric', default='cosine'),
        nprobe=config.get('index', 'nprobe', default=32),
        dedupe=config.get('retrieval', 'dedupe', default=True),
        threads=config.get('threads', default=1)
    )


def decode_config_factory() -> DecodeConfig:
    config = Config()

    return DecodeConfig(
        lam=config.get('decoding', 'lambda', default=0.5),
        temperature=config.get('decoding', 'temperature', default=1.0),
        k=config.get('decoding', 'k', default=512),
        beam=config.get('decoding', 'beam', default=4),
        max_len=config.get('decoding', 'max_len', default=256),
        max_len_a=config.get('decoding', 'max_len_a', default=1.0),
        max_len_b=config.get('decoding', 'max_len_b', default=5),
        mode=config.get('decoding', 'mode', default='fast'),
        metric=config.get('retrieval', 'metric', default='cosine')
    )


def embedder_factory() -> SyntheticEmbedder:
    config = Config()

    return SyntheticEmbedder(
        dim=config.get('synthetic', 'dim'),
        window=config.get('synthetic', 'window', default=2),
        seed=config.get('seed', default=0)
    )


def model_factory(corpus: ParallelCorpus, embedder: SyntheticEmbedder) -> BaseModel:
    """
    :returns:       the base model named by synthetic/base_model (uniform, lexical or bigram)
    """
    config = Config()

    name = config.get('synthetic', 'base_model', default='lexical')
    kwargs = {}

    if name != 'uniform':
        kwargs['uniform'] = config.get('synthetic', 'uniform', default=False)

    if name == 'bigram':
        kwargs['bigram_weight'] = config.get('synthetic', 'bigram_weight', default=0.5)

    return BaseModel.from_string(name, corpus, embedder, **kwargs)


def bench_grid_factory() -> BenchGrid:
    config = Config()

    decode = decode_config_factory()
    decode.beam = config.get('bench', 'beam', default=decode.beam)

    return BenchGrid(
        modes=tuple(config.get('bench', 'modes', default=['base', 'fast', 'vanilla'])),
        cs=tuple(config.get('bench', 'c', default=[8, 64, 512])),
        ks=tuple(config.get('bench', 'k', default=[decode.k])),
        metrics=tuple(config.get('bench', 'metrics', default=[decode.metric])),
        quantize=tuple(config.get('bench', 'quantize', default=[False])),
        decode=decode,
        retrieval=retrieval_config_factory()
    )
