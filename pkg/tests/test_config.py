import pytest

from tools.config import Config
from tools.decoding.models import BigramModel, LexicalModel, UniformModel
from tools.factories import (
    pq_config_factory, index_config_factory, retrieval_config_factory, decode_config_factory,
    embedder_factory, model_factory, bench_grid_factory
)


@pytest.fixture
def config(default_config_path):
    config = Config()
    config.read(default_config_path)

    return config


def test_nested_lookup(config):
    assert config.get('retrieval', 'c') == 512
    assert config.get('decoding', 'lambda') == 0.5
    assert config.get('paths', 'src_reprs') is None

    assert config.get('retrieval', 'radius', default=3) == 3

    with pytest.raises(KeyError, match='retrieval/radius'):
        config.get('retrieval', 'radius')


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError, match='Failed to find a config file'):
        Config().read(str(tmp_path / 'missing.yml'))


def test_overrides_change_the_hash(config, tmp_path):
    before = config.config_hash()

    config.set('retrieval', 'c', 64)
    config.set('extra', 'nested', 'value', 1)

    assert config.get('retrieval', 'c') == 64
    assert config.get('extra', 'nested', 'value') == 1
    assert config.config_hash() != before

    data = tmp_path / 'train.src'
    data.write_text('A B\n')

    with_inputs = config.config_hash([str(data)])
    data.write_text('A C\n')

    assert config.config_hash([str(data)]) != with_inputs


def test_read_dict_copies(config):
    settings = {'retrieval': {'c': 4}}
    config.read_dict(settings)
    settings['retrieval']['c'] = 5

    assert config.get('retrieval', 'c') == 4
    assert config.to_dict() == {'retrieval': {'c': 4}}


def test_factories_follow_the_config(config):
    assert pq_config_factory().M == 16
    assert index_config_factory().freq_threshold == 30000

    retrieval = retrieval_config_factory()
    assert (retrieval.c, retrieval.metric, retrieval.threads) == (512, 'cosine', 4)

    decode = decode_config_factory()
    assert (decode.lam, decode.k, decode.beam, decode.mode) == (0.5, 512, 4, 'fast')

    embedder = embedder_factory()
    assert (embedder.dim, embedder.window) == (64, 1)

    grid = bench_grid_factory()
    assert grid.modes == ('base', 'fast', 'vanilla')
    assert grid.cs == (8, 64, 512)
    assert grid.decode.beam == 1

    with pytest.raises(ValueError, match='lambda'):
        config.set('decoding', 'lambda', 1.5)
        decode_config_factory()


@pytest.mark.parametrize('name, expected', [
    ('uniform', UniformModel),
    ('lexical', LexicalModel),
    ('bigram', BigramModel)
])
def test_model_factory(config, toy, name, expected):
    config.set('synthetic', 'base_model', name)
    config.set('synthetic', 'dim', 8)

    assert type(model_factory(toy[0], embedder_factory())) is expected
