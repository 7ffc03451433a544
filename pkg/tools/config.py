import copy
import hashlib

from typing import Iterable, Optional

import yaml

from tools.general import singleton, file_digest

_MISSING = object()


@singleton
class Config:
    def __init__(self):
        """
        Singleton representing a yaml config file.
        """
        self._config = None

    def read(self,
             file_path: str):
        """
        :param file_path: path to the config file
        """
        try:
            with open(file_path) as config_file:
                self._config = yaml.load(config_file, Loader=yaml.FullLoader) or {}

        except FileNotFoundError:
            raise FileNotFoundError(
                f'Failed to find a config file at: {file_path}'
            )

    def read_dict(self, config: dict):
        """
        Replaces the current settings with a deep copy of <config>
        """
        self._config = copy.deepcopy(config)

    def get(self, *args, default=_MISSING):
        """
        Can be used to obtain values under multiple keys e.g.

        {
            key0: {
                key1: {
                    key2: value,
                    ...
                    },
                ...
                },
            ...
        }

        by calling get(key0, key1, key2)
        """
        if self._config is None:
            raise Exception('Config file must be read first')

        conf = self._config

        for arg in args:
            if not isinstance(conf, dict) or arg not in conf:
                if default is _MISSING:
                    raise KeyError(
                        f'{"/".join(args)} not found in the config file'
                    )

                return default

            conf = conf[arg]

        return conf

    def set(self, *args):
        """
        Overrides a value, e.g. set('retrieval', 'c', 64). Missing sections are created.
        """
        if self._config is None:
            self._config = {}

        *keys, last, value = args

        conf = self._config

        for key in keys:
            conf = conf.setdefault(key, {})

        conf[last] = value

    def to_dict(self) -> dict:
        return copy.deepcopy(self._config or {})

    def to_yaml(self) -> str:
        """
        Dumps current configurations into a yaml-serialized string.

        :return:        yaml-serialized config settings
        """
        return yaml.dump(self._config, sort_keys=True)

    def config_hash(self, input_paths: Optional[Iterable[str]] = None) -> str:
        """
        :param input_paths:     files whose content is part of the hash

        :return:                sha256 over the settings and the input file contents
        """
        digest = hashlib.sha256(self.to_yaml().encode('utf-8'))

        for path in sorted(input_paths or []):
            digest.update(path.encode('utf-8'))
            digest.update(file_digest(path).encode('ascii'))

        return digest.hexdigest()
