import hashlib
import json
import os
import platform
import socket
import time
from datetime import datetime, timezone
from typing import Dict, List, Optional

import numpy as np
from logzero import logger

import hsat
from hsat.hierdata.dataset import dataset_hash

RUN_MANIFEST = 'run_manifest.json'


def file_hash(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, 'rb') as fp:
        for chunk in iter(lambda: fp.read(1 << 20), b''):
            digest.update(chunk)
    return digest.hexdigest()


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


class RunManifest:
    """Reproducibility record of one command: resolved config, inputs and outputs with their hashes."""

    def __init__(self, out_dir: str, command: str, config: dict, argv: Optional[List[str]] = None):
        self._path = os.path.join(out_dir, RUN_MANIFEST)
        self._started = None
        self._values = {
            'command': command,
            'argv': list(argv or []),
            'config': config,
            'tool': {'name': hsat.__product__, 'version': hsat.__version__},
            'host': {
                'hostname': socket.gethostname(),
                'platform': platform.platform(),
                'python': platform.python_version(),
                'numpy': np.__version__,
            },
            'dataset': None,
            'checkpoints': {},
            'outputs': [],
            'status': 'created',
        }

    @property
    def path(self) -> str:
        return self._path

    @property
    def values(self) -> dict:
        return self._values

    def _write(self):
        os.makedirs(os.path.dirname(self._path) or '.', exist_ok=True)
        tmp_path = f'{self._path}.tmp'
        with open(tmp_path, 'w') as fp:
            json.dump(self._values, fp, indent=2, sort_keys=True)
        os.replace(tmp_path, self._path)

    def start(self) -> 'RunManifest':
        self._started = time.perf_counter()
        self._values.update({'status': 'running', 'started_at': _now()})
        self._write()
        logger.debug(f'Run manifest started: {self._path}')
        return self

    def record_dataset(self, directory: str):
        self._values['dataset'] = {'path': os.path.abspath(directory), 'sha256': dataset_hash(directory)}
        self._write()

    def record_checkpoint(self, path: str, role: str = 'input'):
        self._values['checkpoints'][os.path.abspath(path)] = {'role': role, 'sha256': file_hash(path)}

    def record_outputs(self, paths: List[str]):
        self._values['outputs'].extend(os.path.abspath(p) for p in paths)

    def finalize(self, status: str, exit_code: int, error: Optional[str] = None) -> Dict:
        wall = time.perf_counter() - self._started if self._started is not None else None
        self._values.update({'status': status, 'exit_code': exit_code, 'finished_at': _now(), 'wall_clock_s': wall})
        if error:
            self._values['error'] = error
        self._write()
        logger.info(f'Run manifest finalized ({status}): {self._path}')
        return self._values

    @staticmethod
    def load(path: str) -> dict:
        with open(path) as fp:
            return json.load(fp)
