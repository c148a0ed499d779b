import os
import subprocess
import sys

import pytest

from config import Config

ROOT = os.path.dirname(os.path.abspath(__file__))


def _run(code: str) -> subprocess.CompletedProcess:
    env = {k: v for k, v in os.environ.items()
           if k not in ('OMP_NUM_THREADS', 'OPENBLAS_NUM_THREADS', 'MKL_NUM_THREADS')}
    env['PYTHONIOENCODING'] = 'utf-8'
    return subprocess.run([sys.executable, '-c', code], cwd=ROOT, env=env,
                          capture_output=True, encoding='utf-8', check=True)


def test_importing_config_first_pins_threads():
    result = _run("import config, os; print(os.environ['OPENBLAS_NUM_THREADS'])")
    assert result.stdout.strip().endswith(Config.NUM_THREADS)
    assert '⚠️' not in result.stdout


@pytest.mark.parametrize('module', ['conftest', 'cli', 'app'])
def test_entry_points_import_config_before_numpy(module):
    result = _run(f"import {module}")
    assert 'numpy was imported before config' not in result.stdout


def test_late_import_is_reported():
    result = _run("import numpy, config")
    assert 'numpy was imported before config' in result.stdout
