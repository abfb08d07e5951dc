from __future__ import annotations

from dataclasses import replace
import os
from pathlib import Path
import shutil
import uuid

import pytest

from irs_seguro.sysconfig import AlgoParams, SystemConfig


@pytest.fixture
def tmp_path() -> Path:
    """
    tmp_path sem os.mkdir(path, mode=0o700), que gera pastas ilegiveis em
    alguns ambientes restritos. As pastas ficam dentro do repositorio.
    """

    base = Path.cwd() / ".pytest-tmp"
    if not base.exists():
        os.mkdir(base)

    path = base / f"tmp-{uuid.uuid4().hex}"
    os.mkdir(path)
    try:
        yield path
    finally:
        shutil.rmtree(path, ignore_errors=True)


@pytest.fixture
def tiny_config() -> SystemConfig:
    """M_t=2, N=2, K=1, J=1: pequeno o bastante para resolver em segundos."""
    return replace(
        SystemConfig(m_t=2, n_irs=2, k_users=1, j_eves=1),
        algo=AlgoParams(t_max=4, adversary_samples=200, polish_iterations=2, ao_max_blocks=2),
    )
