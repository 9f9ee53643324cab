"""
Shared fixtures: toy model dimensions, seeded generators and small datasets.
"""

import os
import tempfile

import numpy as np
import pytest

# module loggers attach their file handler at import time
os.environ.setdefault("CHATVLA_LOG_DIR", tempfile.mkdtemp(prefix="chatvla-logs-"))

from src.model.config import ModelConfig
from src.trainer.config import TrainConfig
from src.worldsim.datasets import VTDataset, gen_demonstrations
from src.worldsim.questions import gen_vt_samples
from src.worldsim.render import render
from src.worldsim.tasks import generate_scene


@pytest.fixture(autouse=True)
def _no_out_override(monkeypatch):
    monkeypatch.delenv("CHATVLA_OUT", raising=False)


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture
def tiny_config():
    """d=8, 2 heads, 2 blocks: small enough for full finite-difference checks."""
    return ModelConfig(d_model=8, n_heads=2, n_layers=2, d_ff=16, action_hidden=16, timestep_dim=4)


@pytest.fixture
def small_config():
    return ModelConfig(d_model=16, n_heads=2, n_layers=1, d_ff=32, action_hidden=32)


@pytest.fixture
def scene_image():
    return render(generate_scene("pick_cube_box", 3))


@pytest.fixture(scope="session")
def robot_data():
    return gen_demonstrations(["pick_cube_box", "push_block_box"], 2, True, 3)


@pytest.fixture(scope="session")
def vt_data():
    return VTDataset(gen_vt_samples(12, 3))


@pytest.fixture
def stage1_config():
    return TrainConfig(stage=1, batch_size=4, total_steps=6, seed=5, log_every=3)


@pytest.fixture
def stage2_config():
    return TrainConfig(stage=2, batch_size=4, total_steps=8, seed=5, log_every=4)
