import sys
from pathlib import Path

import numpy as np
import pytest

PROJECT_ROOT = Path(__file__).resolve().parents[1]
if str(PROJECT_ROOT) not in sys.path:
    sys.path.insert(0, str(PROJECT_ROOT))

from core.backbone import ModelConfig  # noqa: E402
from core.run_config import RunConfig  # noqa: E402


def tiny_model_config(**kw):
    """Kleines Netz für schnelle Tests (gleiche Topologie, wenige Kanäle)."""
    base = dict(stage_channels=[2, 3, 4, 4, 4], decoder_channels=[6, 4], mpm_layers=1,
                hidden=8, heads=2, ffn=8, clm_hidden=4, clm_dim=4, init_seed=0)
    base.update(kw)
    return ModelConfig(**base)


def tiny_run_config(**kw):
    cfg = RunConfig(model=tiny_model_config())
    cfg.optim.epochs = 1
    cfg.optim.batch_size = 4
    cfg.scene.count_range = [0, 6]
    for key, value in kw.items():
        cfg.set(key.replace("__", "."), value)
    return cfg.validate()


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def tiny_cfg():
    return tiny_run_config()
