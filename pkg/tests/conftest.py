import sys
from pathlib import Path

import numpy as np
import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

# Single-threaded: the networks here are small enough that torch's
# inter-thread synchronization costs more than it saves.
torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def textured_256():
    from synth import make_textured_image

    return make_textured_image(seed=7, size=256)


@pytest.fixture(scope="session")
def textured_rgb_256():
    from synth import make_textured_image

    return make_textured_image(seed=11, size=256, channels=3)
