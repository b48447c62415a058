import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from flowuap.network import QNetwork  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def net():
    n = QNetwork.initialize(7)
    # nonzero biases so the bias paths are exercised
    r = np.random.default_rng(8)
    for b in n.biases:
        b[:] = r.normal(0, 0.1, size=b.shape)
    return n


@pytest.fixture(scope="session")
def small_setup():
    """A quickly trained agent on a small synthetic profile: (prepared data, network)."""
    from flowuap.data import SynthConfig, get_profile, prepare, synth_generate
    from flowuap.dqn import TrainConfig, train_run

    prep = prepare(synth_generate(SynthConfig(n_benign=900, n_attack=600, seed=31)),
                   get_profile("cicids2018"), seed=0)
    rep = train_run(prep.balanced, TrainConfig(episodes=4), run_seed=1, test_set=prep.test)
    return prep, rep.agent
