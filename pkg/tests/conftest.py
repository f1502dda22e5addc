import logging

import numpy as np
import pytest

from sold.data import FEATURE_DIM
from sold.model import ModelConfig, init_state
from sold.schedule import cosine_schedule

# k >= L clamping warnings are expected on the short toy corpora
logging.getLogger("sold.data").setLevel(logging.ERROR)


def tiny_config(latent_dim=8, **kw):
    base = dict(embed_dim=8, hidden=16, latent_dim=latent_dim, time_dim=8, den_hidden=16,
                blocks=2, cond_dim=FEATURE_DIM)
    base.update(kw)
    return ModelConfig(**base)


@pytest.fixture
def sched():
    return cosine_schedule(100)


@pytest.fixture
def tiny_state():
    return init_state(tiny_config(), np.random.default_rng(0))


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
