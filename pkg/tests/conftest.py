import os

import numpy as np
import pytest
from hypothesis import settings

from pdrb import greedy
from pdrb.mesh import make_lshape_initial, uniform_refine
from pdrb.problem import Discretization

settings.register_profile("pdrb", deadline=None, max_examples=25, derandomize=True)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "pdrb"))


@pytest.fixture(scope="session")
def lshape0():
    return make_lshape_initial()


@pytest.fixture(scope="session")
def disc_small():
    """L-shape after 6 bisection rounds (384 elements)."""
    return Discretization(uniform_refine(make_lshape_initial(), 6))


@pytest.fixture(scope="session")
def disc_mid():
    """L-shape after 8 bisection rounds (1536 elements)."""
    return Discretization(uniform_refine(make_lshape_initial(), 8))


@pytest.fixture(scope="session")
def small_model(disc_mid):
    """Greedy-chosen N=4 model on disc_mid, with its snapshots."""
    train = greedy.make_training_set(500, 0)
    mu = np.zeros(2)
    snaps = []
    from pdrb import rb
    for _ in range(4):
        snaps.append((mu,) + greedy.solve_pair(disc_mid, mu)[:2])
        model = rb.build_offline(disc_mid, snaps)
        mu = train[np.argmax(rb.evaluate(model, train))]
    return model, snaps
