import numpy as np
import pytest

from divens.genome import Genome, SearchSpaceBounds


@pytest.fixture
def table_bounds():
    """The expanded desk search space: blocks 2:6, first layer 4:16, widths 16:64."""
    return SearchSpaceBounds(r_min=2, r_max=6, c_min=4, c_max=16,
                             o_min=16, o_max=64, d_min=0.1, d_max=0.9)


@pytest.fixture
def tiny_bounds():
    """Small widths so models stay cheap to train in tests."""
    return SearchSpaceBounds(r_min=1, r_max=3, c_min=4, c_max=8,
                             o_min=4, o_max=12, d_min=0.0, d_max=0.5)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_genome(j=False, c=4, blocks=((4, 0.0),)):
    return Genome(j=j, c=c, blocks=tuple(blocks))
