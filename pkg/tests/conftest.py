import numpy as np
import pytest

from classex.ranks import ScoreTable


def naive_ranks(scores):
    """Double-loop rank counter used as an independent oracle."""
    k1, r, _ = scores.shape
    out = np.zeros((k1, r), dtype=int)
    for i in range(k1):
        for j in range(r):
            out[i, j] = sum(1 for s in range(k1) if scores[i, j, s] <= scores[i, j, i])
    return out


def random_table(rng, k1, r):
    return ScoreTable(rng.standard_normal((k1, r, k1)))


@pytest.fixture
def three_class():
    # correct-label ranks 3, 2, 1
    s = np.array([
        [[0.9, 0.2, 0.1]],
        [[0.3, 0.5, 0.9]],
        [[0.4, 0.8, 0.1]],
    ])
    return ScoreTable(s)
