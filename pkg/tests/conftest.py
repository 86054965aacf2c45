import numpy as np
import pytest

from dlo_r2s2r.task_env import EpisodeRecord, EpisodeStep


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def make_record(n_steps=16, rng=None, theta=None):
    """Synthetic episode with random keypoint observations and actions."""
    rng = rng or np.random.default_rng(0)
    steps = []
    for t in range(n_steps):
        obs = np.concatenate([
            rng.uniform(0.3, 0.5, 2),        # grip
            rng.uniform(-1.0, 1.0, 10),      # 5 keypoints
        ])
        action = rng.uniform(-0.06, 0.06, 2)
        steps.append(EpisodeStep(obs, action, float(rng.uniform(0, 1)),
                                 t == n_steps - 1))
    return EpisodeRecord(steps, theta)
