import numpy as np
import pytest
import torch

from dlo_r2s2r.chain_sim import DEFAULT_BOX, SimConfig, SystemParams
from dlo_r2s2r.lfi import (InferenceResult, LfiConfig, RandomPolicy,
                           SweepPolicy, collect_trajectories, run_inference)
from dlo_r2s2r.mog import UniformBoxDensity, single_gaussian
from dlo_r2s2r.task_env import (HORIZON, N_ENVS_DEFAULT, Env, TaskConfig,
                                make_vector_env)

QUIET = TaskConfig(noise_std=0.0, permute=False, camera_offset_range=0.0,
                   target_offset_range=0.0)

# df = 4, alpha = 0.01
CHI2_CRITICAL_5_BINS = 13.277


def quiet_factory(thetas, group):
    return make_vector_env(list(thetas), task_cfg=QUIET, seed=1000 + group)


class TestPolicies:
    def test_sweep_schedule_covers_horizon(self):
        assert len(SweepPolicy.SCHEDULE) == HORIZON

    def test_sweep_actions_within_bounds(self):
        policy = SweepPolicy()
        for t in range(HORIZON):
            a = policy.act(np.zeros(12), t)
            assert np.all(np.abs(a) <= 0.06 + 1e-12)

    def test_sweep_descends_before_dragging(self):
        dz = [SweepPolicy.SCHEDULE[t][1] for t in range(6)]
        assert all(v < 0 for v in dz)

    def test_random_policy_bounded_and_seeded(self):
        a = [RandomPolicy(seed=3).act(None, t) for t in range(8)]
        b = [RandomPolicy(seed=3).act(None, t) for t in range(8)]
        for x, y in zip(a, b):
            assert np.array_equal(x, y)
            assert np.all(np.abs(x) <= 0.06)


class TestCollectTrajectories:
    def test_near_delta_prior_concentrates_thetas(self):
        prior = single_gaussian((0.5, 0.5), 1e-9)
        want = DEFAULT_BOX.denormalize(np.array([0.5, 0.5]))
        rng = np.random.default_rng(0)
        data = collect_trajectories(SweepPolicy(), prior, N_ENVS_DEFAULT,
                                    quiet_factory, rng)
        assert len(data) == N_ENVS_DEFAULT
        for theta, rec in data:
            assert np.allclose(theta.as_array(), want, atol=1e-6)
            assert 1 <= len(rec.steps) <= HORIZON

    def test_uniform_prior_length_coverage(self):
        rng = np.random.default_rng(1)
        data = collect_trajectories(SweepPolicy(), UniformBoxDensity(), 60,
                                    quiet_factory, rng)
        lengths = np.array([DEFAULT_BOX.normalize(th.as_array())[0]
                            for th, _ in data])
        counts, _ = np.histogram(lengths, bins=5, range=(0.0, 1.0))
        expected = len(lengths) / 5
        chi2 = float(np.sum((counts - expected) ** 2 / expected))
        assert chi2 < CHI2_CRITICAL_5_BINS

    def test_rerun_identical_dataset(self):
        prior = UniformBoxDensity()
        runs = []
        for _ in range(2):
            rng = np.random.default_rng(7)
            runs.append(collect_trajectories(SweepPolicy(), prior,
                                             N_ENVS_DEFAULT, quiet_factory,
                                             rng))
        for (ta, ra), (tb, rb) in zip(*runs):
            assert ta.as_array().tolist() == tb.as_array().tolist()
            for sa, sb in zip(ra.steps, rb.steps):
                assert np.array_equal(sa.obs, sb.obs)

    def test_records_are_full_episodes(self):
        rng = np.random.default_rng(2)
        data = collect_trajectories(SweepPolicy(), UniformBoxDensity(),
                                    N_ENVS_DEFAULT, quiet_factory, rng)
        for _, rec in data:
            assert rec.steps[-1].done


def tiny_cfg(seed=0, **overrides):
    kwargs = dict(n_iterations=2, trajectories_first_iter=12,
                  trajectories_per_iter=12, n_features=16, hidden=32,
                  epochs_first=10, epochs_warm=5, seed=seed)
    kwargs.update(overrides)
    return LfiConfig(**kwargs)


def observed_episode(seed=0):
    env = Env(SystemParams(0.25, 1e4), task_cfg=QUIET, seed=seed)
    return env.rollout(SweepPolicy())


class TestRunInference:
    def test_dataset_growth_and_valid_posteriors(self):
        torch.set_num_threads(1)
        result = run_inference(observed_episode(), SweepPolicy(), tiny_cfg(),
                               task_cfg=QUIET)
        assert result.dataset_sizes == [12, 24]
        assert len(result.posterior_per_iteration) == 2
        assert len(result.loss_curves) == 2
        final = result.final_posterior
        final.validate()
        mean = final.mean_normalized()
        assert np.all(mean >= 0.0) and np.all(mean <= 1.0)

    def test_same_seed_identical_posterior(self):
        torch.set_num_threads(1)
        obs = observed_episode()
        outs = [run_inference(obs, SweepPolicy(), tiny_cfg(seed=4),
                              task_cfg=QUIET).final_posterior.to_json_dict()
                for _ in range(2)]
        assert outs[0] == outs[1]

    def test_invalid_config_rejected(self):
        with pytest.raises(ValueError):
            LfiConfig(n_iterations=0)
        with pytest.raises(ValueError):
            LfiConfig(trajectories_per_iter=0)

    def test_final_posterior_requires_usable_entry(self):
        result = InferenceResult([None], [[1.0]], [12])
        with pytest.raises(RuntimeError):
            result.final_posterior
