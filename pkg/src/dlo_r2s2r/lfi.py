"""Iterative likelihood-free inference of DLO parameters.

Each iteration draws parameters from the current reference prior, rolls
out the frozen data-collection policy in simulation, grows the training
set, fits the conditional density network, conditions it on the observed
trajectory, and applies the proposal-prior correction. The corrected
posterior becomes the next reference prior.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import torch

from .chain_sim import DEFAULT_BOX, ParamBox, SimConfig, SystemParams
from .mdnn import MdnnModel, TrainConfig, TrajectoryBatch, fit
from .mog import MixtureOfGaussians, UniformBoxDensity, prior_correct
from .rkhs import RffParams, median_heuristic
from .task_env import (HORIZON, N_ENVS_DEFAULT, EpisodeRecord, TaskConfig,
                       make_vector_env)

log = logging.getLogger(__name__)


class SweepPolicy:
    """Open-loop descent followed by horizontal table-dragging sweeps.

    A fixed excitation schedule that bends the chain and drags it across
    the table (pooling shape and drag are the strongest stiffness cues);
    used as the frozen data-collection policy when no trained policy is
    supplied.
    """

    SCHEDULE = ([(0.02, -0.058)] * 6 + [(-0.06, 0.0)] * 4
                + [(0.06, 0.0)] * 4 + [(-0.05, 0.03)] * 2)

    def act(self, obs, t, deterministic: bool = True):
        return np.array(self.SCHEDULE[t % HORIZON], dtype=np.float64)


class RandomPolicy:
    """Uniform random actions; owns its RNG stream."""

    def __init__(self, seed: int = 0, bound: float = 0.06):
        self.rng = np.random.default_rng(seed)
        self.bound = bound

    def act(self, obs, t, deterministic: bool = False):
        return self.rng.uniform(-self.bound, self.bound, 2)


@dataclass
class LfiConfig:
    n_iterations: int = 5                  # paper scale: 15
    trajectories_per_iter: int = 50        # paper scale: 100
    trajectories_first_iter: int = 200     # extra seeding at iteration 0
    correction_mode: str = "eq1"           # or "alg1"
    seed: int = 0
    n_features: int = 128                  # paper scale: 500
    hidden: int = 256                      # paper scale: 1024
    n_components: int = 4
    include_actions: bool = True
    rff_trainable: bool = True
    epochs_first: int = 300
    epochs_warm: int = 120
    learning_rate: float = 1e-3
    batch_size: int = 64

    def __post_init__(self):
        if self.n_iterations < 1:
            raise ValueError("n_iterations must be >= 1")
        if self.trajectories_per_iter < 1:
            raise ValueError("trajectories_per_iter must be >= 1")


@dataclass
class InferenceResult:
    posterior_per_iteration: list
    loss_curves: list
    dataset_sizes: list

    @property
    def final_posterior(self) -> MixtureOfGaussians:
        final = self.posterior_per_iteration[-1]
        if final is None:
            raise RuntimeError("no usable posterior was produced")
        return final


def collect_trajectories(policy, prior, n: int, vec_env_factory,
                         rng: np.random.Generator):
    """(theta, trajectory) pairs: one full episode per low-variance draw.

    Draws are batched per 12-env group; failed groups are skipped and the
    run aborts only if fewer than n/2 trajectories survive.
    """
    dataset = []
    group = 0
    while len(dataset) < n:
        thetas = prior.low_variance_sample(N_ENVS_DEFAULT, rng)
        try:
            env = vec_env_factory(thetas, group)
            env.reset()
            env.completed.clear()
            for t in range(HORIZON):
                actions = np.stack([policy.act(obs, t)
                                    for obs in env.last_obs])
                env.step(actions)
            # Keep the first completed episode per member, in member order
            # (auto-reset may have squeezed in partial second episodes).
            taken = {}
            for rec in env.completed:
                for j, p in enumerate(env.params):
                    if p is rec.theta_used and j not in taken:
                        taken[j] = rec
                        break
            for j in sorted(taken):
                dataset.append((env.params[j], taken[j]))
        except RuntimeError as exc:
            log.warning("collection group %d failed (%s); skipping", group, exc)
        group += 1
        if group > 4 * (n // N_ENVS_DEFAULT + 2):
            break
    if len(dataset) < n // 2:
        raise RuntimeError(
            f"collected only {len(dataset)} of {n} trajectories")
    return dataset[:n]


def _dataset_tensors(dataset, box: ParamBox, dtype=torch.float32):
    records = [rec for _, rec in dataset]
    thetas = np.stack([box.normalize(th.as_array()) for th, _ in dataset])
    batch = TrajectoryBatch.from_records(records, dtype=dtype)
    return batch, torch.as_tensor(thetas, dtype=dtype)


def _keypoint_calibration(dataset, max_records: int = 20) -> np.ndarray:
    pts = []
    for _, rec in dataset[:max_records]:
        for step in rec.steps:
            pts.append(np.asarray(step.obs)[2:12].reshape(5, 2))
    return np.concatenate(pts)


def _is_degenerate(posterior: MixtureOfGaussians) -> bool:
    """Reject unusable posteriors: non-finite parameters, a mixture mean
    outside the normalized box, or a spread wider than the box itself."""
    try:
        posterior.validate()
    except ValueError:
        return True
    if not (np.all(np.isfinite(posterior.means))
            and np.all(np.isfinite(posterior.chol_factors))):
        return True
    mean = posterior.mean_normalized()
    if np.any(mean < 0.0) or np.any(mean > 1.0):
        return True
    return bool(np.any(posterior.marginal_std_normalized() > 0.75))


def run_inference(real_trajs, policy, cfg: LfiConfig,
                  sim_cfg: SimConfig = None, task_cfg: TaskConfig = None,
                  box: ParamBox = DEFAULT_BOX,
                  vec_env_factory=None) -> InferenceResult:
    """Full inference loop conditioned on one (or more) observed episodes.

    real_trajs: an EpisodeRecord or a list of them. With several records the
    per-record conditionals are stacked into one mixture (a flag-style
    extension; the default protocol uses a single trajectory).
    """
    if isinstance(real_trajs, EpisodeRecord):
        real_trajs = [real_trajs]
    sim_cfg = sim_cfg or SimConfig()
    task_cfg = task_cfg or TaskConfig()
    if vec_env_factory is None:
        def vec_env_factory(thetas, group, _seed=[cfg.seed]):
            return make_vector_env(thetas, sim_cfg, task_cfg,
                                   seed=cfg.seed * 100003 + group)

    rng = np.random.default_rng(cfg.seed)
    uniform = UniformBoxDensity(box)
    reference = uniform
    dataset = []
    model = None
    posteriors, curves, sizes = [], [], []

    for it in range(cfg.n_iterations):
        n_new = (cfg.trajectories_first_iter if it == 0
                 else cfg.trajectories_per_iter)
        dataset.extend(collect_trajectories(policy, reference, n_new,
                                            vec_env_factory, rng))
        sizes.append(len(dataset))

        if model is None:
            sigma = median_heuristic(_keypoint_calibration(dataset))
            rff = RffParams.draw(cfg.n_features, sigma,
                                 np.random.default_rng(cfg.seed + 1),
                                 trainable=cfg.rff_trainable)
            model = MdnnModel(rff, cfg.hidden, cfg.n_components, box,
                              cfg.include_actions, dtype=torch.float32,
                              seed=cfg.seed + 2)

        batch, thetas = _dataset_tensors(dataset, box)
        epochs = cfg.epochs_first if it == 0 else cfg.epochs_warm
        train_cfg = TrainConfig(learning_rate=cfg.learning_rate,
                                batch_size=cfg.batch_size, epochs=epochs,
                                seed=cfg.seed + 10 + it)
        curve = fit(model, batch, thetas, train_cfg)
        curves.append(curve)

        qs = [model.posterior(rt) for rt in real_trajs]
        if len(qs) == 1:
            q = qs[0]
        else:
            q = MixtureOfGaussians(
                np.concatenate([m.weights / len(qs) for m in qs]),
                np.concatenate([m.means for m in qs]),
                np.concatenate([m.chol_factors for m in qs]), box)
        posterior = prior_correct(q, reference, uniform,
                                  mode=cfg.correction_mode)
        if _is_degenerate(posterior):
            log.warning("degenerate posterior at iteration %d; "
                        "keeping the previous reference", it)
            posteriors.append(posteriors[-1] if posteriors else None)
            continue
        posteriors.append(posterior)
        reference = posterior

    return InferenceResult(posteriors, curves, sizes)
