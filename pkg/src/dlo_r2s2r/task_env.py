"""Gym-style DLO reaching task: reward, termination, vectorized envs.

The end-effector (grip) is commanded by clamped (dx, dz) deltas inside a
safety box; observations are the 2D grip position plus 5 keypoints in
normalized image coordinates (4 DLO points and the target). Reward is the
Frobenius distance of the DLO keypoint cluster to the target, scaled to
[0, 1]; leaving the workspace terminates with reward -1.

All stepping runs through a batched VecEnv so 12 domain-randomized
instances advance together; a single environment is a VecEnv of size 1.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import perception
from .chain_sim import (DEFAULT_BOX, ParamBox, SimConfig, SystemParams,
                        batch_constants, init_chain, step_chains_batch)
from .perception import CameraModel, KeypointFrame, corrupt, extract_keypoints, project

ACTION_BOUND = 0.06
HORIZON = 16
OBS_DIM = 12
N_ENVS_DEFAULT = 12

WORKSPACE_X = (0.275, 0.6)
WORKSPACE_Z = (0.1, 0.5)

# Presets for the emulated "real" DLOs: two short stiff/soft ropes plus a
# medium and a long soft one. Young's moduli are ordinal stand-ins for
# silicone Shore hardnesses (A-40 > 00-50 > 00-20), inside the parameter box.
REAL_DLO_PRESETS = (
    SystemParams(0.200, 4.0e4),   # DLO-0, medium soft
    SystemParams(0.200, 4.0e3),   # DLO-1, extra soft
    SystemParams(0.270, 1.5e4),   # DLO-2, soft
    SystemParams(0.290, 4.0e3),   # DLO-3, extra soft
)


@dataclass(frozen=True)
class TaskConfig:
    grip_start: tuple = (0.4, 0.45)
    target_nominal: tuple = (0.52, 0.12)
    d_thresh: float = 1.5
    success_reward: float = 0.75
    camera_offset_range: float = 0.025  # per-axis uniform, m
    target_offset_range: float = 0.02   # per-axis uniform, m
    noise_std: float = 0.005            # keypoint noise in normalized units
    permute: bool = True                # permute DLO keypoints each frame
    world_window: tuple = perception.DEFAULT_WINDOW


@dataclass
class EpisodeStep:
    obs: np.ndarray      # (12,) observation the action was computed from
    action: np.ndarray   # (2,) executed (clamped) action
    reward: float
    done: bool


@dataclass
class EpisodeRecord:
    steps: list
    theta_used: SystemParams | None = None

    def __len__(self):
        return len(self.steps)

    def total_reward(self) -> float:
        return float(sum(s.reward for s in self.steps))

    def to_json_dict(self) -> dict:
        return {
            "params": (list(self.theta_used.as_array())
                       if self.theta_used is not None else None),
            "steps": [
                {"obs": [float(v) for v in s.obs],
                 "action": [float(v) for v in s.action],
                 "reward": float(s.reward),
                 "done": bool(s.done)}
                for s in self.steps
            ],
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "EpisodeRecord":
        theta = (SystemParams(*d["params"]) if d.get("params") else None)
        steps = [EpisodeStep(np.array(s["obs"]), np.array(s["action"]),
                             s["reward"], s["done"]) for s in d["steps"]]
        return cls(steps, theta)


def save_records(path, records):
    with open(path, "w") as f:
        for r in records:
            f.write(json.dumps(r.to_json_dict()) + "\n")


def load_records(path):
    out = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line:
                out.append(EpisodeRecord.from_json_dict(json.loads(line)))
    return out


def compute_reward(kframe: KeypointFrame, d_thresh: float = 1.5):
    """Cluster distance, scaled reward, success flag.

    d = Frobenius norm of the 4 DLO-keypoint-to-target distance vector;
    r = 1 - d/d_thresh if d <= d_thresh else 0; success iff r >= 0.75.
    """
    diff = kframe.dlo_keypoints - kframe.target_keypoint
    d = float(np.sqrt(np.sum(diff ** 2)))
    r = 1.0 - d / d_thresh if d <= d_thresh else 0.0
    return d, r, r >= 0.75


class VecEnv:
    """Synchronous vector of independent reaching environments.

    Each member owns its parameters, RNG stream, camera/target offsets, and
    chain state. Chains are stacked so one control step advances every
    member with a single pass through the physics kernel; batched and
    serial stepping therefore produce identical results.
    """

    def __init__(self, params_list, sim_cfg: SimConfig = None,
                 task_cfg: TaskConfig = None, seed: int = 0,
                 auto_reset: bool = True, hide_theta: bool = False,
                 damping_scale: float = 1.0, friction_scale: float = 1.0,
                 box: ParamBox = DEFAULT_BOX, seed_seqs=None):
        for p in params_list:
            if not box.contains(p):
                raise ValueError(f"sample {p} outside the parameter box")
        self.params = list(params_list)
        self.n = len(self.params)
        self.sim_cfg = sim_cfg or SimConfig()
        self.task_cfg = task_cfg or TaskConfig()
        self.auto_reset = auto_reset
        self.hide_theta = hide_theta
        self.box = box

        self._rest, self._kbend, self._damp, self._fric = batch_constants(
            self.params, self.sim_cfg, damping_scale, friction_scale)
        if seed_seqs is None:
            seed_seqs = np.random.SeedSequence(seed).spawn(self.n)
        self.rngs = [np.random.default_rng(ss) for ss in seed_seqs]

        m = self.sim_cfg.n_segments + 1
        self.pos = np.zeros((self.n, m, 2))
        self.vel = np.zeros((self.n, m, 2))
        self.grip = np.zeros((self.n, 2))
        self.cam_offsets = np.zeros((self.n, 2))
        self.targets = np.zeros((self.n, 2))
        self.t = np.zeros(self.n, dtype=int)
        self.dones = np.ones(self.n, dtype=bool)
        self.last_obs = np.zeros((self.n, OBS_DIM))
        self._episode_steps = [[] for _ in range(self.n)]
        self.completed: list[EpisodeRecord] = []

    # -- per-member helpers ----------------------------------------------

    def _camera(self, i: int) -> CameraModel:
        return CameraModel(self.task_cfg.world_window,
                           tuple(self.cam_offsets[i]))

    def _chain_state(self, i: int):
        from .chain_sim import ChainState
        return ChainState(self.pos[i], self.vel[i], self.grip[i])

    def _clean_frame(self, i: int) -> KeypointFrame:
        kps_world = extract_keypoints(self._chain_state(i))
        cam = self._camera(i)
        return KeypointFrame(project(kps_world, cam),
                             project(self.targets[i], cam)[0])

    def _observe(self, i: int) -> np.ndarray:
        frame = corrupt(self._clean_frame(i), self.task_cfg.noise_std,
                        self.task_cfg.permute, self.rngs[i])
        return np.concatenate([
            self.grip[i],
            frame.dlo_keypoints.ravel(),
            frame.target_keypoint,
        ])

    def _reset_member(self, i: int) -> np.ndarray:
        tc = self.task_cfg
        state = init_chain(self.params[i], tc.grip_start, self.sim_cfg)
        self.pos[i] = state.node_pos
        self.vel[i] = state.node_vel
        self.grip[i] = state.grip_pos
        rng = self.rngs[i]
        self.cam_offsets[i] = rng.uniform(-tc.camera_offset_range,
                                          tc.camera_offset_range, 2)
        self.targets[i] = np.asarray(tc.target_nominal) + rng.uniform(
            -tc.target_offset_range, tc.target_offset_range, 2)
        self.t[i] = 0
        self.dones[i] = False
        self._episode_steps[i] = []
        obs = self._observe(i)
        self.last_obs[i] = obs
        return obs

    # -- public API ------------------------------------------------------

    def reset(self) -> np.ndarray:
        return np.stack([self._reset_member(i) for i in range(self.n)])

    def step(self, actions: np.ndarray):
        """Synchronous step. actions: (n, 2). Returns (obs, rewards, dones, infos)."""
        actions = np.asarray(actions, dtype=np.float64)
        if actions.shape != (self.n, 2):
            raise ValueError(f"actions must have shape ({self.n}, 2)")
        if np.any(self.dones) and not self.auto_reset:
            raise RuntimeError("stepping a finished episode (auto_reset off)")

        acts = np.clip(actions, -ACTION_BOUND, ACTION_BOUND)
        targets = self.grip + acts
        violation = (
            (targets[:, 0] < WORKSPACE_X[0]) | (targets[:, 0] > WORKSPACE_X[1])
            | (targets[:, 1] < WORKSPACE_Z[0]) | (targets[:, 1] > WORKSPACE_Z[1])
        )
        # Violating commands terminate without actuating.
        grip_targets = np.where(violation[:, None], self.grip, targets)
        step_chains_batch(self.pos, self.vel, self.grip, grip_targets,
                          self._rest, self._kbend, self._damp, self._fric,
                          self.sim_cfg)
        self.t += 1

        rewards = np.zeros(self.n)
        dones = np.zeros(self.n, dtype=bool)
        obs_out = np.zeros((self.n, OBS_DIM))
        infos = [dict() for _ in range(self.n)]
        for i in range(self.n):
            if violation[i]:
                rewards[i] = -1.0
                dones[i] = True
                infos[i].update(violation=True, success=False, d=np.nan)
            else:
                d, r, success = compute_reward(self._clean_frame(i),
                                               self.task_cfg.d_thresh)
                rewards[i] = r
                dones[i] = success or self.t[i] >= HORIZON
                infos[i].update(violation=False, success=success, d=d)
            infos[i]["t"] = int(self.t[i])

            self._episode_steps[i].append(EpisodeStep(
                self.last_obs[i].copy(), acts[i].copy(),
                float(rewards[i]), bool(dones[i])))

            if dones[i]:
                theta = None if self.hide_theta else self.params[i]
                self.completed.append(
                    EpisodeRecord(self._episode_steps[i], theta))
                self.dones[i] = True
                if self.auto_reset:
                    terminal = self._observe(i)
                    infos[i]["terminal_observation"] = terminal
                    obs_out[i] = self._reset_member(i)
                else:
                    obs_out[i] = self._observe(i)
                    self.last_obs[i] = obs_out[i]
            else:
                obs_out[i] = self._observe(i)
                self.last_obs[i] = obs_out[i]
        return obs_out, rewards, dones, infos


class Env:
    """Single reaching environment (a VecEnv of size 1 with explicit resets)."""

    def __init__(self, params: SystemParams, sim_cfg: SimConfig = None,
                 task_cfg: TaskConfig = None, seed: int = 0,
                 hide_theta: bool = False, damping_scale: float = 1.0,
                 friction_scale: float = 1.0, seed_seq=None):
        seqs = [seed_seq] if seed_seq is not None else None
        self.vec = VecEnv([params], sim_cfg, task_cfg, seed=seed,
                          auto_reset=False, hide_theta=hide_theta,
                          damping_scale=damping_scale,
                          friction_scale=friction_scale, seed_seqs=seqs)

    @property
    def params(self) -> SystemParams:
        return self.vec.params[0]

    def reset(self) -> np.ndarray:
        return self.vec.reset()[0]

    def step(self, action):
        obs, rewards, dones, infos = self.vec.step(
            np.asarray(action, dtype=np.float64)[None])
        return obs[0], float(rewards[0]), bool(dones[0]), infos[0]

    def rollout(self, policy, max_steps: int = HORIZON,
                deterministic: bool = True) -> EpisodeRecord:
        """Run one full episode with a policy object (act(obs, t) -> action)."""
        obs = self.reset()
        for t in range(max_steps):
            action = policy.act(obs, t, deterministic=deterministic)
            obs, _, done, _ = self.step(action)
            if done:
                break
        return self.vec.completed.pop()


def make_vector_env(samples, sim_cfg: SimConfig = None,
                    task_cfg: TaskConfig = None, seed: int = 0,
                    n_envs: int = N_ENVS_DEFAULT, **kwargs) -> VecEnv:
    """The 12-member domain-randomized training VecEnv."""
    if len(samples) != n_envs:
        raise ValueError(f"expected exactly {n_envs} parameter samples, "
                         f"got {len(samples)}")
    return VecEnv(samples, sim_cfg, task_cfg, seed=seed, **kwargs)


def make_real_emulator(dlo_index: int, sim_cfg: SimConfig = None,
                       task_cfg: TaskConfig = None, seed: int = 0) -> Env:
    """Emulated real-world environment for one of the 4 DLO presets.

    Adds reality-gap perturbations on top of the hidden ground-truth
    parameters: more observation noise, keypoint permutation, and scaled
    damping/friction. Episode records omit the parameters.
    """
    if not 0 <= dlo_index < len(REAL_DLO_PRESETS):
        raise ValueError(f"dlo_index must be in 0..3, got {dlo_index}")
    tc = task_cfg or TaskConfig()
    tc = replace(tc, noise_std=0.01, permute=True)
    return Env(REAL_DLO_PRESETS[dlo_index], sim_cfg, tc, seed=seed,
               hide_theta=True, damping_scale=1.15, friction_scale=1.2)
