"""2D chain model of a deformable linear object (DLO).

The DLO is a chain of point masses hanging from a kinematically driven grip
point. Inextensibility is enforced by iterative distance-constraint
projection, bending stiffness by angular springs at interior joints, and
table contact by position clamping with a tangential friction factor.
Integration is semi-implicit Euler in position-based-dynamics style.

All stepping goes through a batched kernel so a vectorized environment can
advance many independent chains with the same number of python-level ops.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

# Identifiable parameter box (meters, pascals).
LENGTH_RANGE = (0.195, 0.305)
YOUNGS_RANGE = (1.0e3, 5.0e4)


class SimulationError(RuntimeError):
    """Fatal integration failure (NaN/Inf in the state)."""


@dataclass(frozen=True)
class SystemParams:
    """Inferred physical parameter vector: (length, Young's modulus)."""

    length: float
    youngs_modulus: float

    def __post_init__(self):
        if not (np.isfinite(self.length) and np.isfinite(self.youngs_modulus)):
            raise ValueError("SystemParams must be finite")
        if not (LENGTH_RANGE[0] <= self.length <= LENGTH_RANGE[1]):
            raise ValueError(f"length {self.length} outside {LENGTH_RANGE}")
        if not (YOUNGS_RANGE[0] <= self.youngs_modulus <= YOUNGS_RANGE[1]):
            raise ValueError(
                f"youngs_modulus {self.youngs_modulus} outside {YOUNGS_RANGE}"
            )

    def as_array(self) -> np.ndarray:
        return np.array([self.length, self.youngs_modulus], dtype=np.float64)


@dataclass(frozen=True)
class ParamBox:
    """Axis-aligned support box for SystemParams."""

    lo: SystemParams = SystemParams(LENGTH_RANGE[0], YOUNGS_RANGE[0])
    hi: SystemParams = SystemParams(LENGTH_RANGE[1], YOUNGS_RANGE[1])

    def __post_init__(self):
        lo, hi = self.lo.as_array(), self.hi.as_array()
        if not np.all(lo < hi):
            raise ValueError("ParamBox requires lo < hi componentwise")

    @property
    def lo_array(self) -> np.ndarray:
        return self.lo.as_array()

    @property
    def hi_array(self) -> np.ndarray:
        return self.hi.as_array()

    @property
    def median(self) -> SystemParams:
        mid = 0.5 * (self.lo_array + self.hi_array)
        return SystemParams(mid[0], mid[1])

    def contains(self, theta: SystemParams) -> bool:
        t = theta.as_array()
        return bool(np.all(t >= self.lo_array) and np.all(t <= self.hi_array))

    def normalize(self, theta: np.ndarray) -> np.ndarray:
        """Map physical coordinates into the unit square [0, 1]^2."""
        return (np.asarray(theta, dtype=np.float64) - self.lo_array) / (
            self.hi_array - self.lo_array
        )

    def denormalize(self, unit: np.ndarray) -> np.ndarray:
        return self.lo_array + np.asarray(unit, dtype=np.float64) * (
            self.hi_array - self.lo_array
        )

    def clamp(self, theta: np.ndarray) -> np.ndarray:
        return np.clip(theta, self.lo_array, self.hi_array)

    def to_json_dict(self) -> dict:
        return {"lo": list(self.lo_array), "hi": list(self.hi_array)}

    @classmethod
    def from_json_dict(cls, d: dict) -> "ParamBox":
        return cls(SystemParams(*d["lo"]), SystemParams(*d["hi"]))


DEFAULT_BOX = ParamBox()


@dataclass(frozen=True)
class SimConfig:
    n_segments: int = 10
    cross_section: float = 0.015          # square side, m
    dt: float = 1.0 / 240.0               # physics substep, s
    substeps_per_control: int = 15        # control rate ~16 Hz
    gravity: float = 9.81                 # m/s^2
    linear_damping: float = 2.0           # 1/s
    table_height: float = 0.0             # world z of the table plane
    mass_density: float = 980.0           # kg/m^3, ~55 g for a 250 mm DLO
    friction: float = 0.5                 # tangential velocity scaling on contact
    constraint_iters: int = 12

    def __post_init__(self):
        if self.n_segments < 2:
            raise ValueError("n_segments must be >= 2")
        if self.dt <= 0:
            raise ValueError("dt must be > 0")
        if self.substeps_per_control < 1:
            raise ValueError("substeps_per_control must be >= 1")


@dataclass
class ChainState:
    """Node positions/velocities of one chain; node 0 rides on the grip."""

    node_pos: np.ndarray   # (n_segments+1, 2), (x, z) meters
    node_vel: np.ndarray   # (n_segments+1, 2), m/s
    grip_pos: np.ndarray   # (2,), == node_pos[0]

    def copy(self) -> "ChainState":
        return ChainState(
            self.node_pos.copy(), self.node_vel.copy(), self.grip_pos.copy()
        )


def bending_stiffness(youngs_modulus: float, cross_section: float,
                      seg_len: float) -> float:
    """Joint angular stiffness E*I/L (N*m/rad), I = w^4/12 for a square beam."""
    if youngs_modulus <= 0 or cross_section <= 0 or seg_len <= 0:
        raise ValueError("bending_stiffness requires positive inputs")
    second_moment = cross_section ** 4 / 12.0
    return youngs_modulus * second_moment / seg_len


def chain_constants(params: SystemParams, cfg: SimConfig):
    """Derived per-chain quantities: (rest segment length, joint stiffness, node mass)."""
    seg_len = params.length / cfg.n_segments
    k_bend = bending_stiffness(params.youngs_modulus, cfg.cross_section, seg_len)
    total_mass = cfg.mass_density * cfg.cross_section ** 2 * params.length
    node_mass = total_mass / (cfg.n_segments + 1)
    return seg_len, k_bend, node_mass


def init_chain(params: SystemParams, grip, cfg: SimConfig) -> ChainState:
    """Chain at rest hanging straight down from the grip, clamped to the table."""
    grip = np.asarray(grip, dtype=np.float64)
    n = cfg.n_segments
    seg_len = params.length / n
    z = grip[1] - seg_len * np.arange(n + 1, dtype=np.float64)
    z = np.maximum(z, cfg.table_height)
    pos = np.stack([np.full(n + 1, grip[0]), z], axis=1)
    return ChainState(pos, np.zeros((n + 1, 2)), grip.copy())


def joint_angles(node_pos: np.ndarray) -> np.ndarray:
    """Signed deviation of each interior joint from straight, radians.

    Accepts (..., n_nodes, 2) and returns (..., n_nodes - 2).
    """
    a = node_pos[..., 1:-1, :] - node_pos[..., :-2, :]
    b = node_pos[..., 2:, :] - node_pos[..., 1:-1, :]
    cross = a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]
    dot = a[..., 0] * b[..., 0] + a[..., 1] * b[..., 1]
    return np.arctan2(cross, dot)


def _bending_forces(pos: np.ndarray, k_bend: np.ndarray) -> np.ndarray:
    """Angular-spring forces, batched. pos: (B, M, 2); k_bend: (B,)."""
    a = pos[:, 1:-1] - pos[:, :-2]       # (B, J, 2) into each joint
    b = pos[:, 2:] - pos[:, 1:-1]        # (B, J, 2) out of each joint
    theta = joint_angles(pos)            # (B, J)
    a2 = np.sum(a * a, axis=-1) + 1e-12
    b2 = np.sum(b * b, axis=-1) + 1e-12
    perp_a = np.stack([-a[..., 1], a[..., 0]], axis=-1)
    perp_b = np.stack([-b[..., 1], b[..., 0]], axis=-1)
    coef = (-k_bend[:, None] * theta)    # torque at each joint
    f_prev = coef[..., None] * perp_a / a2[..., None]
    f_next = coef[..., None] * perp_b / b2[..., None]
    forces = np.zeros_like(pos)
    forces[:, :-2] += f_prev
    forces[:, 2:] += f_next
    forces[:, 1:-1] -= f_prev + f_next
    return forces


def step_chains_batch(pos: np.ndarray, vel: np.ndarray, grip: np.ndarray,
                      grip_target: np.ndarray, rest_len: np.ndarray,
                      k_bend: np.ndarray, damping: np.ndarray,
                      friction: np.ndarray, cfg: SimConfig) -> None:
    """Advance B independent chains by one control step, in place.

    pos/vel: (B, M, 2); grip/grip_target: (B, 2); rest_len/k_bend/damping/
    friction: (B,). The grip interpolates linearly to its target across the
    substeps. Identical math per batch row, so batched and serial stepping
    agree bitwise.
    """
    dt = cfg.dt
    n_sub = cfg.substeps_per_control
    grip_start = grip.copy()
    for s in range(1, n_sub + 1):
        frac = s / n_sub
        g = grip_start + frac * (grip_target - grip_start)

        # k_bend comes in pre-divided by node mass: these are accelerations.
        acc = _bending_forces(pos, k_bend)
        vel[:, 1:] += dt * acc[:, 1:]
        vel[:, 1:, 1] -= dt * cfg.gravity
        vel[:, 1:] *= np.clip(1.0 - damping * dt, 0.0, 1.0)[:, None, None]

        prev_pos = pos.copy()
        pred = pos + dt * vel
        pred[:, 0] = g

        # Ordered distance projection from the pinned grip end.
        n_seg = pos.shape[1] - 1
        for _ in range(cfg.constraint_iters):
            for i in range(n_seg):
                d = pred[:, i + 1] - pred[:, i]
                dist = np.sqrt(np.sum(d * d, axis=-1)) + 1e-12
                corr = ((dist - rest_len) / dist)[:, None] * d
                if i == 0:
                    pred[:, 1] -= corr
                else:
                    pred[:, i] += 0.5 * corr
                    pred[:, i + 1] -= 0.5 * corr

        contact = pred[:, :, 1] < cfg.table_height
        pred[:, :, 1] = np.maximum(pred[:, :, 1], cfg.table_height)

        vel[...] = (pred - prev_pos) / dt
        keep = np.clip(1.0 - friction, 0.0, 1.0)[:, None]
        vel[:, :, 0] = np.where(contact, vel[:, :, 0] * keep, vel[:, :, 0])
        pos[...] = pred
        grip[...] = g

    if not np.isfinite(pos).all() or not np.isfinite(vel).all():
        bad = np.where(~np.isfinite(pos).any(axis=(1, 2)))[0]
        raise SimulationError(
            f"non-finite chain state after control step (batch rows {bad.tolist()})"
        )


def step_physics(state: ChainState, grip_target, params: SystemParams,
                 cfg: SimConfig) -> ChainState:
    """One control step of a single chain; returns a new ChainState."""
    seg_len, k_bend_phys, node_mass = chain_constants(params, cfg)
    out = state.copy()
    pos = out.node_pos[None]
    vel = out.node_vel[None]
    grip = out.grip_pos[None]
    target = np.asarray(grip_target, dtype=np.float64)[None]
    step_chains_batch(
        pos, vel, grip, target,
        rest_len=np.array([seg_len]),
        k_bend=np.array([k_bend_phys / node_mass]),
        damping=np.array([cfg.linear_damping]),
        friction=np.array([cfg.friction]),
        cfg=cfg,
    )
    return out


def batch_constants(params_list, cfg: SimConfig, damping_scale=1.0,
                    friction_scale=1.0):
    """Stacked per-chain constants for step_chains_batch.

    k_bend is pre-divided by node mass (the kernel works in accelerations).
    """
    rest, kb, damp, fric = [], [], [], []
    for p in params_list:
        seg_len, k_bend_phys, node_mass = chain_constants(p, cfg)
        rest.append(seg_len)
        kb.append(k_bend_phys / node_mass)
        damp.append(cfg.linear_damping * damping_scale)
        fric.append(cfg.friction * friction_scale)
    return (np.array(rest), np.array(kb), np.array(damp), np.array(fric))


def mechanical_energy(state: ChainState, params: SystemParams,
                      cfg: SimConfig) -> float:
    """Kinetic + gravitational + bending elastic energy (joules)."""
    seg_len, k_bend, node_mass = chain_constants(params, cfg)
    ke = 0.5 * node_mass * float(np.sum(state.node_vel ** 2))
    pe = node_mass * cfg.gravity * float(
        np.sum(state.node_pos[:, 1] - cfg.table_height)
    )
    theta = joint_angles(state.node_pos)
    be = 0.5 * k_bend * float(np.sum(theta ** 2))
    return ke + pe + be


def segment_lengths(node_pos: np.ndarray) -> np.ndarray:
    return np.linalg.norm(np.diff(node_pos, axis=0), axis=1)
