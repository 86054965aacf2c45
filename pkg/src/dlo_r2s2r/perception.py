"""Synthetic keypoint observations in normalized image coordinates.

Stands in for a learned keypoint detector: keypoints are sampled at fixed
arclength fractions of the chain, projected through an affine camera with a
per-episode offset, then optionally corrupted with Gaussian pixel noise and
a random permutation of the DLO keypoints (the pathologies of real
detectors that the kernel-mean-embedding front end must absorb).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .chain_sim import ChainState

CLAMP = 1.5  # normalized coordinates are clamped to [-CLAMP, CLAMP]

# Default world window mapped onto [-1, 1]^2 (x and z in meters).
DEFAULT_WINDOW = ((0.2, -0.05), (0.7, 0.45))


@dataclass(frozen=True)
class CameraModel:
    """Affine map of a world window onto [-1, 1]^2 with a world offset."""

    world_window: tuple = DEFAULT_WINDOW
    offset: tuple = (0.0, 0.0)

    def __post_init__(self):
        (x0, z0), (x1, z1) = self.world_window
        if not (x1 > x0 and z1 > z0):
            raise ValueError("degenerate camera window")

    @property
    def _scale(self) -> np.ndarray:
        (x0, z0), (x1, z1) = self.world_window
        return np.array([2.0 / (x1 - x0), 2.0 / (z1 - z0)])

    @property
    def _center(self) -> np.ndarray:
        (x0, z0), (x1, z1) = self.world_window
        return np.array([0.5 * (x0 + x1), 0.5 * (z0 + z1)])


@dataclass
class KeypointFrame:
    """Normalized-image keypoints: 4 DLO points plus the target point."""

    dlo_keypoints: np.ndarray   # (4, 2) in [-CLAMP, CLAMP]
    target_keypoint: np.ndarray  # (2,)

    def copy(self) -> "KeypointFrame":
        return KeypointFrame(self.dlo_keypoints.copy(),
                             self.target_keypoint.copy())

    def all_points(self) -> np.ndarray:
        return np.vstack([self.dlo_keypoints, self.target_keypoint[None]])


def extract_keypoints(state: ChainState, n: int = 4) -> np.ndarray:
    """World-space points at arclength fractions (2i+1)/(2n) of the chain."""
    pos = state.node_pos
    seg = np.linalg.norm(np.diff(pos, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    fracs = (2.0 * np.arange(n) + 1.0) / (2.0 * n)
    targets = fracs * total
    idx = np.clip(np.searchsorted(cum, targets, side="right") - 1,
                  0, len(seg) - 1)
    t = (targets - cum[idx]) / np.maximum(seg[idx], 1e-12)
    return pos[idx] + t[:, None] * (pos[idx + 1] - pos[idx])


def project(world_points: np.ndarray, cam: CameraModel) -> np.ndarray:
    """Affine projection of (x, z) world points into clamped [-1, 1] coords."""
    pts = np.atleast_2d(np.asarray(world_points, dtype=np.float64))
    uv = (pts + np.asarray(cam.offset) - cam._center) * cam._scale
    return np.clip(uv, -CLAMP, CLAMP)


def unproject(uv: np.ndarray, cam: CameraModel) -> np.ndarray:
    """Inverse of project on the open window (ignores clamping)."""
    uv = np.atleast_2d(np.asarray(uv, dtype=np.float64))
    return uv / cam._scale + cam._center - np.asarray(cam.offset)


def corrupt(frame: KeypointFrame, noise_std: float, permute: bool,
            rng: np.random.Generator) -> KeypointFrame:
    """Detector-style corruption: i.i.d. pixel noise and DLO-keypoint permutation.

    The target keypoint is never permuted. Output clamped to [-CLAMP, CLAMP].
    """
    if noise_std < 0:
        raise ValueError("noise_std must be >= 0")
    out = frame.copy()
    if permute:
        out.dlo_keypoints = out.dlo_keypoints[
            rng.permutation(len(out.dlo_keypoints))
        ]
    if noise_std > 0:
        out.dlo_keypoints = out.dlo_keypoints + rng.normal(
            0.0, noise_std, out.dlo_keypoints.shape
        )
    out.dlo_keypoints = np.clip(out.dlo_keypoints, -CLAMP, CLAMP)
    out.target_keypoint = np.clip(out.target_keypoint, -CLAMP, CLAMP)
    return out
