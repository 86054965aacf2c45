"""Random Fourier features and kernel mean embeddings of keypoint sets.

Cos-only RFF approximation of the RBF kernel: phi(x) = sqrt(2/M) *
cos(omega @ x + b) with omega ~ N(0, sigma^-2 I) and b ~ U[0, 2pi). The
mean embedding of a point set is the arithmetic mean of feature maps, which
makes the representation permutation invariant. A whole episode is embedded
as the time-ordered concatenation of per-step keypoint embeddings (plus the
step actions), zero-padded to the fixed horizon.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

HORIZON = 16


@dataclass
class RffParams:
    omega: np.ndarray   # (M, d) frequencies
    b: np.ndarray       # (M,) phases
    sigma: float        # length scale used at initialization
    trainable: bool = True

    @property
    def M(self) -> int:
        return self.omega.shape[0]

    @classmethod
    def draw(cls, m: int, sigma: float, rng: np.random.Generator,
             d: int = 2, trainable: bool = True) -> "RffParams":
        if sigma <= 0:
            raise ValueError("sigma must be > 0")
        omega = rng.normal(0.0, 1.0 / sigma, size=(m, d))
        b = rng.uniform(0.0, 2.0 * np.pi, size=m)
        return cls(omega, b, sigma, trainable)

    def to_json_dict(self) -> dict:
        return {
            "omega": self.omega.tolist(),
            "b": self.b.tolist(),
            "sigma": self.sigma,
            "trainable": self.trainable,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "RffParams":
        return cls(np.array(d["omega"], dtype=np.float64),
                   np.array(d["b"], dtype=np.float64),
                   float(d["sigma"]), bool(d["trainable"]))


def feature_map(x: np.ndarray, rff: RffParams) -> np.ndarray:
    """sqrt(2/M) * cos(omega @ x + b). x: (..., d) -> (..., M)."""
    x = np.asarray(x, dtype=np.float64)
    z = x @ rff.omega.T + rff.b
    return math.sqrt(2.0 / rff.M) * np.cos(z)


def mean_embed(points: np.ndarray, rff: RffParams) -> np.ndarray:
    """Empirical kernel mean embedding: mean of feature maps over the set.

    Uses exact (compensated) summation so the result is bitwise independent
    of the ordering of the points.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if points.shape[0] == 0:
        raise ValueError("mean_embed requires a nonempty point set")
    feats = feature_map(points, rff)  # (N, M)
    n = feats.shape[0]
    return np.array([math.fsum(feats[:, j]) for j in range(rff.M)]) / n


def median_heuristic(points: np.ndarray, rng: np.random.Generator | None = None,
                     max_points: int = 500) -> float:
    """Median pairwise distance of a calibration batch (RBF length scale)."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if len(pts) > max_points:
        rng = rng or np.random.default_rng(0)
        pts = pts[rng.choice(len(pts), max_points, replace=False)]
    d2 = np.sum((pts[:, None] - pts[None]) ** 2, axis=-1)
    iu = np.triu_indices(len(pts), k=1)
    med = float(np.sqrt(np.median(d2[iu])))
    return max(med, 1e-3)


def embed_trajectory(record, rff: RffParams,
                     include_actions: bool = True) -> np.ndarray:
    """Fixed-length feature vector of one episode.

    Per step: mean embedding of the 5 observed keypoints, then (optionally)
    the 2D action. Episodes shorter than the horizon contribute zero blocks.
    Output dimension: HORIZON * (M + 2) or HORIZON * M.
    """
    steps = record.steps
    if len(steps) > HORIZON:
        raise ValueError(f"episode longer than horizon {HORIZON}")
    width = rff.M + (2 if include_actions else 0)
    out = np.zeros(HORIZON * width)
    for t, step in enumerate(steps):
        obs = np.asarray(step.obs, dtype=np.float64)
        kps = obs[2:12].reshape(5, 2)
        block = mean_embed(kps, rff)
        if include_actions:
            block = np.concatenate([block, np.asarray(step.action)])
        out[t * width:(t + 1) * width] = block
    return out


def rff_gradients(x: np.ndarray, rff: RffParams,
                  grad_features: np.ndarray):
    """Analytic gradients of the feature map for one input point.

    Given dL/dphi (M,), returns (dL/domega (M, d), dL/db (M,), dL/dx (d,)).
    """
    x = np.asarray(x, dtype=np.float64)
    grad_features = np.asarray(grad_features, dtype=np.float64)
    z = rff.omega @ x + rff.b
    s = -math.sqrt(2.0 / rff.M) * np.sin(z) * grad_features  # (M,)
    d_omega = s[:, None] * x[None, :]
    d_b = s
    d_x = s @ rff.omega
    return d_omega, d_b, d_x


def rbf_kernel(x: np.ndarray, y: np.ndarray, sigma: float) -> float:
    """Exact RBF kernel value, the target of the RFF approximation."""
    d = np.asarray(x, dtype=np.float64) - np.asarray(y, dtype=np.float64)
    return float(np.exp(-np.dot(d, d) / (2.0 * sigma ** 2)))
