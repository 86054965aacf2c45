"""Mixture-of-Gaussians density over DLO parameters.

All density math operates in normalized parameter space (the parameter box
mapped to the unit square); physical units appear only when samples leave
through the sampling interface. Components are parameterized by Cholesky
factors so covariances stay positive definite by construction.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .chain_sim import DEFAULT_BOX, ParamBox, SystemParams

log = logging.getLogger(__name__)

_LOG_2PI = math.log(2.0 * math.pi)
_MAX_REJECTS = 100


@dataclass(frozen=True)
class UniformBoxDensity:
    """The uniform density over the box: pdf == 1 in normalized space."""

    box: ParamBox = DEFAULT_BOX

    def log_pdf_normalized(self, theta_norm: np.ndarray) -> np.ndarray:
        theta_norm = np.atleast_2d(theta_norm)
        inside = np.all((theta_norm >= 0.0) & (theta_norm <= 1.0), axis=-1)
        return np.where(inside, 0.0, -np.inf)

    def sample_normalized(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(0.0, 1.0, size=(n, 2))

    def sample(self, n: int, rng: np.random.Generator):
        return [SystemParams(*self.box.denormalize(u))
                for u in self.sample_normalized(n, rng)]

    def low_variance_sample(self, n: int, rng: np.random.Generator):
        # No component structure; plain uniform draws.
        return self.sample(n, rng)


@dataclass
class MixtureOfGaussians:
    """K-component full-covariance mixture in normalized parameter space."""

    weights: np.ndarray        # (K,) simplex
    means: np.ndarray          # (K, 2)
    chol_factors: np.ndarray   # (K, 2, 2) lower triangular, positive diagonal
    box: ParamBox = field(default_factory=lambda: DEFAULT_BOX)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.means = np.asarray(self.means, dtype=np.float64)
        self.chol_factors = np.asarray(self.chol_factors, dtype=np.float64)
        self.validate()

    def validate(self):
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-9:
            raise ValueError("mixture weights must form a simplex")
        if np.any(np.diagonal(self.chol_factors, axis1=1, axis2=2) <= 0):
            raise ValueError("Cholesky diagonals must be positive")
        if np.any(np.triu(self.chol_factors, k=1) != 0):
            raise ValueError("Cholesky factors must be lower triangular")

    @property
    def K(self) -> int:
        return len(self.weights)

    def covariances(self) -> np.ndarray:
        return self.chol_factors @ np.transpose(self.chol_factors, (0, 2, 1))

    # -- density ----------------------------------------------------------

    def component_log_pdfs(self, theta_norm: np.ndarray) -> np.ndarray:
        """Per-component log N(theta; mu_k, Sigma_k). theta: (..., 2) -> (..., K)."""
        theta_norm = np.asarray(theta_norm, dtype=np.float64)
        diff = theta_norm[..., None, :] - self.means          # (..., K, 2)
        out = np.empty(diff.shape[:-1])
        for k in range(self.K):
            L = self.chol_factors[k]
            z = np.linalg.solve(L, diff[..., k, :][..., None])[..., 0]
            logdet = np.log(L[0, 0]) + np.log(L[1, 1])
            out[..., k] = -0.5 * np.sum(z * z, axis=-1) - logdet - _LOG_2PI
        return out

    def log_pdf_normalized(self, theta_norm: np.ndarray) -> np.ndarray:
        """log sum_k w_k N(theta; mu_k, Sigma_k) via log-sum-exp."""
        comp = self.component_log_pdfs(theta_norm)
        logw = np.log(np.maximum(self.weights, 1e-300))
        a = comp + logw
        amax = np.max(a, axis=-1, keepdims=True)
        return (amax[..., 0]
                + np.log(np.sum(np.exp(a - amax), axis=-1)))

    def log_pdf(self, theta: SystemParams) -> float:
        return float(self.log_pdf_normalized(
            self.box.normalize(theta.as_array())))

    # -- sampling ---------------------------------------------------------

    def _draw_component(self, k: int, rng: np.random.Generator) -> np.ndarray:
        """One normalized-space draw from component k, box-rejected then clamped."""
        for _ in range(_MAX_REJECTS):
            z = rng.standard_normal(2)
            u = self.means[k] + self.chol_factors[k] @ z
            if np.all((u >= 0.0) & (u <= 1.0)):
                return u
        return np.clip(u, 0.0, 1.0)

    def sample(self, rng: np.random.Generator) -> SystemParams:
        """Ancestral sampling; returns physical units inside the box."""
        k = int(rng.choice(self.K, p=self.weights / self.weights.sum()))
        u = self._draw_component(k, rng)
        return SystemParams(*self.box.denormalize(u))

    def low_variance_sample(self, n: int, rng: np.random.Generator):
        """Systematic resampling over component weights, then Gaussian draws.

        A single uniform offset strides the weight CDF, so a component with
        weight w is chosen floor(n*w) or ceil(n*w) times.
        """
        if n < 1:
            raise ValueError("n must be >= 1")
        cdf = np.cumsum(self.weights)
        cdf[-1] = 1.0
        u0 = rng.uniform(0.0, 1.0 / n)
        picks = np.searchsorted(cdf, u0 + np.arange(n) / n, side="left")
        return [SystemParams(*self.box.denormalize(self._draw_component(int(k), rng)))
                for k in picks]

    # -- heatmap ----------------------------------------------------------

    def grid_density(self, resolution=(100, 100)):
        """Density heatmap over the box at cell centers.

        Returns (heatmap (res_l, res_e), length_axis, youngs_axis, integral)
        where integral is the normalized-space quadrature (cell sum * area).
        """
        rl, re = resolution
        if rl < 2 or re < 2:
            raise ValueError("resolution must be >= 2 per axis")
        cl = (np.arange(rl) + 0.5) / rl
        ce = (np.arange(re) + 0.5) / re
        grid = np.stack(np.meshgrid(cl, ce, indexing="ij"), axis=-1)  # (rl,re,2)
        pdf = np.exp(self.log_pdf_normalized(grid))
        integral = float(pdf.sum() / (rl * re))
        lo, hi = self.box.lo_array, self.box.hi_array
        length_axis = lo[0] + cl * (hi[0] - lo[0])
        youngs_axis = lo[1] + ce * (hi[1] - lo[1])
        return pdf, length_axis, youngs_axis, integral

    # -- summaries --------------------------------------------------------

    def mean_normalized(self) -> np.ndarray:
        return self.weights @ self.means

    def mean_physical(self) -> np.ndarray:
        return self.box.denormalize(self.mean_normalized())

    def average_covariance(self) -> np.ndarray:
        """Weight-averaged total covariance (within + between components)."""
        mu = self.mean_normalized()
        covs = self.covariances()
        total = np.zeros((2, 2))
        for k in range(self.K):
            d = (self.means[k] - mu)[:, None]
            total += self.weights[k] * (covs[k] + d @ d.T)
        return total

    def marginal_std_normalized(self) -> np.ndarray:
        return np.sqrt(np.diag(self.average_covariance()))

    # -- serialization ----------------------------------------------------

    def to_json_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "chol_factors": self.chol_factors.tolist(),
            "box": self.box.to_json_dict(),
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "MixtureOfGaussians":
        return cls(np.array(d["weights"]), np.array(d["means"]),
                   np.array(d["chol_factors"]),
                   ParamBox.from_json_dict(d["box"]))


def prior_correct(q: MixtureOfGaussians, proposal, desired,
                  mode: str = "eq1",
                  max_log_ratio: float = 3.0) -> MixtureOfGaussians:
    """Proposal-prior correction by reweighting components at their means.

    mode "eq1":  w_k' ~ w_k * desired(mu_k) / proposal(mu_k)
    mode "alg1": w_k' ~ w_k * proposal(mu_k) / desired(mu_k)
    Dividing a mixture by a density has no closed form; the ratio is
    evaluated at each component mean and its log clipped to
    +-max_log_ratio, which keeps a stray component in a low-proposal
    region from swallowing the mixture. Uniform/uniform is the exact
    identity.
    """
    if mode not in ("eq1", "alg1"):
        raise ValueError(f"unknown correction mode {mode!r}")
    if isinstance(proposal, UniformBoxDensity) and isinstance(
            desired, UniformBoxDensity):
        # p_tilde == p: the correction is the exact identity.
        return MixtureOfGaussians(q.weights.copy(), q.means.copy(),
                                  q.chol_factors.copy(), q.box)
    log_p = np.asarray(proposal.log_pdf_normalized(q.means), dtype=np.float64)
    log_d = np.asarray(desired.log_pdf_normalized(q.means), dtype=np.float64)
    log_ratio = (log_d - log_p) if mode == "eq1" else (log_p - log_d)
    ratio = np.exp(np.clip(log_ratio, -max_log_ratio, max_log_ratio))
    ratio[np.isneginf(log_ratio)] = 0.0
    bad = ~np.isfinite(ratio)
    if np.any(bad):
        log.warning("prior_correct: non-finite ratio at component means %s; "
                    "zeroing those components", np.where(bad)[0].tolist())
        ratio = np.where(bad, 0.0, ratio)
    new_w = q.weights * ratio
    total = new_w.sum()
    if total <= 0 or not np.isfinite(total):
        log.warning("prior_correct: degenerate reweighting; keeping weights")
        new_w = q.weights.copy()
        total = new_w.sum()
    new_w = new_w / total
    return MixtureOfGaussians(new_w, q.means.copy(), q.chol_factors.copy(),
                              q.box)


def single_gaussian(mean_norm, std_norm, box: ParamBox = DEFAULT_BOX
                    ) -> MixtureOfGaussians:
    """Convenience constructor: one isotropic component."""
    std = np.broadcast_to(np.asarray(std_norm, dtype=np.float64), (2,))
    chol = np.diag(std)[None]
    return MixtureOfGaussians(np.array([1.0]),
                              np.asarray(mean_norm, dtype=np.float64)[None],
                              chol, box)
