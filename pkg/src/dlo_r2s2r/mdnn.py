"""Conditional mixture density network over DLO parameters.

Trajectory front end (trainable random Fourier features + per-step kernel
mean embedding of the 5 keypoints), a 3-layer tanh trunk, and a
mixture-of-Gaussians head with full covariances via Cholesky factors.
Trained by negative log-likelihood with Adam; all density math happens in
normalized parameter space.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn

from .chain_sim import DEFAULT_BOX, ParamBox
from .mog import MixtureOfGaussians
from .rkhs import HORIZON, RffParams

_LOG_2PI = math.log(2.0 * math.pi)
_DIAG_FLOOR = 1e-3

# Fixed spread of initial component means over the unit square.
_MEAN_INIT = [(0.3, 0.3), (0.7, 0.3), (0.3, 0.7), (0.7, 0.7)]


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4    # desk scale; paper scale is 1e-6
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    batch_size: int = 64
    epochs: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")


class TrajectoryBatch:
    """Stacked trajectory tensors: keypoints, actions, and a step mask."""

    def __init__(self, keypoints, actions, mask):
        self.keypoints = keypoints  # (N, T, 5, 2)
        self.actions = actions      # (N, T, 2)
        self.mask = mask            # (N, T)

    def __len__(self):
        return self.keypoints.shape[0]

    def index(self, idx):
        return TrajectoryBatch(self.keypoints[idx], self.actions[idx],
                               self.mask[idx])

    @classmethod
    def from_records(cls, records, dtype=torch.float32) -> "TrajectoryBatch":
        n = len(records)
        kps = np.zeros((n, HORIZON, 5, 2))
        acts = np.zeros((n, HORIZON, 2))
        mask = np.zeros((n, HORIZON))
        for i, rec in enumerate(records):
            for t, step in enumerate(rec.steps):
                obs = np.asarray(step.obs)
                kps[i, t] = obs[2:12].reshape(5, 2)
                acts[i, t] = np.asarray(step.action)
                mask[i, t] = 1.0
        return cls(torch.as_tensor(kps, dtype=dtype),
                   torch.as_tensor(acts, dtype=dtype),
                   torch.as_tensor(mask, dtype=dtype))


class MdnnModel(nn.Module):
    def __init__(self, rff: RffParams, hidden: int = 256, n_components: int = 4,
                 box: ParamBox = DEFAULT_BOX, include_actions: bool = True,
                 dtype=torch.float32, seed: int = 0):
        super().__init__()
        self.box = box
        self.include_actions = include_actions
        self.n_components = n_components
        self.hidden = hidden
        self.m_features = rff.M
        torch.manual_seed(seed)

        self.omega = nn.Parameter(
            torch.as_tensor(rff.omega, dtype=dtype),
            requires_grad=rff.trainable)
        self.phase = nn.Parameter(
            torch.as_tensor(rff.b, dtype=dtype),
            requires_grad=rff.trainable)
        self.rff_sigma = rff.sigma

        in_dim = HORIZON * (rff.M + (2 if include_actions else 0))
        self.trunk = nn.Sequential(
            nn.Linear(in_dim, hidden), nn.Tanh(),
            nn.Linear(hidden, hidden), nn.Tanh(),
            nn.Linear(hidden, hidden), nn.Tanh(),
        )
        k = n_components
        self.head = nn.Linear(hidden, k + 2 * k + 3 * k)
        with torch.no_grad():
            self.head.weight.mul_(0.1)
            bias = torch.zeros(k + 5 * k)
            for i in range(k):
                bias[k + 2 * i:k + 2 * i + 2] = torch.tensor(
                    _MEAN_INIT[i % len(_MEAN_INIT)])
            # softplus(b) ~ 0.3 -> broad initial covariances
            diag_bias = math.log(math.expm1(0.3))
            bias[3 * k:5 * k] = diag_bias
            bias[5 * k:] = 0.0
            self.head.bias.copy_(bias)
        self.to(dtype)

    # -- front end --------------------------------------------------------

    def rff_features(self, points: torch.Tensor) -> torch.Tensor:
        """sqrt(2/M) cos(omega @ x + b). points: (..., 2) -> (..., M)."""
        z = points @ self.omega.T + self.phase
        return math.sqrt(2.0 / self.m_features) * torch.cos(z)

    def embed(self, batch: TrajectoryBatch) -> torch.Tensor:
        """Per-step mean embedding of the keypoint set, masked and flattened."""
        feats = self.rff_features(batch.keypoints).mean(dim=2)  # (N, T, M)
        feats = feats * batch.mask[..., None]
        if self.include_actions:
            acts = batch.actions * batch.mask[..., None]
            feats = torch.cat([feats, acts], dim=-1)
        return feats.reshape(len(batch), -1)

    # -- head --------------------------------------------------------------

    def forward(self, x: torch.Tensor):
        """Embedded input -> (log_weights, means, chol) of the conditional MoG."""
        k = self.n_components
        expected = self.trunk[0].in_features
        if x.shape[-1] != expected:
            raise ValueError(
                f"input dim {x.shape[-1]} != model input dim {expected}")
        h = self.head(self.trunk(x))
        logits = h[..., :k]
        log_w = logits - torch.logsumexp(logits, dim=-1, keepdim=True)
        means = h[..., k:3 * k].reshape(*h.shape[:-1], k, 2)
        diag = nn.functional.softplus(h[..., 3 * k:5 * k]) + _DIAG_FLOOR
        diag = diag.reshape(*h.shape[:-1], k, 2)
        off = h[..., 5 * k:6 * k]
        chol = torch.zeros(*h.shape[:-1], k, 2, 2, dtype=x.dtype,
                           device=x.device)
        chol[..., 0, 0] = diag[..., 0]
        chol[..., 1, 1] = diag[..., 1]
        chol[..., 1, 0] = off
        return log_w, means, chol

    def forward_batch(self, batch: TrajectoryBatch):
        return self.forward(self.embed(batch))

    def log_pdf(self, log_w, means, chol, theta_norm: torch.Tensor):
        """MoG log density at theta (normalized space) via log-sum-exp."""
        diff = theta_norm[..., None, :] - means                # (..., K, 2)
        z0 = diff[..., 0] / chol[..., 0, 0]
        z1 = (diff[..., 1] - chol[..., 1, 0] * z0) / chol[..., 1, 1]
        log_det = torch.log(chol[..., 0, 0]) + torch.log(chol[..., 1, 1])
        comp = -0.5 * (z0 * z0 + z1 * z1) - log_det - _LOG_2PI
        return torch.logsumexp(log_w + comp, dim=-1)

    def nll_loss(self, batch: TrajectoryBatch,
                 theta_norm: torch.Tensor) -> torch.Tensor:
        """Mean negative log-likelihood of the batch."""
        log_w, means, chol = self.forward_batch(batch)
        return -self.log_pdf(log_w, means, chol, theta_norm).mean()

    # -- inference-side conversion ----------------------------------------

    def posterior(self, record) -> MixtureOfGaussians:
        """Conditional MoG q(theta | trajectory) as a numpy mixture."""
        batch = TrajectoryBatch.from_records([record],
                                             dtype=self.head.weight.dtype)
        with torch.no_grad():
            log_w, means, chol = self.forward_batch(batch)
        w = torch.exp(log_w[0]).double().numpy()
        w = w / w.sum()
        return MixtureOfGaussians(w, means[0].double().numpy(),
                                  chol[0].double().numpy(), self.box)

    def rff_params(self) -> RffParams:
        return RffParams(self.omega.detach().double().numpy().copy(),
                         self.phase.detach().double().numpy().copy(),
                         self.rff_sigma, bool(self.omega.requires_grad))


def fit(model: MdnnModel, batch: TrajectoryBatch, theta_norm: torch.Tensor,
        cfg: TrainConfig):
    """Adam/NLL training. Returns the per-epoch mean training loss."""
    params = [p for p in model.parameters() if p.requires_grad]
    opt = torch.optim.Adam(params, lr=cfg.learning_rate, betas=cfg.betas,
                           eps=cfg.eps)
    n = len(batch)
    gen = torch.Generator().manual_seed(cfg.seed)
    curve = []
    for epoch in range(cfg.epochs):
        perm = torch.randperm(n, generator=gen)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            loss = model.nll_loss(batch.index(idx),
                                  theta_norm[idx])
            if not torch.isfinite(loss):
                grad_norms = {name: float(p.grad.norm())
                              for name, p in model.named_parameters()
                              if p.grad is not None}
                raise RuntimeError(
                    f"non-finite NLL at epoch {epoch}, batch offset {start}; "
                    f"last gradient norms: {grad_norms}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += float(loss.detach()) * len(idx)
        curve.append(total / n)
    return curve


def grad_check(model: MdnnModel, batch: TrajectoryBatch,
               theta_norm: torch.Tensor, h: float = 1e-5) -> float:
    """Max relative error of reverse-mode NLL gradients vs central differences.

    Runs on a float64 copy of the model. Frozen parameter groups are
    verified to have no gradient.
    """
    model64 = copy.deepcopy(model).double()
    batch64 = TrajectoryBatch(batch.keypoints.double(),
                              batch.actions.double(), batch.mask.double())
    theta64 = theta_norm.double()

    loss = model64.nll_loss(batch64, theta64)
    grads = torch.autograd.grad(
        loss, [p for p in model64.parameters() if p.requires_grad])
    named = [(n, p) for n, p in model64.named_parameters() if p.requires_grad]

    max_rel = 0.0
    with torch.no_grad():
        for (name, p), g in zip(named, grads):
            flat = p.view(-1)
            gflat = g.view(-1)
            for j in range(flat.numel()):
                orig = float(flat[j])
                flat[j] = orig + h
                lp = float(model64.nll_loss(batch64, theta64))
                flat[j] = orig - h
                lm = float(model64.nll_loss(batch64, theta64))
                flat[j] = orig
                fd = (lp - lm) / (2 * h)
                denom = max(abs(fd), abs(float(gflat[j])), 1e-6)
                max_rel = max(max_rel, abs(fd - float(gflat[j])) / denom)
    return max_rel


def save_checkpoint(path, model: MdnnModel):
    torch.save({
        "state_dict": model.state_dict(),
        "hidden": model.hidden,
        "n_components": model.n_components,
        "include_actions": model.include_actions,
        "rff_sigma": model.rff_sigma,
        "rff_trainable": bool(model.omega.requires_grad),
        "box": model.box.to_json_dict(),
        "dtype": str(model.head.weight.dtype),
    }, path)


def load_checkpoint(path) -> MdnnModel:
    d = torch.load(path, weights_only=False)
    dtype = torch.float64 if "64" in d["dtype"] else torch.float32
    m = d["state_dict"]["omega"].shape[0]
    rff = RffParams(np.zeros((m, 2)), np.zeros(m), d["rff_sigma"],
                    d["rff_trainable"])
    model = MdnnModel(rff, d["hidden"], d["n_components"],
                      ParamBox.from_json_dict(d["box"]),
                      d["include_actions"], dtype=dtype)
    model.load_state_dict(d["state_dict"])
    return model
