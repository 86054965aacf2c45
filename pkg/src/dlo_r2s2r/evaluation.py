"""Behavioral evaluation: action paths, DTW similarity, evaluation grids.

Policies are compared by the accumulated commanded end-effector deltas of
their episodes: mean paths with per-step deviation bands, per-step reward
profiles, and the pairwise dynamic-time-warping distance matrix of mean
paths across every (policy, environment) cell.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

from .task_env import HORIZON, EpisodeRecord


@dataclass
class ActionPath:
    """Prefix sums of executed actions, starting at the origin."""

    points: np.ndarray  # (T+1, 2)

    def __len__(self):
        return len(self.points)


def accumulate_actions(rec: EpisodeRecord) -> ActionPath:
    if len(rec.steps) == 0:
        raise ValueError("empty episode record")
    acts = np.stack([np.asarray(s.action, dtype=np.float64)
                     for s in rec.steps])
    pts = np.vstack([np.zeros(2), np.cumsum(acts, axis=0)])
    return ActionPath(pts)


def dtw(a: ActionPath, b: ActionPath) -> float:
    """Classic dynamic time warping with Euclidean local cost.

    Symmetric match/insert/delete step pattern, no window constraint,
    unnormalized accumulated cost.
    """
    pa, pb = a.points, b.points
    n, m = len(pa), len(pb)
    if n == 0 or m == 0:
        raise ValueError("dtw requires nonempty paths")
    cost = np.sqrt(((pa[:, None, :] - pb[None, :, :]) ** 2).sum(-1))
    acc = np.full((n, m), np.inf)
    acc[0, 0] = cost[0, 0]
    for i in range(1, n):
        acc[i, 0] = acc[i - 1, 0] + cost[i, 0]
    for j in range(1, m):
        acc[0, j] = acc[0, j - 1] + cost[0, j]
    for i in range(1, n):
        for j in range(1, m):
            acc[i, j] = cost[i, j] + min(acc[i - 1, j - 1],
                                         acc[i - 1, j], acc[i, j - 1])
    return float(acc[-1, -1])


def pad_path(path: ActionPath, length: int = HORIZON + 1) -> np.ndarray:
    """Extend a path to a fixed length by holding its last point."""
    pts = path.points
    if len(pts) >= length:
        return pts[:length]
    tail = np.repeat(pts[-1][None], length - len(pts), axis=0)
    return np.vstack([pts, tail])


def mean_path(records) -> tuple[np.ndarray, np.ndarray]:
    """Pointwise mean and std of padded action paths over repetitions."""
    padded = np.stack([pad_path(accumulate_actions(r)) for r in records])
    return padded.mean(axis=0), padded.std(axis=0)


def reward_profile(records) -> np.ndarray:
    """Per-step mean reward, padded with the terminal reward held at 0."""
    prof = np.zeros((len(records), HORIZON))
    for i, r in enumerate(records):
        for t, s in enumerate(r.steps):
            prof[i, t] = s.reward
    return prof.mean(axis=0)


def build_eval_grid(policies, env_factories, reps: int = 4,
                    out_dir: str | None = None, meta: dict | None = None):
    """Evaluate every (policy, environment) cell and bundle the results.

    policies: list of (name, policy); env_factories: list of
    (name, factory(repetition) -> Env). Returns a dict with per-cell mean
    paths, deviation bands, reward profiles, the completed-record lists,
    and the pairwise DTW matrix of cell mean paths. CSV artifacts are
    written under out_dir when given.
    """
    cells = {}
    labels = []
    for pname, policy in policies:
        for ename, factory in env_factories:
            label = f"{pname}@{ename}"
            labels.append(label)
            records, failed = [], 0
            for rep in range(reps):
                try:
                    env = factory(rep)
                    records.append(env.rollout(policy))
                except RuntimeError:
                    failed += 1
            if records:
                mean, std = mean_path(records)
                cell = {"mean_path": mean, "std_path": std,
                        "rewards": reward_profile(records),
                        "records": records, "failed": failed,
                        "complete": failed == 0}
            else:
                cell = {"mean_path": None, "std_path": None,
                        "rewards": None, "records": [], "failed": failed,
                        "complete": False}
            cells[label] = cell

    valid = [l for l in labels if cells[l]["mean_path"] is not None]
    k = len(valid)
    dtw_matrix = np.zeros((k, k))
    for i in range(k):
        for j in range(i + 1, k):
            d = dtw(ActionPath(cells[valid[i]]["mean_path"]),
                    ActionPath(cells[valid[j]]["mean_path"]))
            dtw_matrix[i, j] = dtw_matrix[j, i] = d

    bundle = {"cells": cells, "labels": labels, "dtw_labels": valid,
              "dtw_matrix": dtw_matrix}
    if out_dir is not None:
        write_eval_grid(bundle, out_dir, meta or {})
    return bundle


def _header_lines(meta: dict):
    return [f"# {key}={value}" for key, value in sorted(meta.items())]


def write_eval_grid(bundle, out_dir: str, meta: dict):
    os.makedirs(out_dir, exist_ok=True)
    for label, cell in bundle["cells"].items():
        if cell["mean_path"] is None:
            continue
        safe = label.replace("@", "__")
        with open(os.path.join(out_dir, f"path_{safe}.csv"), "w",
                  newline="") as f:
            for line in _header_lines(meta):
                f.write(line + "\n")
            w = csv.writer(f)
            w.writerow(["step", "mean_dx", "mean_dz", "std_dx", "std_dz"])
            for t, (mp, sp) in enumerate(zip(cell["mean_path"],
                                             cell["std_path"])):
                w.writerow([t, repr(mp[0]), repr(mp[1]),
                            repr(sp[0]), repr(sp[1])])
        with open(os.path.join(out_dir, f"reward_{safe}.csv"), "w",
                  newline="") as f:
            for line in _header_lines(meta):
                f.write(line + "\n")
            w = csv.writer(f)
            w.writerow(["step", "mean_reward"])
            for t, r in enumerate(cell["rewards"]):
                w.writerow([t, repr(float(r))])
    with open(os.path.join(out_dir, "dtw_matrix.csv"), "w", newline="") as f:
        for line in _header_lines(meta):
            f.write(line + "\n")
        w = csv.writer(f)
        w.writerow([""] + bundle["dtw_labels"])
        for i, label in enumerate(bundle["dtw_labels"]):
            w.writerow([label] + [repr(float(v))
                                  for v in bundle["dtw_matrix"][i]])
