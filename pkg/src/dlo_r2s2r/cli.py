"""Command-line front end: stage subcommands and the full pipeline.

Every subcommand reads one JSON config, seeds all randomness from a single
integer, and writes artifacts only to the run directory. Each artifact
embeds (config hash, seed, stage) so a run can be audited and resumed;
re-running a finished stage with the same config is a no-op.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import os
import sys

import numpy as np
import torch

from . import lfi, ppo
from .chain_sim import DEFAULT_BOX, SimConfig, SystemParams
from .evaluation import build_eval_grid
from .lfi import LfiConfig, SweepPolicy, run_inference
from .mog import MixtureOfGaussians, UniformBoxDensity
from .ppo import PpoConfig, PolicyModel
from .task_env import (REAL_DLO_PRESETS, Env, TaskConfig, make_real_emulator,
                       make_vector_env, save_records, load_records)

log = logging.getLogger("dlo_r2s2r")

SCALE_PRESETS = {
    # acceptance-test scale: minutes per stage on one CPU
    "desk": {
        "lfi": {},
        "ppo": {"total_steps": 30000},
    },
    # full-size run: hours per stage
    "paper": {
        "lfi": {"n_iterations": 15, "trajectories_per_iter": 100,
                "trajectories_first_iter": 100, "n_features": 500,
                "hidden": 1024, "learning_rate": 1e-6,
                "epochs_first": 300, "epochs_warm": 300},
        "ppo": {"total_steps": 120000},
    },
    # seconds per stage; used for determinism / smoke checks
    "smoke": {
        "lfi": {"n_iterations": 2, "trajectories_per_iter": 12,
                "trajectories_first_iter": 12, "n_features": 32,
                "hidden": 64, "epochs_first": 30, "epochs_warm": 15},
        "ppo": {"total_steps": 1536},
    },
}


@dataclasses.dataclass
class RunConfig:
    seed: int = 0
    out_dir: str = "runs/latest"
    scale: str = "desk"
    dlo_index: int = 0
    collection_policy: str = "sweep"   # "sweep" | "trained"
    eval_reps: int = 4
    sim: SimConfig = dataclasses.field(default_factory=SimConfig)
    task: TaskConfig = dataclasses.field(default_factory=TaskConfig)
    lfi: LfiConfig = dataclasses.field(default_factory=LfiConfig)
    ppo: PpoConfig = dataclasses.field(default_factory=PpoConfig)

    def __post_init__(self):
        if self.scale not in SCALE_PRESETS:
            raise ValueError(f"unknown scale preset {self.scale!r}")
        if not 0 <= self.dlo_index < len(REAL_DLO_PRESETS):
            raise ValueError(f"dlo_index must be in [0, "
                             f"{len(REAL_DLO_PRESETS) - 1}]")
        if self.collection_policy not in ("sweep", "trained"):
            raise ValueError("collection_policy must be 'sweep' or 'trained'")

    @classmethod
    def load(cls, path: str | None, seed=None, out_dir=None, scale=None,
             dlo_index=None) -> "RunConfig":
        """Config file -> scale preset -> explicit CLI overrides."""
        raw = {}
        if path is not None:
            with open(path) as f:
                raw = json.load(f)
        if scale is not None:
            raw["scale"] = scale
        preset = SCALE_PRESETS[raw.get("scale", "desk")]
        for section, overrides in preset.items():
            merged = dict(overrides)
            merged.update(raw.get(section, {}))
            raw[section] = merged
        if seed is not None:
            raw["seed"] = seed
        if out_dir is not None:
            raw["out_dir"] = out_dir
        if dlo_index is not None:
            raw["dlo_index"] = dlo_index
        kwargs = dict(raw)
        for section, klass in (("sim", SimConfig), ("task", TaskConfig),
                               ("lfi", LfiConfig), ("ppo", PpoConfig)):
            if section in kwargs:
                kwargs[section] = klass(**kwargs[section])
        cfg = cls(**kwargs)
        # every stage of one run shares the master seed
        cfg.lfi = dataclasses.replace(cfg.lfi, seed=cfg.seed)
        cfg.ppo = dataclasses.replace(cfg.ppo, seed=cfg.seed)
        return cfg

    def to_json_dict(self) -> dict:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        d = self.to_json_dict()
        d.pop("out_dir")  # artifact location is not a computation input
        blob = json.dumps(d, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def meta(self, stage: str) -> dict:
        return {"config_hash": self.config_hash(), "seed": self.seed,
                "stage": stage}


# -- artifact helpers -------------------------------------------------------

def _write_json(path, payload: dict, meta: dict):
    with open(path, "w") as f:
        json.dump({"meta": meta, **payload}, f, sort_keys=True,
                  separators=(",", ":"))
        f.write("\n")


def _read_json(path) -> dict:
    with open(path) as f:
        return json.load(f)


def _write_csv(path, meta: dict, columns, rows):
    with open(path, "w", newline="") as f:
        for key in sorted(meta):
            f.write(f"# {key}={meta[key]}\n")
        w = csv.writer(f)
        w.writerow(columns)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def _stage_done(path, cfg: RunConfig) -> bool:
    """A JSON artifact from the same config marks its stage as complete."""
    if not os.path.exists(path):
        return False
    try:
        meta = _read_json(path).get("meta", {})
    except (json.JSONDecodeError, OSError):
        return False
    return meta.get("config_hash") == cfg.config_hash()


def _posterior_payload(result) -> dict:
    return {
        "posterior": result.final_posterior.to_json_dict(),
        "per_iteration": [p.to_json_dict() if p is not None else None
                          for p in result.posterior_per_iteration],
        "dataset_sizes": result.dataset_sizes,
    }


def _load_posterior(path) -> MixtureOfGaussians:
    return MixtureOfGaussians.from_json_dict(_read_json(path)["posterior"])


def _write_curve(path, meta, curve):
    _write_csv(path, meta, ["global_step", "mean_episode_reward",
                            "episodes"],
               [(int(s), float(r), int(n)) for s, r, n in curve])


def _collection_policy(cfg: RunConfig, run_dir: str):
    if cfg.collection_policy == "sweep":
        return SweepPolicy()
    ckpt = os.path.join(run_dir, "policy_b0.pt")
    if not os.path.exists(ckpt):
        raise RuntimeError("collection_policy='trained' needs policy_b0.pt "
                           "in the run directory")
    return ppo.load_checkpoint(ckpt)


def _train_under(samples, cfg: RunConfig, seed_offset: int):
    env = make_vector_env(samples, cfg.sim, cfg.task,
                          seed=cfg.seed + seed_offset)
    return ppo.train(env, cfg.ppo, seed=cfg.seed + seed_offset)


def _dr_samples(cfg: RunConfig, source, seed_offset: int):
    rng = np.random.default_rng(cfg.seed + seed_offset)
    return source.low_variance_sample(12, rng)


# -- stage implementations --------------------------------------------------

def stage_real_rollout(cfg: RunConfig, run_dir: str) -> str:
    path = os.path.join(run_dir, "real_episode.jsonl")
    marker = os.path.join(run_dir, "real_episode.json")
    if _stage_done(marker, cfg):
        return path
    policy = _collection_policy(cfg, run_dir)
    env = make_real_emulator(cfg.dlo_index, cfg.sim, cfg.task,
                             seed=cfg.seed + 11)
    rec = env.rollout(policy)
    save_records(path, [rec])
    _write_json(marker, {"steps": len(rec.steps),
                         "total_reward": rec.total_reward()},
                cfg.meta("real-rollout"))
    return path


def stage_infer(cfg: RunConfig, run_dir: str) -> str:
    path = os.path.join(run_dir, "posterior.json")
    if _stage_done(path, cfg):
        return path
    real = load_records(stage_real_rollout(cfg, run_dir))[0]
    policy = _collection_policy(cfg, run_dir)
    result = run_inference(real, policy, cfg.lfi, cfg.sim, cfg.task)
    meta = cfg.meta("infer")
    _write_json(path, _posterior_payload(result), meta)
    rows = [(it, ep, float(v)) for it, curve in enumerate(result.loss_curves)
            for ep, v in enumerate(curve)]
    _write_csv(os.path.join(run_dir, "loss_curve.csv"), meta,
               ["iteration", "epoch", "nll"], rows)
    return path


def stage_policy(cfg: RunConfig, run_dir: str, name: str, dr: str) -> str:
    """Train one PPO policy under a DR setting: uniform | posterior | median."""
    ckpt = os.path.join(run_dir, f"policy_{name}.pt")
    marker = os.path.join(run_dir, f"policy_{name}.json")
    if _stage_done(marker, cfg):
        return ckpt
    offsets = {"b0": 100, "b1": 200, "mu": 300}
    offset = offsets.get(name, 400)
    if dr == "uniform":
        samples = _dr_samples(cfg, UniformBoxDensity(), offset)
    elif dr == "posterior":
        posterior = _load_posterior(stage_infer(cfg, run_dir))
        samples = _dr_samples(cfg, posterior, offset)
    elif dr == "median":
        samples = [DEFAULT_BOX.median] * 12
    else:
        raise ValueError(f"unknown DR setting {dr!r}")
    model, curve = _train_under(samples, cfg, offset)
    ppo.save_checkpoint(ckpt, model)
    meta = cfg.meta(f"train-policy-{name}")
    _write_curve(os.path.join(run_dir, f"curve_{name}.csv"), meta, curve)
    _write_json(marker, {"dr": dr, "updates": len(curve)}, meta)
    return ckpt


def stage_evaluate(cfg: RunConfig, run_dir: str) -> str:
    report_path = os.path.join(run_dir, "report.json")
    if _stage_done(report_path, cfg):
        return report_path
    policies = []
    for name in ("b0", "b1", "mu"):
        ckpt = os.path.join(run_dir, f"policy_{name}.pt")
        if os.path.exists(ckpt):
            policies.append((f"ppo-{name}", ppo.load_checkpoint(ckpt)))
    if not policies:
        raise RuntimeError("no policy checkpoints to evaluate")
    k = cfg.dlo_index
    median = DEFAULT_BOX.median
    env_factories = [
        (f"real-dlo{k}",
         lambda rep: make_real_emulator(k, cfg.sim, cfg.task,
                                        seed=cfg.seed + 500 + rep)),
        ("sim-median",
         lambda rep: Env(median, cfg.sim, cfg.task,
                         seed=cfg.seed + 600 + rep)),
    ]
    meta = cfg.meta("evaluate")
    bundle = build_eval_grid(policies, env_factories, reps=cfg.eval_reps,
                             out_dir=os.path.join(run_dir, "eval"),
                             meta=meta)
    report = {"mean_reward": {}}
    for label, cell in bundle["cells"].items():
        if cell["records"]:
            report["mean_reward"][label] = float(np.mean(
                [r.total_reward() for r in cell["records"]]))
    posterior_path = os.path.join(run_dir, "posterior.json")
    if os.path.exists(posterior_path):
        posterior = _load_posterior(posterior_path)
        std = posterior.marginal_std_normalized()
        report["posterior_std_normalized"] = {"length": float(std[0]),
                                              "youngs_modulus": float(std[1])}
        report["posterior_mean_physical"] = [
            float(v) for v in posterior.mean_physical()]
    _write_json(report_path, report, meta)
    return report_path


def stage_heatmap(cfg: RunConfig, run_dir: str, posterior_path=None,
                  resolution=(200, 200)) -> str:
    posterior_path = posterior_path or os.path.join(run_dir, "posterior.json")
    posterior = _load_posterior(posterior_path)
    pdf, length_axis, youngs_axis, integral = posterior.grid_density(
        resolution)
    path = os.path.join(run_dir, "heatmap.csv")
    meta = cfg.meta("heatmap")
    meta["integral"] = repr(float(integral))
    rows = [(float(length_axis[i]), float(youngs_axis[j]), float(pdf[i, j]))
            for i in range(len(length_axis)) for j in range(len(youngs_axis))]
    _write_csv(path, meta, ["length", "youngs_modulus", "density"], rows)
    return path


# -- subcommands -------------------------------------------------------------

def cmd_simulate(cfg: RunConfig, args) -> int:
    os.makedirs(cfg.out_dir, exist_ok=True)
    if args.length is not None or args.youngs is not None:
        if args.length is None or args.youngs is None:
            raise ValueError("--length and --youngs must be given together")
        params = SystemParams(args.length, args.youngs)
        env = Env(params, cfg.sim, cfg.task, seed=cfg.seed)
    else:
        env = make_real_emulator(cfg.dlo_index, cfg.sim, cfg.task,
                                 seed=cfg.seed)
    rec = env.rollout(SweepPolicy())
    path = os.path.join(cfg.out_dir, "episode.jsonl")
    save_records(path, [rec])
    _write_json(os.path.join(cfg.out_dir, "episode.json"),
                {"steps": len(rec.steps),
                 "total_reward": rec.total_reward()},
                cfg.meta("simulate"))
    log.info("wrote %s", path)
    return 0


def cmd_collect(cfg: RunConfig, args) -> int:
    os.makedirs(cfg.out_dir, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    policy = _collection_policy(cfg, cfg.out_dir)

    def factory(thetas, group):
        return make_vector_env(thetas, cfg.sim, cfg.task,
                               seed=cfg.seed * 100003 + group)

    dataset = lfi.collect_trajectories(policy, UniformBoxDensity(), args.n,
                                       factory, rng)
    path = os.path.join(cfg.out_dir, "trajectories.jsonl")
    save_records(path, [rec for _, rec in dataset])
    _write_json(os.path.join(cfg.out_dir, "trajectories.json"),
                {"count": len(dataset)}, cfg.meta("collect"))
    log.info("wrote %d trajectories to %s", len(dataset), path)
    return 0


def cmd_infer(cfg: RunConfig, args) -> int:
    os.makedirs(cfg.out_dir, exist_ok=True)
    stage_infer(cfg, cfg.out_dir)
    return 0


def cmd_train_policy(cfg: RunConfig, args) -> int:
    os.makedirs(cfg.out_dir, exist_ok=True)
    names = {"uniform": "b0", "posterior": "b1", "median": "mu"}
    stage_policy(cfg, cfg.out_dir, names[args.dr], args.dr)
    return 0


def cmd_evaluate(cfg: RunConfig, args) -> int:
    os.makedirs(cfg.out_dir, exist_ok=True)
    stage_evaluate(cfg, cfg.out_dir)
    return 0


def cmd_heatmap(cfg: RunConfig, args) -> int:
    os.makedirs(cfg.out_dir, exist_ok=True)
    stage_heatmap(cfg, cfg.out_dir, posterior_path=args.posterior,
                  resolution=(args.resolution, args.resolution))
    return 0


def cmd_pipeline(cfg: RunConfig, args) -> int:
    """Full run: uniform-DR policy, real rollout, inference, posterior-DR
    policy, median baseline, evaluation grid. Stages are checkpointed; a
    rerun skips finished stages and a failure names the stage to resume."""
    run_dir = cfg.out_dir
    os.makedirs(run_dir, exist_ok=True)
    with open(os.path.join(run_dir, "config.json"), "w") as f:
        json.dump(cfg.to_json_dict(), f, sort_keys=True, indent=2)
    stages = [
        ("policy-b0", lambda: stage_policy(cfg, run_dir, "b0", "uniform")),
        ("real-rollout", lambda: stage_real_rollout(cfg, run_dir)),
        ("infer", lambda: stage_infer(cfg, run_dir)),
        ("policy-b1", lambda: stage_policy(cfg, run_dir, "b1", "posterior")),
        ("policy-mu", lambda: stage_policy(cfg, run_dir, "mu", "median")),
        ("evaluate", lambda: stage_evaluate(cfg, run_dir)),
    ]
    for name, fn in stages:
        log.info("stage %s", name)
        try:
            fn()
        except Exception:
            log.error("stage %s failed; fix the cause and rerun the same "
                      "command to resume from this stage", name)
            raise
    log.info("pipeline complete: %s", run_dir)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dlo-r2s2r",
        description="Sim-to-sim Real2Sim2Real pipeline for deformable "
                    "linear object manipulation")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON run config")
        p.add_argument("--seed", type=int, help="master seed override")
        p.add_argument("--out", help="run directory override")
        p.add_argument("--scale", choices=sorted(SCALE_PRESETS),
                       help="scale preset override")
        p.add_argument("--dlo", type=int, dest="dlo_index",
                       help="real-emulator DLO index override")

    p = sub.add_parser("simulate", help="dump one scripted-sweep episode")
    common(p)
    p.add_argument("--length", type=float)
    p.add_argument("--youngs", type=float)
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("collect", help="collect uniform-prior trajectories")
    common(p)
    p.add_argument("--n", type=int, default=48)
    p.set_defaults(fn=cmd_collect)

    p = sub.add_parser("infer", help="run likelihood-free inference")
    common(p)
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("train-policy", help="train PPO under a DR setting")
    common(p)
    p.add_argument("--dr", choices=("uniform", "posterior", "median"),
                   default="uniform")
    p.set_defaults(fn=cmd_train_policy)

    p = sub.add_parser("evaluate", help="evaluation grid over checkpoints")
    common(p)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("heatmap", help="posterior density heatmap CSV")
    common(p)
    p.add_argument("--posterior", help="posterior JSON path")
    p.add_argument("--resolution", type=int, default=200)
    p.set_defaults(fn=cmd_heatmap)

    p = sub.add_parser("pipeline", help="full end-to-end run")
    common(p)
    p.set_defaults(fn=cmd_pipeline)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = RunConfig.load(args.config, seed=args.seed, out_dir=args.out,
                             scale=args.scale, dlo_index=args.dlo_index)
    except (ValueError, TypeError, OSError, json.JSONDecodeError) as exc:
        parser.exit(2, f"config error: {exc}\n")
    # single-threaded torch keeps reruns bitwise reproducible
    torch.set_num_threads(1)
    try:
        return args.fn(cfg, args)
    except ValueError as exc:
        parser.exit(2, f"usage error: {exc}\n")
    except Exception as exc:  # runtime failure
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
