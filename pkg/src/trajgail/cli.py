"""Command-line entry point: ``trajgail {synth,train,generate,evaluate,ablate}``.

Every output file starts with ``#`` header lines naming the seed and the full
configuration.  Failures print ``error: <module>: <message>`` to stderr and
exit with status 1.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import dataclasses
import io
import sys
import time
from pathlib import Path

import numpy as np

from . import data, env, metrics
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import RunConfig, load_config
from .estimator import rollout_scene, sample_starts, tiled_starts
from .gail import LOSS_HEADER, IterationReport, Trainer

MODULES = ("diffcore", "nets", "env", "data", "gail", "metrics", "cli")

ABLATIONS = (
    ("ppo_wgangp", True, True),
    ("ppo_only", True, False),
    ("wgangp_only", False, True),
    ("neither", False, False),
)
SUMMARY_HEADER = ["config", "mmd", "wd", "kl", "js", "seconds"]


class CliError(Exception):
    def __init__(self, module: str, message: str):
        super().__init__(message)
        self.module = module


@contextlib.contextmanager
def stage(module: str):
    """Attribute errors raised in this block to ``module`` unless they carry their own."""
    try:
        yield
    except Exception as exc:
        if not hasattr(exc, "stage"):
            exc.stage = module
        raise


def _module_of(exc: BaseException) -> str:
    if isinstance(exc, CliError):
        return exc.module
    mod = type(exc).__module__ or ""
    if mod.startswith("trajgail."):
        name = mod.split(".", 1)[1]
        if name in MODULES:
            return name
        if name in ("config", "checkpoint", "estimator"):
            return "cli"
    return getattr(exc, "stage", "cli")


def header_lines(cfg: RunConfig, seed: int, extra=()) -> list[str]:
    return [f"seed={seed}", f"config: {cfg.summary()}", *extra]


def _comment_block(lines) -> str:
    return "".join(f"# {line}\n" for line in lines)


def _float(x: float) -> str:
    return repr(float(x))


class LossWriter:
    """Loss-curve CSV, flushed after each row so partial runs stay readable."""

    def __init__(self, path: Path, header: list[str], append: bool = False):
        fresh = not (append and path.exists())
        self.fh = open(path, "w" if fresh else "a", newline="")
        if fresh:
            self.fh.write(_comment_block(header))
            self.fh.write(",".join(LOSS_HEADER) + "\n")
            self.fh.flush()

    def write(self, rep: IterationReport) -> None:
        row = rep.row()
        self.fh.write(",".join([str(row[0])] + [_float(v) for v in row[1:]]) + "\n")
        self.fh.flush()

    def close(self) -> None:
        self.fh.close()


def read_loss_csv(path) -> list[dict[str, float]]:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln and not ln.startswith("#")]
    return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(lines)]


# ------------------------------------------------------------------ commands


def _load_scenes(path) -> list[data.Scene]:
    with stage("data"):
        return data.load_trajectories(path)


def _config(args) -> RunConfig:
    cfg = load_config(args.config, args.set or [])
    if args.seed is not None:
        cfg.gail.seed = args.seed
    return cfg


def cmd_synth(args) -> int:
    cfg = _config(args)
    seed = cfg.gail.seed
    with stage("data"):
        cfg.synth.validate()
        scene = data.synth_experts(cfg.synth, np.random.default_rng(seed))
        text = data.dumps_trajectories([scene], header_lines(cfg, seed))
    _write(args.out, text)
    return 0


def _write(path, text: str) -> None:
    try:
        p = Path(path)
        if p.parent != Path("."):
            p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(text)
    except OSError as exc:
        raise CliError("cli", f"cannot write {path}: {exc.strerror or exc}") from None


def _out_dir(path) -> Path:
    p = Path(path)
    try:
        p.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError("cli", f"cannot create {path}: {exc.strerror or exc}") from None
    return p


def run_training(trainer: Trainer, cfg: RunConfig, out: Path, seed: int, stem: str = "",
                 append: bool = False, log=None) -> list[IterationReport]:
    """Run the remaining iterations, writing the loss CSV and checkpoints.

    Periodic snapshots (including the untrained one at iteration 0) are kept as
    ``checkpoint{stem}_{iteration:04d}.json``; ``checkpoint{stem}.json`` is the
    latest state.
    """
    gcfg = trainer.cfg
    name = f"losses{stem}.csv"
    writer = LossWriter(out / name, header_lines(cfg, seed), append)
    ck_path = out / f"checkpoint{stem}.json"

    def snapshot():
        ck = Checkpoint.from_trainer(trainer)
        save_checkpoint(ck_path, ck)
        if gcfg.checkpoint_every and trainer.iteration % gcfg.checkpoint_every == 0:
            save_checkpoint(out / f"checkpoint{stem}_{trainer.iteration:04d}.json", ck)

    reports = []
    if trainer.iteration == 0:
        snapshot()
    try:
        while trainer.iteration < gcfg.iterations:
            it = trainer.iteration
            try:
                with stage("gail"):
                    rep = trainer.train_iteration()
            except Exception as exc:
                raise CliError(_module_of(exc), f"iteration {it}: {exc}") from exc
            writer.write(rep)
            reports.append(rep)
            if log is not None:
                log(rep)
            if gcfg.checkpoint_every and trainer.iteration % gcfg.checkpoint_every == 0:
                snapshot()
    finally:
        writer.close()
    snapshot()
    return reports


def _log(args):
    if not getattr(args, "verbose", False):
        return None

    def emit(rep: IterationReport):
        print(" ".join(f"{k}={v:.6g}" for k, v in zip(LOSS_HEADER, rep.row())), file=sys.stderr)

    return emit


def cmd_train(args) -> int:
    cfg = _config(args)
    scenes = _load_scenes(args.data)
    out = _out_dir(args.out)
    if args.resume:
        ck = load_checkpoint(args.resume)
        gcfg = dataclasses.replace(ck.config, iterations=cfg.gail.iterations,
                                   checkpoint_every=cfg.gail.checkpoint_every)
        with stage("gail"):
            trainer = Trainer(gcfg, scenes, np.random.default_rng(gcfg.seed),
                              ck.obs_scaler, ck.action_scaler)
        ck.restore(trainer)
        seed = gcfg.seed
    else:
        with stage("gail"):
            trainer = Trainer(cfg.gail, scenes, np.random.default_rng(cfg.gail.seed))
        seed = cfg.gail.seed
    run_training(trainer, cfg, out, seed, append=bool(args.resume), log=_log(args))
    return 0


def generate_scene(ck: Checkpoint, scene: data.Scene, count: int, horizon: int,
                   rng: np.random.Generator, tiled: bool = False) -> data.Scene:
    nets = ck.build_nets()
    if scene.n_lanes != ck.n_lanes:
        if scene.n_lanes > ck.n_lanes:
            raise env.EnvError(f"scene has {scene.n_lanes} lanes, checkpoint expects {ck.n_lanes}")
        scene.n_lanes = ck.n_lanes
    ids, frames = tiled_starts(scene, horizon) if tiled else sample_starts(scene, count, horizon, rng)
    ro = env.rollout(nets.policy, scene, ids, frames, horizon, rng, ck.obs_scaler,
                     ck.config.action_cap)
    return rollout_scene(ro, scene)


def cmd_generate(args) -> int:
    cfg = _config(args)
    seed = cfg.gail.seed
    ck = load_checkpoint(args.checkpoint)
    scenes = _load_scenes(args.data)
    count = args.count if args.count is not None else cfg.generate.count
    horizon = args.horizon if args.horizon is not None else cfg.generate.horizon
    if count < 1 or horizon < 1:
        raise CliError("cli", "count and horizon must be at least 1")
    rng = np.random.default_rng(seed)
    with stage("env"):
        gen = [generate_scene(ck, s, count, horizon, rng, tiled=args.tiled) for s in scenes]
    starts = "tiled" if args.tiled else f"count={count}"
    extra = [f"checkpoint={args.checkpoint} iteration={ck.iteration}", f"{starts} horizon={horizon}"]
    _write(args.out, data.dumps_trajectories(gen, header_lines(cfg, seed, extra)))
    return 0


def _trajectories(scenes) -> list[np.ndarray]:
    out = [s.tracks[v].positions() for s in scenes for v in s.vehicle_ids]
    short = [len(t) for t in out if len(t) < 3]
    if short:
        raise CliError("metrics", f"trajectory with {short[0]} positions; need at least 3")
    return out


def evaluate_scenes(gen, ref, cfg: RunConfig) -> metrics.MetricReport:
    dts = {s.dt for s in gen} | {s.dt for s in ref}
    if len(dts) != 1:
        raise CliError("metrics", f"files disagree on dt: {sorted(dts)}")
    dt = dts.pop()
    e = cfg.eval
    with stage("metrics"):
        g = metrics.feature_marginals(_trajectories(gen), dt)
        r = metrics.feature_marginals(_trajectories(ref), dt)
        return metrics.evaluate(g, r, e.bins, e.smoothing, e.bandwidth or None, e.seed)


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    gen = _load_scenes(args.generated)
    ref = _load_scenes(args.reference)
    rep = evaluate_scenes(gen, ref, cfg)
    extra = [f"generated={args.generated}", f"reference={args.reference}"]
    _write(args.out, rep.dumps(header_lines(cfg, cfg.gail.seed, extra)))
    return 0


def cmd_ablate(args) -> int:
    cfg = _config(args)
    scenes = _load_scenes(args.data)
    out = _out_dir(args.out)
    seed = cfg.gail.seed
    rows = []
    for name, ppo, wgan in ABLATIONS:
        gcfg = dataclasses.replace(cfg.gail, use_ppo=ppo, use_wgan_gp=wgan)
        t0 = time.perf_counter()
        with stage("gail"):
            trainer = Trainer(gcfg, scenes, np.random.default_rng(seed))
        run_cfg = dataclasses.replace(cfg, gail=gcfg)
        run_training(trainer, run_cfg, out, seed, stem=f"_{name}", log=_log(args))
        ck = Checkpoint.from_trainer(trainer)
        gen = [generate_scene(ck, s, 0, gcfg.horizon, np.random.default_rng(seed), tiled=True)
               for s in scenes]
        rep = evaluate_scenes(gen, scenes, cfg)
        seconds = time.perf_counter() - t0
        rows.append([name] + [_float(rep.mean(m)) for m in metrics.METRICS] + [f"{seconds:.3f}"])
    buf = io.StringIO()
    buf.write(_comment_block(header_lines(cfg, seed, ["metrics: mean over features "
                                                      + ",".join(metrics.FEATURES)])))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_HEADER)
    w.writerows(rows)
    _write(out / "summary.csv", buf.getvalue())
    return 0


# --------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="trajgail", description="Trajectory imitation toolkit.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_help):
        sp.add_argument("--config", help="config file or profile name (desk, paper); default desk")
        sp.add_argument("--seed", type=int, help="overrides gail.seed")
        sp.add_argument("--out", required=True, help=out_help)
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
        sp.add_argument("-v", "--verbose", action="store_true", help="log each iteration to stderr")

    sp = sub.add_parser("synth", help="write a synthetic expert scene")
    common(sp, "scene CSV to write")
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("train", help="train on a scene file")
    common(sp, "output directory")
    sp.add_argument("--data", required=True, help="scene CSV")
    sp.add_argument("--resume", help="checkpoint to continue from")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("generate", help="roll out a trained policy")
    common(sp, "generated CSV to write")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", required=True, help="scene CSV providing context and start states")
    sp.add_argument("--count", type=int)
    sp.add_argument("--horizon", type=int)
    sp.add_argument("--tiled", action="store_true",
                    help="start from back-to-back windows along every track instead of random starts")
    sp.set_defaults(func=cmd_generate)

    sp = sub.add_parser("evaluate", help="compare generated and reference trajectories")
    common(sp, "metric report to write")
    sp.add_argument("--generated", required=True)
    sp.add_argument("--reference", required=True)
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("ablate", help="train the four PPO / WGAN-GP configurations")
    common(sp, "output directory")
    sp.add_argument("--data", required=True, help="scene CSV")
    sp.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # one-line machine-parsable error
        msg = " ".join(str(exc).split()) or type(exc).__name__
        print(f"error: {_module_of(exc)}: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
