import csv
import json

import numpy as np
import pytest

from trajgail import checkpoint, cli, data, gail
from trajgail.config import ConfigError, RunConfig, load_config, parse_config

TINY = ["--set", "gail.hidden_size=8", "--set", "gail.mlp_size=8", "--set", "gail.horizon=8",
        "--set", "gail.rollouts_per_iter=3", "--set", "gail.disc_updates=2", "--set", "gail.ppo_epochs=2",
        "--set", "synth.n_frames=80", "--set", "synth.n_vehicles=4", "--set", "gail.checkpoint_every=2"]


def run(capsys, *args):
    rc = cli.main([str(a) for a in args])
    err = capsys.readouterr().err
    return rc, err


def loss_rows(path):
    lines = [l for l in path.read_text().splitlines() if not l.startswith("#")]
    rows = list(csv.reader(lines))
    assert rows[0] == gail.LOSS_HEADER
    return rows[1:]


@pytest.fixture(scope="module")
def scene_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("scene") / "scene.csv"
    assert cli.main(["synth", "--seed", "7", "--out", str(path), *TINY]) == 0
    return path


@pytest.fixture(scope="module")
def trained(tmp_path_factory, scene_file):
    out = tmp_path_factory.mktemp("train")
    assert cli.main(["train", "--data", str(scene_file), "--seed", "3", "--out", str(out),
                     "--set", "gail.iterations=2", *TINY]) == 0
    return out


# ------------------------------------------------------------------ synth


def test_synth_default_round_trip(tmp_path, capsys):
    out = tmp_path / "s.csv"
    assert run(capsys, "synth", "--seed", 7, "--out", out)[0] == 0
    (scene,) = data.load_trajectories(out)
    assert len(scene.vehicle_ids) == load_config().synth.n_vehicles == 8
    text = out.read_text()
    assert text.splitlines()[0] == "# dt=0.1"
    assert "# seed=7" in text and "# config: " in text


def test_synth_is_byte_identical(tmp_path, capsys):
    for name in ("a.csv", "b.csv"):
        run(capsys, "synth", "--seed", 5, "--out", tmp_path / name, "--set", "synth.n_frames=50")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_synth_zero_vehicles_fails_before_writing(tmp_path, capsys):
    out = tmp_path / "s.csv"
    rc, err = run(capsys, "synth", "--out", out, "--set", "synth.n_vehicles=0")
    assert rc == 1 and not out.exists()
    assert err.startswith("error: ") and err.count("\n") == 1 and "vehicle count" in err


def test_invalid_config_key(tmp_path, capsys):
    rc, err = run(capsys, "synth", "--out", tmp_path / "s.csv", "--set", "gail.nope=1")
    assert rc == 1 and "invalid config key" in err


# ------------------------------------------------------------------ train


def test_train_two_iterations(trained):
    rows = loss_rows(trained / "losses.csv")
    assert [r[0] for r in rows] == ["0", "1"]
    assert all(np.isfinite(float(x)) for r in rows for x in r)
    head = (trained / "losses.csv").read_text().splitlines()[:2]
    assert head[0] == "# seed=3" and head[1].startswith("# config: ")
    assert "gail.hidden_size=8" in head[1]
    for name in ("checkpoint.json", "checkpoint_0000.json", "checkpoint_0002.json"):
        assert (trained / name).is_file()


def test_resume_continues_exactly(tmp_path, scene_file, trained, capsys):
    full = tmp_path / "full"
    args = ["--data", scene_file, "--seed", 3, *TINY, "--set", "gail.iterations=4"]
    assert run(capsys, "train", "--out", full, *args)[0] == 0
    part = tmp_path / "part"
    part.mkdir()
    (part / "losses.csv").write_text((trained / "losses.csv").read_text())
    assert run(capsys, "train", "--out", part, "--resume", trained / "checkpoint.json", *args)[0] == 0
    assert loss_rows(part / "losses.csv") == loss_rows(full / "losses.csv")
    ck = checkpoint.load_checkpoint(part / "checkpoint.json")
    assert ck.iteration == 4
    ref = checkpoint.load_checkpoint(full / "checkpoint.json")
    for k in ref.params:
        assert np.array_equal(ck.params[k], ref.params[k])


def test_train_missing_data(tmp_path, capsys):
    rc, err = run(capsys, "train", "--data", tmp_path / "missing.csv", "--out", tmp_path / "o")
    assert rc == 1 and err.startswith("error: data: ")


def test_train_scene_too_short(tmp_path, scene_file, capsys):
    rc, err = run(capsys, "train", "--data", scene_file, "--out", tmp_path / "o", "--set", "gail.horizon=500")
    assert rc == 1 and err.startswith("error: gail: ")


# --------------------------------------------------------------- checkpoint


def test_checkpoint_round_trip(trained, tmp_path):
    text = (trained / "checkpoint.json").read_text()
    ck = checkpoint.Checkpoint.loads(text)
    assert ck.dumps() == text
    checkpoint.save_checkpoint(tmp_path / "again.json", ck)
    assert (tmp_path / "again.json").read_text() == text


def test_checkpoint_version_mismatch(trained, tmp_path, capsys):
    doc = json.loads((trained / "checkpoint.json").read_text())
    doc["format_version"] = 99
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(doc))
    with pytest.raises(checkpoint.CheckpointError, match="version"):
        checkpoint.load_checkpoint(bad)
    rc, err = run(capsys, "generate", "--checkpoint", bad, "--data", trained / ".." / "x.csv", "--out", tmp_path / "g.csv")
    assert rc == 1 and "error: " in err


def test_checkpoint_not_json(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("not json")
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.load_checkpoint(p)


# ---------------------------------------------------------------- generate


def test_generate_count_and_fencepost(trained, scene_file, tmp_path, capsys):
    out = tmp_path / "g.csv"
    rc, _ = run(capsys, "generate", "--checkpoint", trained / "checkpoint.json", "--data", scene_file,
                "--count", 3, "--horizon", 50, "--seed", 1, "--out", out)
    assert rc == 0
    (g,) = data.load_trajectories(out)
    (s,) = data.load_trajectories(scene_file)
    assert len(g.vehicle_ids) == 3
    assert all(len(g.tracks[v]) == 51 for v in g.vehicle_ids)
    assert min(g.vehicle_ids) > max(s.vehicle_ids)
    assert "# seed=1" in out.read_text()


def test_generate_same_seed_identical(trained, scene_file, tmp_path, capsys):
    for name in ("a.csv", "b.csv"):
        run(capsys, "generate", "--checkpoint", trained / "checkpoint.json", "--data", scene_file,
            "--count", 2, "--horizon", 10, "--seed", 4, "--out", tmp_path / name)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_generate_horizon_exceeds_scene(trained, scene_file, tmp_path, capsys):
    rc, err = run(capsys, "generate", "--checkpoint", trained / "checkpoint.json", "--data", scene_file,
                  "--horizon", 500, "--out", tmp_path / "g.csv")
    assert rc == 1 and err.startswith("error: env: ")


def test_collapsed_policy_is_seed_independent(scene_file, tmp_path, capsys):
    scenes = data.load_trajectories(scene_file)
    cfg = gail.TrainConfig(hidden_size=8, mlp_size=8, horizon=8, sigma_min=1e-9, action_frame="velocity")
    tr = gail.Trainer(cfg, scenes)
    proj = tr.nets.policy.head.proj
    K = cfg.n_components
    proj.W.data[:] = 0.0
    proj.b.data[:] = 0.0
    proj.b.data[3 * K:] = -60.0  # softplus underflows; scales collapse to sigma_min
    ck_path = tmp_path / "collapsed.json"
    checkpoint.save_checkpoint(ck_path, checkpoint.Checkpoint.from_trainer(tr))
    tracks = []
    for seed in (0, 1, 2):
        out = tmp_path / f"g{seed}.csv"
        assert run(capsys, "generate", "--checkpoint", ck_path, "--data", scene_file, "--tiled",
                   "--horizon", 30, "--seed", seed, "--out", out)[0] == 0
        (g,) = data.load_trajectories(out)
        tracks.append(np.stack([g.tracks[v].positions() for v in g.vehicle_ids]))
    assert np.max(np.abs(tracks[1] - tracks[0])) < 1e-3
    assert np.max(np.abs(tracks[2] - tracks[0])) < 1e-3


# ---------------------------------------------------------------- evaluate


def _const_speed_scene(speed, n=4, frames=30):
    f = np.arange(frames, dtype=np.int64)
    tracks = {v: data.Track(v, f, 10.0 * v + speed * 0.1 * f + 0.01 * v * f, np.zeros(frames),
                            np.zeros(frames, dtype=np.int64)) for v in range(1, n + 1)}
    return data.Scene("0", tracks, 0.1, 1)


def test_evaluate_self_comparison(scene_file, tmp_path, capsys):
    out = tmp_path / "m.txt"
    assert run(capsys, "evaluate", "--generated", scene_file, "--reference", scene_file, "--out", out)[0] == 0
    rep = out.read_text()
    vals = [float(l.split("=")[1]) for l in rep.splitlines()
            if "=" in l and not l.startswith(("#", "params"))]
    assert len(vals) == 20 and max(abs(v) for v in vals) <= 1e-9
    assert "params.kernel = gaussian" in rep


def test_evaluate_speed_shift(tmp_path, capsys):
    g, r = tmp_path / "g.csv", tmp_path / "r.csv"
    data.save_trajectories(g, [_const_speed_scene(5.0)])
    data.save_trajectories(r, [_const_speed_scene(6.0)])
    out = tmp_path / "m.txt"
    assert run(capsys, "evaluate", "--generated", g, "--reference", r, "--out", out)[0] == 0
    from trajgail.metrics import MetricReport

    rep = MetricReport.loads(out.read_text())
    assert rep.values["speed"]["wd"] == pytest.approx(1.0, abs=0.05)


def test_evaluate_missing_column(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("# dt=0.1\nscene_id,vehicle_id,frame,x,lane\n0,1,0,0,0\n")
    rc, err = run(capsys, "evaluate", "--generated", bad, "--reference", bad, "--out", tmp_path / "m.txt")
    assert rc == 1 and "missing column 'y'" in err and err.startswith("error: data: ")


# ------------------------------------------------------------------ ablate


def test_ablate_ten_iterations(scene_file, tmp_path, capsys):
    out = tmp_path / "ab"
    rc, _ = run(capsys, "ablate", "--data", scene_file, "--seed", 2, "--out", out, *TINY,
                "--set", "gail.iterations=10", "--set", "gail.checkpoint_every=5")
    assert rc == 0
    for name, *_ in cli.ABLATIONS:
        assert len(loss_rows(out / f"losses_{name}.csv")) == 10
    lines = [l for l in (out / "summary.csv").read_text().splitlines() if not l.startswith("#")]
    rows = list(csv.reader(lines))
    assert rows[0] == ["config", "mmd", "wd", "kl", "js", "seconds"]
    assert [r[0] for r in rows[1:]] == [n for n, *_ in cli.ABLATIONS]
    assert all(len(r) == 6 and all(np.isfinite(float(x)) for x in r[1:]) for r in rows[1:])
    # shared initialization across configurations
    inits = [checkpoint.load_checkpoint(out / f"checkpoint_{n}_0000.json").params for n, *_ in cli.ABLATIONS]
    for other in inits[1:]:
        assert all(np.array_equal(inits[0][k], other[k]) for k in inits[0])


def test_ablation_initial_rollouts_identical(scene_file):
    scenes = data.load_trajectories(scene_file)
    rolls = []
    for _, ppo, gp in cli.ABLATIONS:
        cfg = gail.TrainConfig(hidden_size=8, mlp_size=8, horizon=8, use_ppo=ppo, use_wgan_gp=gp, seed=2)
        rolls.append(gail.Trainer(cfg, scenes, np.random.default_rng(2)).collect().positions)
    for r in rolls[1:]:
        assert np.array_equal(r, rolls[0])


# ------------------------------------------------------------------ config


def test_config_profiles_and_file(tmp_path):
    desk = load_config()
    assert (desk.gail.hidden_size, desk.gail.n_components, desk.gail.horizon, desk.gail.iterations) == (32, 2, 64, 300)
    assert desk.synth.n_vehicles == 8
    paper = load_config("paper")
    assert (paper.gail.hidden_size, paper.gail.num_layers, paper.gail.lr_disc) == (128, 2, 1e-8)
    f = tmp_path / "run.cfg"
    f.write_text("# comment\ngail.hidden_size = 12\nsynth.idm.v0=20\ngail.use_ppo=false\n")
    cfg = load_config(f, ["eval.bins=16"])
    assert cfg.gail.hidden_size == 12 and cfg.synth.idm.v0 == 20.0
    assert cfg.gail.use_ppo is False and cfg.eval.bins == 16
    assert cfg.gail.optimizer == "adam"  # desk values underneath the file


def test_config_dump_parse_round_trip():
    cfg = load_config(overrides=["gail.adam_betas=0.8,0.9", "synth.init_speed=0.1,0.2"])
    back = parse_config(cfg.dumps(), RunConfig())
    assert back.items() == cfg.items()


@pytest.mark.parametrize("bad", ["gail", "gail.hidden_size.x", "synth.idm", "gail.hidden_size=abc",
                                 "gail.use_ppo=maybe", "nokey"])
def test_config_errors(bad):
    key, _, val = bad.partition("=")
    with pytest.raises(ConfigError):
        if "=" in bad:
            load_config(overrides=[bad])
        else:
            RunConfig().set(key, "1")


def test_config_unknown_profile_or_file():
    with pytest.raises(ConfigError):
        load_config("/nonexistent/cfg")
