"""End-to-end tests of the command-line interface.

Each test drives ``main`` in process and asserts on the exit code, the
console output, and the files left behind. One subprocess smoke test
verifies the installed entry point.
"""

import json
import shutil
import subprocess

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from tcoh.cli import (
    EXIT_CHECK_FAILED,
    EXIT_DIVERGED,
    EXIT_OK,
    EXIT_USAGE,
    main,
    read_metrics,
    write_metrics,
)
from tcoh.data import (
    RotatingPointsSpec,
    Sequence,
    SequenceDataset,
    gen_rotating_points,
    load_dataset,
    save_dataset,
)
from tcoh.ul import MetricsRow


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def write_config(path, **overrides):
    raw = {
        "network": [{"type": "linear", "in_dim": 56, "out_dim": 2, "ul": True}],
        "dataset": {"kind": "rotating"},
        "sgd": {"learning_rate": 0.01, "momentum": 0.9, "weight_decay": 0.1},
        "epochs": 2,
        "seed": 0,
    }
    raw.update(overrides)
    path.write_text(json.dumps(raw))
    return raw


def tree_bytes(root):
    return {
        p.relative_to(root).as_posix(): p.read_bytes()
        for p in sorted(root.rglob("*"))
        if p.is_file()
    }


# ---------------------------------------------------------------------------
# gen-data.
# ---------------------------------------------------------------------------


def test_gen_data_rotating(tmp_path, capsys):
    out = tmp_path / "rot"
    code, stdout, _ = run(capsys, "gen-data", "rotating", "--out", str(out))
    assert code == EXIT_OK
    assert "72 frames" in stdout
    ds = load_dataset(out)
    assert ds.n_frames == 72
    assert ds.frame_shape == (56,)
    assert ds.meta["generator"] == "rotating_points"


def test_gen_data_rotating_noise_bounds(tmp_path, capsys):
    ok = run(capsys, "gen-data", "rotating", "--noise", "0.5", "--out", str(tmp_path / "a"))
    assert ok[0] == EXIT_OK
    code, _, err = run(
        capsys, "gen-data", "rotating", "--noise", "0.6", "--out", str(tmp_path / "b")
    )
    assert code == EXIT_USAGE
    assert "error:" in err and "noise" in err


def test_gen_data_same_seed_is_byte_identical(tmp_path, capsys):
    for name, seed in (("a", "7"), ("b", "7"), ("c", "8")):
        code, _, _ = run(
            capsys,
            "gen-data", "rotating", "--noise", "0.2", "--seed", seed,
            "--out", str(tmp_path / name),
        )
        assert code == EXIT_OK
    assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")
    assert tree_bytes(tmp_path / "a") != tree_bytes(tmp_path / "c")


def test_gen_data_moving_square(tmp_path, capsys):
    out = tmp_path / "sq"
    code, stdout, _ = run(
        capsys,
        "gen-data", "moving-square", "--image-size", "16", "--square-size", "4",
        "--frames", "6", "--sequences", "2", "--out", str(out),
    )
    assert code == EXIT_OK
    assert "2 sequence(s)" in stdout
    ds = load_dataset(out)
    assert ds.frame_shape == (1, 16, 16)
    assert ds.n_frames == 12


def test_gen_data_seed_env_fallback(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("TCOH_SEED", "3")
    run(capsys, "gen-data", "rotating", "--out", str(tmp_path / "env"))
    monkeypatch.delenv("TCOH_SEED")
    run(capsys, "gen-data", "rotating", "--seed", "3", "--out", str(tmp_path / "flag"))
    assert tree_bytes(tmp_path / "env") == tree_bytes(tmp_path / "flag")


def test_bad_seed_env(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("TCOH_SEED", "not-a-number")
    code, _, err = run(capsys, "gen-data", "rotating", "--out", str(tmp_path / "x"))
    assert code == EXIT_USAGE
    assert "TCOH_SEED" in err


def test_missing_required_flag_exits_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["gen-data", "rotating"])
    assert exc.value.code == 2


# ---------------------------------------------------------------------------
# train.
# ---------------------------------------------------------------------------


def test_train_writes_metrics_and_checkpoint(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    write_config(cfg, eval={"kind": "decode-angle"})
    out = tmp_path / "run"
    code, stdout, _ = run(capsys, "train", "--config", str(cfg), "--out", str(out))
    assert code == EXIT_OK
    assert "epoch 0:" in stdout and "epoch 1:" in stdout
    assert "eval=" in stdout
    assert (out / "checkpoint.bin").is_file()
    rows = read_metrics(out / "metrics.csv")
    assert [r.epoch for r in rows] == [0, 1]
    assert all(len(r.ul_grad_norms) == 1 for r in rows)
    assert all(r.eval_metric is not None for r in rows)


def test_train_zero_epochs_keeps_initial_parameters(tmp_path, capsys):
    from tcoh.checkpoint import load_checkpoint
    from tcoh.config import build_network, parse_config

    cfg_path = tmp_path / "c.json"
    raw = write_config(cfg_path, epochs=0)
    out = tmp_path / "run"
    code, _, _ = run(capsys, "train", "--config", str(cfg_path), "--out", str(out))
    assert code == EXIT_OK
    assert read_metrics(out / "metrics.csv") == []

    cfg = parse_config(raw)
    fresh = build_network(cfg, (56,))
    expected = [p.copy() for p in fresh.parameters()]
    load_checkpoint(out / "checkpoint.bin", fresh)
    for a, b in zip(expected, fresh.parameters()):
        assert_array_equal(a, b)


def test_train_resume_matches_uninterrupted_run(tmp_path, capsys):
    cfg4 = tmp_path / "c4.json"
    write_config(cfg4, epochs=4, train={"noise_level": 0.2})
    whole = tmp_path / "whole"
    assert run(capsys, "train", "--config", str(cfg4), "--out", str(whole))[0] == EXIT_OK

    cfg2 = tmp_path / "c2.json"
    write_config(cfg2, epochs=2, train={"noise_level": 0.2})
    half = tmp_path / "half"
    assert run(capsys, "train", "--config", str(cfg2), "--out", str(half))[0] == EXIT_OK

    resumed = tmp_path / "resumed"
    code, stdout, _ = run(
        capsys,
        "train", "--config", str(cfg4), "--out", str(resumed),
        "--resume", str(half / "checkpoint.bin"),
    )
    assert code == EXIT_OK
    assert "epoch 2:" in stdout and "epoch 3:" in stdout and "epoch 1:" not in stdout
    assert (resumed / "checkpoint.bin").read_bytes() == (whole / "checkpoint.bin").read_bytes()


def test_train_resume_beyond_config_is_an_error(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    write_config(cfg, epochs=2)
    out = tmp_path / "run"
    run(capsys, "train", "--config", str(cfg), "--out", str(out))
    shrunk = tmp_path / "c1.json"
    write_config(shrunk, epochs=1)
    code, _, err = run(
        capsys,
        "train", "--config", str(shrunk), "--out", str(tmp_path / "x"),
        "--resume", str(out / "checkpoint.bin"),
    )
    assert code == EXIT_USAGE
    assert "epoch" in err


def test_train_divergence_exit_code(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    write_config(cfg, sgd={"learning_rate": 1e200, "momentum": 0.0, "weight_decay": 1e200})
    out = tmp_path / "run"
    with np.errstate(over="ignore", invalid="ignore"):
        code, _, err = run(capsys, "train", "--config", str(cfg), "--out", str(out))
    assert code == EXIT_DIVERGED
    assert "non-finite" in err
    assert not (out / "checkpoint.bin").exists()


def test_train_config_seed_wins_over_env(tmp_path, capsys, monkeypatch):
    cfg = tmp_path / "c.json"
    write_config(cfg, seed=0)
    monkeypatch.setenv("TCOH_SEED", "99")
    out_env = tmp_path / "env"
    run(capsys, "train", "--config", str(cfg), "--out", str(out_env))
    monkeypatch.delenv("TCOH_SEED")
    out_plain = tmp_path / "plain"
    run(capsys, "train", "--config", str(cfg), "--out", str(out_plain))
    assert (out_env / "checkpoint.bin").read_bytes() == (out_plain / "checkpoint.bin").read_bytes()


def test_train_env_seed_fills_missing_config_seed(tmp_path, capsys, monkeypatch):
    raw = {
        "network": [{"type": "linear", "in_dim": 56, "out_dim": 2, "ul": True}],
        "dataset": {"kind": "rotating"},
        "epochs": 1,
    }
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps(raw))
    monkeypatch.setenv("TCOH_SEED", "5")
    out_env = tmp_path / "env"
    assert run(capsys, "train", "--config", str(cfg), "--out", str(out_env))[0] == EXIT_OK
    monkeypatch.delenv("TCOH_SEED")

    explicit = tmp_path / "c5.json"
    raw["seed"] = 5
    explicit.write_text(json.dumps(raw))
    out_flag = tmp_path / "flag"
    run(capsys, "train", "--config", str(explicit), "--out", str(out_flag))
    assert (out_env / "checkpoint.bin").read_bytes() == (out_flag / "checkpoint.bin").read_bytes()


def test_train_bad_config_exit_2(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    write_config(cfg, optimizer={"kind": "adam"})
    code, _, err = run(capsys, "train", "--config", str(cfg), "--out", str(tmp_path / "x"))
    assert code == EXIT_USAGE
    assert "unknown key" in err


def test_train_missing_config_exit_2(tmp_path, capsys):
    code, _, err = run(
        capsys, "train", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path / "x")
    )
    assert code == EXIT_USAGE
    assert "nope.json" in err


# ---------------------------------------------------------------------------
# closed-form.
# ---------------------------------------------------------------------------


def closed_loop_dataset(dir_path):
    # One revolution plus a copy of the first frame: every edge of the
    # 72-cycle appears exactly once, so the chain is the uniform cycle.
    ds = gen_rotating_points(RotatingPointsSpec())
    frames = list(ds.sequences[0].frames)
    frames.append(frames[0].copy())
    save_dataset(SequenceDataset([Sequence(frames)]), dir_path)


def test_closed_form_cycle_is_a_circle(tmp_path, capsys):
    data = tmp_path / "loop"
    closed_loop_dataset(data)
    out = tmp_path / "emb.csv"
    diag = tmp_path / "diag.json"
    code, stdout, _ = run(
        capsys,
        "closed-form", "--dataset", str(data), "--out", str(out),
        "--diagnostics", str(diag),
    )
    assert code == EXIT_OK
    assert "states: 72" in stdout

    emb = np.loadtxt(out, delimiter=",")
    assert emb.shape == (72, 2)
    radii = np.linalg.norm(emb, axis=1)
    assert np.ptp(radii) < 1e-6

    info = json.loads(diag.read_text())
    assert info["n_states"] == 72
    assert info["stationarity_residual"] < 1e-8
    expected = 2 + sum(np.log(2 * np.asarray(info["eigenvalues"])))
    assert_allclose(info["objective"], expected, atol=1e-8)


def test_closed_form_rotation_flag(tmp_path, capsys):
    data = tmp_path / "loop"
    closed_loop_dataset(data)
    plain = tmp_path / "plain.csv"
    rotated = tmp_path / "rot.csv"
    assert run(capsys, "closed-form", "--dataset", str(data), "--out", str(plain))[0] == EXIT_OK
    assert (
        run(
            capsys,
            "closed-form", "--dataset", str(data), "--out", str(rotated),
            "--rotate-deg", "90",
        )[0]
        == EXIT_OK
    )
    y = np.loadtxt(plain, delimiter=",")
    yr = np.loadtxt(rotated, delimiter=",")
    rot = np.array([[0.0, 1.0], [-1.0, 0.0]])  # right-multiplication by R(90)
    assert_allclose(yr, y @ rot.T, atol=1e-12)


def test_closed_form_rotation_needs_two_components(tmp_path, capsys):
    data = tmp_path / "loop"
    closed_loop_dataset(data)
    code, _, err = run(
        capsys,
        "closed-form", "--dataset", str(data), "--out", str(tmp_path / "e.csv"),
        "-d", "3", "--rotate-deg", "45",
    )
    assert code == EXIT_USAGE
    assert "rotate" in err


def test_closed_form_dimension_too_large(tmp_path, capsys):
    data = tmp_path / "tiny"
    frames = [np.array([0.0, 0.0]), np.array([1.0, 0.0]), np.array([0.0, 1.0])]
    save_dataset(SequenceDataset([Sequence(frames)]), data)
    code, _, err = run(
        capsys, "closed-form", "--dataset", str(data), "--out", str(tmp_path / "e.csv"), "-d", "3"
    )
    assert code == EXIT_USAGE
    assert "error:" in err


def test_closed_form_needs_transitions(tmp_path, capsys):
    data = tmp_path / "single"
    save_dataset(SequenceDataset([Sequence([np.zeros(3)])]), data)
    code, _, err = run(
        capsys, "closed-form", "--dataset", str(data), "--out", str(tmp_path / "e.csv")
    )
    assert code == EXIT_USAGE
    assert "two frames" in err


# ---------------------------------------------------------------------------
# gradcheck.
# ---------------------------------------------------------------------------


def test_gradcheck_passes(capsys):
    code, stdout, err = run(capsys, "gradcheck", "--seed", "0")
    assert code == EXIT_OK
    assert err == ""
    lines = [l for l in stdout.splitlines() if l]
    assert len(lines) == 5
    assert all(l.startswith("PASS") for l in lines)
    joined = "\n".join(lines)
    for op in ("linear_backward", "conv2d_backward[valid]", "conv2d_backward[same]",
               "tanh_backward", "batch_gradient"):
        assert op in joined


def test_gradcheck_corrupt_fails(capsys):
    code, stdout, err = run(capsys, "gradcheck", "--seed", "0", "--corrupt")
    assert code == EXIT_CHECK_FAILED
    assert "FAIL linear_backward" in stdout
    assert "linear_backward" in err


# ---------------------------------------------------------------------------
# eval.
# ---------------------------------------------------------------------------


def trained_run(tmp_path, capsys, **overrides):
    cfg = tmp_path / "c.json"
    write_config(cfg, **overrides)
    out = tmp_path / "run"
    code, _, _ = run(capsys, "train", "--config", str(cfg), "--out", str(out))
    assert code == EXIT_OK
    return cfg, out / "checkpoint.bin"


def test_eval_decode_angle(tmp_path, capsys):
    cfg, ckpt = trained_run(tmp_path, capsys, epochs=10)
    code, stdout, _ = run(
        capsys,
        "eval", "--checkpoint", str(ckpt), "--config", str(cfg), "--eval", "decode-angle",
    )
    assert code == EXIT_OK
    values = {}
    for line in stdout.splitlines():
        key, _, value = line.partition(":")
        values[key.strip()] = float(value)
    assert values["r2_sin"] > 0.9
    assert values["r2_cos"] > 0.9
    assert values["total_abs_error"] == pytest.approx(
        values["abs_error_sin"] + values["abs_error_cos"], rel=1e-4
    )


def test_eval_localize(tmp_path, capsys):
    raw = {
        "network": [
            {"type": "conv", "in_channels": 1, "out_channels": 2, "kernel_size": 3, "ul": True}
        ],
        "dataset": {"kind": "moving_square", "image_size": 8, "square_size": 2,
                    "frames_per_sequence": 10},
        "sgd": {"learning_rate": 1e-5},
        "epochs": 1,
        "eval": {"kind": "localize"},
    }
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps(raw))
    out = tmp_path / "run"
    assert run(capsys, "train", "--config", str(cfg), "--out", str(out))[0] == EXIT_OK
    code, stdout, _ = run(
        capsys, "eval", "--checkpoint", str(out / "checkpoint.bin"), "--config", str(cfg)
    )
    assert code == EXIT_OK
    assert "corr_row:" in stdout and "corr_mean:" in stdout


def test_eval_requires_a_kind(tmp_path, capsys):
    cfg, ckpt = trained_run(tmp_path, capsys)
    code, _, err = run(capsys, "eval", "--checkpoint", str(ckpt), "--config", str(cfg))
    assert code == EXIT_USAGE
    assert "eval" in err


def test_eval_missing_ground_truth(tmp_path, capsys):
    cfg, ckpt = trained_run(tmp_path, capsys)
    bare = tmp_path / "bare"
    frames = gen_rotating_points(RotatingPointsSpec()).sequences[0].frames
    save_dataset(SequenceDataset([Sequence(frames)]), bare)
    code, _, err = run(
        capsys,
        "eval", "--checkpoint", str(ckpt), "--config", str(cfg),
        "--dataset", str(bare), "--eval", "decode-angle",
    )
    assert code == EXIT_USAGE
    assert "ground truth" in err


def test_eval_checkpoint_architecture_mismatch(tmp_path, capsys):
    _, ckpt = trained_run(tmp_path, capsys)
    other = tmp_path / "other.json"
    write_config(
        other,
        network=[{"type": "linear", "in_dim": 56, "out_dim": 3, "ul": True}],
        eval={"kind": "decode-angle"},
    )
    code, _, err = run(
        capsys,
        "eval", "--checkpoint", str(ckpt), "--config", str(other), "--eval", "decode-angle",
    )
    assert code == EXIT_USAGE
    assert "error:" in err


# ---------------------------------------------------------------------------
# Metrics file round trip.
# ---------------------------------------------------------------------------


def test_metrics_round_trip_exact(tmp_path):
    rows = [
        MetricsRow(epoch=0, ul_grad_norms=(1 / 3, 1e-300), eval_metric=None, seconds=0.25),
        MetricsRow(epoch=1, ul_grad_norms=(0.1 + 0.2, 2.0), eval_metric=1e17, seconds=1.5),
    ]
    path = tmp_path / "m.csv"
    write_metrics(path, rows, 2)
    assert read_metrics(path) == rows


def test_write_metrics_validates_norm_count(tmp_path):
    rows = [MetricsRow(epoch=0, ul_grad_norms=(1.0,), eval_metric=None, seconds=0.0)]
    with pytest.raises(ValueError, match="norms"):
        write_metrics(tmp_path / "m.csv", rows, 2)


def test_read_metrics_rejects_garbage(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text("")
    with pytest.raises(ValueError, match="empty"):
        read_metrics(path)
    path.write_text("time,loss\n0,1\n")
    with pytest.raises(ValueError, match="header"):
        read_metrics(path)
    path.write_text("epoch,ul_grad_norm_0,eval_metric,seconds\n0,1.0\n")
    with pytest.raises(ValueError, match="ragged"):
        read_metrics(path)


# ---------------------------------------------------------------------------
# Installed entry point.
# ---------------------------------------------------------------------------


def test_console_script_smoke():
    exe = shutil.which("tcoh")
    assert exe is not None, "console script not installed"
    proc = subprocess.run([exe, "gradcheck"], capture_output=True, text=True)
    assert proc.returncode == EXIT_OK
    assert "PASS" in proc.stdout
