import json

import numpy as np
import pytest
from PIL import Image

from prlsod.cli import main
from prlsod.geometry import brute_force_df, brute_force_sdm
from prlsod.imageio import read_pfm, write_png
from prlsod.train import synthetic_pair
from toyset import write_toy_set


def run(*argv):
    return main([str(a) for a in argv])


def snapshot(d):
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


@pytest.fixture
def toy_mask(tmp_path):
    m = np.zeros((5, 5), dtype=np.uint8)
    m[1:4, 1:4] = 255
    path = tmp_path / "toy.png"
    Image.fromarray(m).save(path)
    return path


@pytest.fixture
def pair_files(tmp_path):
    rgb, th, m = synthetic_pair()
    write_png(tmp_path / "rgb.png", rgb)
    write_png(tmp_path / "th.png", th)
    write_png(tmp_path / "mask.png", m.astype(float))
    return tmp_path / "rgb.png", tmp_path / "th.png", tmp_path / "mask.png"


# -- gen-supervision -------------------------------------------------------------


def test_gen_supervision_matches_oracle(tmp_path, toy_mask):
    assert run("gen-supervision", "--mask", toy_mask, "--out", tmp_path / "o", "--normalize", "none") == 0
    m = np.zeros((5, 5), dtype=int)
    m[1:4, 1:4] = 1
    np.testing.assert_allclose(read_pfm(tmp_path / "o" / "toy_sdm.pfm"), brute_force_sdm(m).raw, rtol=1e-7)
    df = brute_force_df(m)
    np.testing.assert_array_equal(read_pfm(tmp_path / "o" / "toy_fx.pfm"), df.fx)
    np.testing.assert_array_equal(read_pfm(tmp_path / "o" / "toy_fy.pfm"), df.fy)
    manifest = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert manifest["options"]["normalize"] == "none" and manifest["seed"] == 0


def test_gen_supervision_degenerate_and_deterministic(tmp_path, capsys):
    d = tmp_path / "masks"
    d.mkdir()
    Image.fromarray(np.zeros((4, 4), np.uint8)).save(d / "blank.png")
    (d / "broken.png").write_bytes(b"junk")
    assert run("gen-supervision", "--mask", d, "--out", tmp_path / "a") == 1
    err = capsys.readouterr().err
    assert "blank.png: constant mask" in err and "broken.png" in err
    assert not read_pfm(tmp_path / "a" / "blank_sdm.pfm").any()
    run("gen-supervision", "--mask", d, "--out", tmp_path / "b")
    a, b = snapshot(tmp_path / "a"), snapshot(tmp_path / "b")
    a.pop("manifest.json"), b.pop("manifest.json")
    assert a == b


def test_gen_supervision_missing_input(tmp_path):
    assert run("gen-supervision", "--mask", tmp_path / "nope.png", "--out", tmp_path / "o") == 1


# -- eval ----------------------------------------------------------------------------


def test_eval_perfect_and_inverted(tmp_path):
    _, gt = write_toy_set(tmp_path)
    assert run("eval", "--pred", gt, "--gt", gt, "--out", tmp_path / "r" / "report.csv") == 0
    rows = (tmp_path / "r" / "report.csv").read_text().splitlines()
    assert rows[-1] == "mean,1.000000,1.000000,0.000000," + rows[-1].split(",")[4] + ",1.000000,1.000000"
    assert (tmp_path / "r" / "pr.csv").read_text().count("\n") == 257
    assert (tmp_path / "r" / "pr.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    assert json.loads((tmp_path / "r" / "report.manifest.json").read_text())["constants"]["beta2"] == 0.3

    inv = tmp_path / "inv"
    inv.mkdir()
    for p in sorted(gt.iterdir()):
        Image.fromarray(255 - np.asarray(Image.open(p))).save(inv / p.name)
    assert run("eval", "--pred", inv, "--gt", gt, "--out", tmp_path / "i.csv", "--pr", tmp_path / "ipr.csv") == 0
    mean = (tmp_path / "i.csv").read_text().splitlines()[-1].split(",")
    assert float(mean[3]) == 1.0


def test_eval_missing_gt_is_named(tmp_path, capsys):
    pred, gt = write_toy_set(tmp_path)
    (gt / "c_bar.png").unlink()
    assert run("eval", "--pred", pred, "--gt", gt, "--out", tmp_path / "r.csv") == 1
    assert "c_bar" in capsys.readouterr().err


def test_eval_golden_is_byte_stable(tmp_path):
    pred, gt = write_toy_set(tmp_path)
    run("eval", "--pred", pred, "--gt", gt, "--out", tmp_path / "a.csv", "--pr", tmp_path / "apr.csv")
    run("eval", "--pred", pred, "--gt", gt, "--out", tmp_path / "b.csv", "--pr", tmp_path / "bpr.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert (tmp_path / "apr.png").read_bytes() == (tmp_path / "bpr.png").read_bytes()


# -- forward -------------------------------------------------------------------------


def test_forward_outputs(tmp_path, pair_files):
    rgb, th, _ = pair_files
    assert run("forward", "--rgb", rgb, "--thermal", th, "--out", tmp_path / "a", "--seed", 4) == 0
    sal = np.asarray(Image.open(tmp_path / "a" / "saliency.png"))
    assert sal.shape == (96, 96)
    sdm = read_pfm(tmp_path / "a" / "sdm.pfm")
    assert sdm.shape == (96, 96) and np.abs(sdm).max() < 1
    assert read_pfm(tmp_path / "a" / "fx.pfm").shape == (96, 96)
    run("forward", "--rgb", rgb, "--thermal", th, "--out", tmp_path / "b", "--seed", 4)
    a, b = snapshot(tmp_path / "a"), snapshot(tmp_path / "b")
    a.pop("manifest.json"), b.pop("manifest.json")
    assert a == b


def test_forward_dry_run_toy(tmp_path, capsys):
    assert run("forward", "--dry-run", "--out", tmp_path / "d") == 0
    out = capsys.readouterr().out
    assert "MISMATCH" not in out and "saliency,96x96x1,96x96x1,ok" in out


def test_forward_needs_inputs(tmp_path):
    assert run("forward", "--out", tmp_path / "x") == 1


def test_forward_rejects_unknown_config_key(tmp_path, pair_files):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[net]\nwidth = 3\n")
    rgb, th, _ = pair_files
    assert run("forward", "--rgb", rgb, "--thermal", th, "--out", tmp_path / "o", "--config", cfg) == 1


# -- grad-check ------------------------------------------------------------------


def test_grad_check_passes_and_lists_operations(capsys):
    assert run("grad-check", "--seed", 1, "--instances", 2) == 0
    out = capsys.readouterr().out
    for name in ("conv3x3", "grid_sample", "loss df", "loss smoothness", "loss sdm", "softmax"):
        assert name in out
    assert "FAIL" not in out


def test_grad_check_injected_bug_fails(capsys):
    assert run("grad-check", "--inject-bug", "--instances", 1) == 2
    assert "FAIL" in capsys.readouterr().out


# -- train-toy -------------------------------------------------------------------


def test_train_toy_outputs_and_zero_lambdas(tmp_path, pair_files):
    rgb, th, mask = pair_files
    code = run("train-toy", "--rgb", rgb, "--thermal", th, "--mask", mask, "--steps", 2, "--lambda1", 0, "--lambda2", 0, "--out", tmp_path / "t", "--quiet")
    assert code == 0
    lines = (tmp_path / "t" / "loss.csv").read_text().splitlines()
    assert lines[0] == "step,l_prl,l_sal,l_sdm,l_df,mae" and len(lines) == 4
    for row in lines[1:]:
        cells = row.split(",")
        assert cells[1] == cells[2]
    for name in ("loss.png", "saliency.png", "sdm.pfm", "fx.pfm", "fy.pfm", "checkpoint.prlt", "checkpoint.prlt.manifest", "manifest.json"):
        assert (tmp_path / "t" / name).exists(), name
    manifest = json.loads((tmp_path / "t" / "manifest.json").read_text())
    assert manifest["constants"]["lambda1"] == 0.0


def test_train_toy_checkpoint_loads_in_forward(tmp_path, pair_files):
    rgb, th, _ = pair_files
    run("train-toy", "--synthetic", "--steps", 1, "--out", tmp_path / "t", "--quiet")
    assert run("forward", "--rgb", rgb, "--thermal", th, "--ckpt", tmp_path / "t" / "checkpoint.prlt", "--out", tmp_path / "f") == 0


def test_train_toy_k_sweep(tmp_path):
    assert run("train-toy", "--synthetic", "--steps", 1, "--sweep", "K", "--values", 0, 2, "--out", tmp_path / "s", "--quiet") == 0
    rows = (tmp_path / "s" / "sweep_K.csv").read_text().splitlines()
    assert rows[0].startswith("K,") and [r.split(",")[0] for r in rows[1:]] == ["0", "2"]
    assert (tmp_path / "s" / "sweep_K.png").exists()


def test_train_toy_partial_inputs_rejected(tmp_path, pair_files):
    rgb, _, _ = pair_files
    assert run("train-toy", "--rgb", rgb, "--steps", 1, "--out", tmp_path / "t") == 1


def test_seed_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("PRL_SEED", "17")
    assert run("train-toy", "--synthetic", "--steps", 0, "--out", tmp_path / "t", "--quiet") == 0
    assert json.loads((tmp_path / "t" / "manifest.json").read_text())["seed"] == 17


def test_config_file_sets_constants(tmp_path):
    cfg = tmp_path / "run.ini"
    cfg.write_text("[net]\nfrdf_iterations = 3\n[loss]\nlambda2 = 0.5\n")
    assert run("train-toy", "--synthetic", "--steps", 0, "--config", cfg, "--out", tmp_path / "t", "--quiet") == 0
    c = json.loads((tmp_path / "t" / "manifest.json").read_text())["constants"]
    assert c["frdf_iterations"] == 3 and c["lambda2"] == 0.5 and c["lambda1"] == 1.0
