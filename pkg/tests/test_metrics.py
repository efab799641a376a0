from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from PIL import Image

from prlsod.metrics import (
    PairingError,
    adaptive_f,
    centroid_split,
    e_measure,
    evaluate_dir,
    evaluate_pair,
    f_measure,
    mae,
    pr_curve,
    s_measure,
    s_object,
    s_region,
)
from toyset import write_toy_set

GOLDEN = Path(__file__).parent / "data" / "golden_report.csv"


def mixed_gt(gen, shape=(16, 16)):
    while True:
        g = gen.random(shape) < 0.4
        if g.any() and not g.all():
            return g


def pr_loop(pred, gt):
    P, R = [], []
    for t in range(256):
        tp = fp = fn = 0
        for p, g in zip(pred.ravel(), gt.ravel()):
            hit = p >= t / 255
            tp += hit and g
            fp += hit and not g
            fn += (not hit) and g
        P.append(tp / (tp + fp) if tp + fp else 1.0)
        R.append(tp / (tp + fn) if tp + fn else 1.0)
    return np.array(P), np.array(R)


# -- P-R and F ------------------------------------------------------------------------


def test_pr_curve_matches_loop_oracle_exactly(gen):
    for k in range(10):
        pred = gen.random((16, 16)) if k % 2 else gen.integers(0, 256, (16, 16)) / 255.0
        gt = gen.random((16, 16)) < 0.4
        P, R = pr_curve(pred, gt)
        Po, Ro = pr_loop(pred, gt)
        np.testing.assert_array_equal(P, Po)
        np.testing.assert_array_equal(R, Ro)


def test_pr_curve_examples():
    gt = np.zeros((4, 4), dtype=bool)
    gt[:2] = True
    P, R = pr_curve(gt.astype(float), gt)
    assert len(P) == len(R) == 256
    assert np.all(P[1:] == 1) and np.all(R[1:] == 1)
    P, R = pr_curve(np.ones((4, 4)), gt)
    assert np.all(R == 1) and np.all(P == 0.5)
    P, R = pr_curve(np.zeros((4, 4)), np.zeros((4, 4), dtype=bool))
    assert P[255] == 1.0 and R[255] == 1.0


def test_f_measure_examples():
    assert f_measure(0.8, 0.8) == pytest.approx(0.8)
    assert f_measure(1.0, 0.0) == 0.0
    assert f_measure(0.9, 0.6) == pytest.approx(0.702 / 0.87)
    assert f_measure(0.0, 0.0) == 0.0


@settings(max_examples=50)
@given(st.floats(0.0, 1.0), st.floats(0.01, 5.0))
def test_f_equals_p_when_p_equals_r(p, beta2):
    assert f_measure(p, p, beta2) == pytest.approx(p, abs=1e-12)


def test_adaptive_f_threshold_rule():
    gt = np.zeros((2, 2), dtype=bool)
    gt[0, 0] = True
    pred = np.array([[0.9, 0.1], [0.1, 0.1]])  # mean 0.3, threshold 0.6: only (0, 0) is on
    assert adaptive_f(pred, gt) == 1.0


# -- MAE --------------------------------------------------------------------------------


def test_mae_examples():
    g = np.zeros((4, 4), dtype=bool)
    assert mae(g.astype(float), g) == 0.0
    assert mae(np.ones((4, 4)), g) == 1.0
    assert mae(np.full((4, 4), 0.25), g) == 0.25


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (6, 7), elements=st.floats(0, 1)), arrays(np.bool_, (6, 7)))
def test_mae_complement_symmetry(p, g):
    assert mae(p, g) == pytest.approx(mae(1 - p, ~g), abs=1e-12)


# -- S-measure --------------------------------------------------------------------------


def test_s_measure_examples(gen):
    g = np.zeros((20, 20), dtype=bool)
    g[5:12, 4:15] = True
    assert s_measure(g.astype(float), g) == pytest.approx(1.0, abs=1e-12)
    assert s_measure(1.0 - g, g) < 0.05
    p = gen.random((20, 20))
    assert s_measure(p, g, 0.5) == pytest.approx(0.5 * s_object(p, g) + 0.5 * s_region(p, g))


def test_s_measure_degenerate_rules():
    empty = np.zeros((5, 5), dtype=bool)
    assert s_measure(np.full((5, 5), 0.2), empty) == pytest.approx(0.8)
    assert s_measure(np.full((5, 5), 0.2), ~empty) == pytest.approx(0.2)


def test_s_object_matches_direct_formula(gen):
    g = mixed_gt(gen)
    p = gen.random(g.shape)
    eps = np.finfo(float).eps

    def score(v):
        return 2 * v.mean() / (v.mean() ** 2 + 1 + v.std(ddof=1) + eps)

    u = g.mean()
    want = u * score(p[g]) + (1 - u) * score(1 - p[~g])
    assert s_object(p, g) == pytest.approx(want, abs=1e-14)


def test_centroid_split():
    g = np.zeros((7, 9), dtype=bool)
    g[2, 3] = g[4, 5] = True
    assert centroid_split(g) == (4, 5)
    assert centroid_split(np.zeros((6, 6), dtype=bool)) == (3, 3)


def test_s_region_handles_edge_centroid():
    g = np.zeros((6, 6), dtype=bool)
    g[:, 5] = True  # centroid in the last column: right-hand blocks are empty
    p = g.astype(float)
    assert 0.0 <= s_region(p, g) <= 1.0 + 1e-12
    assert s_measure(p, g) == pytest.approx(1.0, abs=1e-9)


# -- E-measure --------------------------------------------------------------------------


def test_e_measure_examples():
    g = np.zeros((10, 10), dtype=bool)
    g[:, :5] = True
    assert e_measure(g.astype(float), g) == pytest.approx(1.0, abs=1e-12)
    assert e_measure(1.0 - g, g) == pytest.approx(0.0, abs=1e-12)
    assert e_measure(np.full((10, 10), g.mean()), g) == pytest.approx(0.25)


def test_e_measure_degenerate_rules():
    empty = np.zeros((4, 4), dtype=bool)
    p = np.zeros((4, 4))
    p[0, 0] = 1.0  # threshold 2 * mean = 0.125: one foreground pixel
    assert e_measure(p, empty) == pytest.approx(15 / 16)
    assert e_measure(p, ~empty) == pytest.approx(1 / 16)


def test_e_measure_matches_direct_formula(gen):
    g = mixed_gt(gen)
    p = gen.random(g.shape)
    b = (p >= min(2 * p.mean(), 1)).astype(float)
    A, B = b - b.mean(), g - g.mean()
    phi = 2 * A * B / (A * A + B * B + np.finfo(float).eps)
    assert e_measure(p, g) == pytest.approx(((1 + phi) ** 2 / 4).sum() / g.size, abs=1e-14)


# -- range and purity ------------------------------------------------------------------


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.integers(2, 12), st.integers(2, 12))
def test_all_measures_in_unit_interval(seed, h, w):
    gen = np.random.default_rng(seed)
    p = gen.random((h, w))
    g = gen.random((h, w)) < gen.uniform(0, 1)
    rec = evaluate_pair("x", p, g)
    for v in rec.values():
        assert 0.0 <= v <= 1.0
    assert np.all((rec.precision >= 0) & (rec.precision <= 1))
    assert rec.s_measure == evaluate_pair("x", p, g).s_measure


def test_shape_and_binary_checks():
    with pytest.raises(ValueError):
        mae(np.zeros((2, 2)), np.zeros((2, 3)))
    with pytest.raises(ValueError):
        s_measure(np.zeros((2, 2)), np.full((2, 2), 0.5))


# -- directory evaluation --------------------------------------------------------------


def test_golden_report(tmp_path):
    pred, gt = write_toy_set(tmp_path)
    report = evaluate_dir(pred, gt)
    assert report.report_csv() == GOLDEN.read_text()
    pr = report.pr_csv().splitlines()
    assert pr[0] == "threshold,precision,recall" and len(pr) == 257


def test_single_perfect_pair(tmp_path):
    (tmp_path / "p").mkdir()
    (tmp_path / "g").mkdir()
    g = np.zeros((8, 8), dtype=np.uint8)
    g[2:6, 3:7] = 255
    Image.fromarray(g).save(tmp_path / "p" / "one.png")
    Image.fromarray(g).save(tmp_path / "g" / "one.png")
    agg = evaluate_dir(tmp_path / "p", tmp_path / "g").aggregate()
    s, e, m, mean_f, max_f, ada = agg
    assert m == 0.0
    for v in (s, e, max_f, ada):
        assert v == pytest.approx(1.0, abs=1e-12)


def test_pairing_errors(tmp_path):
    pred, gt = write_toy_set(tmp_path)
    other = tmp_path / "other"
    other.mkdir()
    Image.fromarray(np.zeros((4, 4), np.uint8)).save(other / "zzz.png")
    with pytest.raises(PairingError, match="no prediction"):
        evaluate_dir(pred, other)
    (gt / "b_disc.png").unlink()
    with pytest.raises(PairingError, match="b_disc"):
        evaluate_dir(pred, gt)
