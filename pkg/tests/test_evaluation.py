"""Metric definitions checked against brute-force loop implementations."""

import numpy as np
import pytest

from charnet.dental import DENTITION_CODES, DentalAnnotation
from charnet.errors import InputError
from charnet.evaluation import (
    ConfusionCounts,
    ModelEvaluation,
    TimingResult,
    aggregate,
    benchmark_inference,
    confusion,
    evaluate_model,
    f1,
    mede,
    msr,
    report_csv,
    report_text,
    tooth_presence_from_flags,
)
from charnet.network import ArchDescriptor, init_params
from charnet.pointcloud import PointCloud

from metrics_ref import (
    brute_aggregate,
    brute_confusion,
    brute_f1,
    brute_mede,
    brute_msr,
    random_aggregate_scenario,
    random_flag_scenario,
)


def test_confusion_all_present_in_mesh():
    ones = np.ones(80, dtype=bool)
    c = confusion(ones, ones)
    assert (c.tp, c.fp, c.fn, c.tn) == (80, 0, 0, 0)


def test_confusion_all_absent_at_null():
    zeros = np.zeros(80, dtype=bool)
    c = confusion(zeros, zeros)
    assert (c.tp, c.fp, c.fn, c.tn) == (0, 0, 0, 80)


def test_present_landmark_at_null_is_fn():
    gt = np.zeros(80, dtype=bool)
    pred = np.zeros(80, dtype=bool)
    gt[7] = True  # exists, predicted at null
    c = confusion(pred, gt)
    assert c.fn == 1 and c.tp == 0 and c.fp == 0 and c.tn == 79


def test_confusion_rejects_wrong_length():
    with pytest.raises(InputError):
        confusion(np.ones(79, dtype=bool), np.ones(79, dtype=bool))


def test_confusion_counts_validate():
    with pytest.raises(InputError):
        ConfusionCounts(-1, 0, 0, 0)
    with pytest.raises(InputError):
        ConfusionCounts(0.5, 0, 0, 0)


def test_f1_examples():
    assert f1(ConfusionCounts(6, 2, 2, 70)) == pytest.approx(0.75, abs=0)
    assert f1(ConfusionCounts(10, 0, 0, 70)) == 1.0
    assert f1(ConfusionCounts(0, 0, 0, 80)) == 1.0  # all-TN degenerate


def test_f1_scale_invariance():
    base = ConfusionCounts(3, 1, 2, 74)
    for k in (2, 5, 11):
        scaled = ConfusionCounts(3 * k, 1 * k, 2 * k, 74 * k)
        assert f1(scaled) == pytest.approx(f1(base), rel=1e-15)


def test_mede_345_triangle():
    pred = np.array([[0.0, 0.0, 0.0]])
    gt = np.array([[3.0, 4.0, 0.0]])
    assert mede(pred, gt, [True]) == pytest.approx(5.0, abs=1e-15)


def test_mede_mean_of_distances():
    gt = np.zeros((3, 3))
    pred = np.array([[1.0, 0, 0], [0, 2.0, 0], [0, 0, 3.0]])
    assert mede(pred, gt, [True] * 3) == pytest.approx(2.0, abs=1e-15)


def test_mede_empty_tp_is_none():
    assert mede(np.zeros((4, 3)), np.zeros((4, 3)), [False] * 4) is None
    assert msr(np.zeros((4, 3)), np.zeros((4, 3)), [False] * 4) is None


def test_msr_boundary_inclusive():
    gt = np.zeros((3, 3))
    pred = np.array([[0.4, 0, 0], [1.0, 0, 0], [2.0, 0, 0]])
    # the distance exactly at r counts as a success
    assert msr(pred, gt, [True] * 3, radius=1.0) == pytest.approx(100.0 * 2 / 3, abs=1e-12)


def test_msr_all_zero_distances():
    pts = np.random.default_rng(3).uniform(-5, 5, size=(6, 3))
    assert msr(pts, pts.copy(), [True] * 6) == 100.0


def test_msr_monotone_in_radius():
    rng = np.random.default_rng(11)
    gt = rng.uniform(-10, 10, size=(40, 3))
    pred = gt + rng.normal(0, 1.5, size=(40, 3))
    mask = rng.random(40) < 0.7
    mask[0] = True
    values = [msr(pred, gt, mask, radius=r) for r in (0.1, 0.5, 1.0, 2.0, 5.0)]
    assert all(a <= b for a, b in zip(values, values[1:]))


def test_metrics_ignore_non_tp_rows():
    rng = np.random.default_rng(21)
    gt = rng.uniform(-10, 10, size=(12, 3))
    pred = gt + rng.normal(0, 1, size=(12, 3))
    mask = np.array([True, False] * 6)
    m0 = mede(pred, gt, mask)
    s0 = msr(pred, gt, mask)
    # mangle every non-TP row; results must not move
    pred2, gt2 = pred.copy(), gt.copy()
    pred2[~mask] = 1e9
    gt2[~mask] = -1e9
    assert mede(pred2, gt2, mask) == m0
    assert msr(pred2, gt2, mask) == s0


def test_tooth_presence_requires_all_five():
    flags = np.ones(80, dtype=bool)
    flags[5 * 3 + 2] = False  # one landmark of tooth index 4 at null
    teeth = tooth_presence_from_flags(flags)
    assert not teeth[3]
    assert teeth.sum() == 15


def test_brute_force_oracle_200_scenarios():
    rng = np.random.default_rng(2024)
    for _ in range(200):
        pred, gt, pred_pos, gt_pos = random_flag_scenario(rng)
        c = confusion(pred, gt)
        assert (c.tp, c.fp, c.fn, c.tn) == brute_confusion(pred, gt)
        assert f1(c) == pytest.approx(brute_f1(c.tp, c.fp, c.fn), abs=1e-15)
        mask = [p and g for p, g in zip(pred, gt)]
        bm = brute_mede(pred_pos, gt_pos, mask)
        bs = brute_msr(pred_pos, gt_pos, mask, 1.0)
        m = mede(pred_pos, gt_pos, mask)
        s = msr(pred_pos, gt_pos, mask, 1.0)
        if bm is None:
            assert m is None and s is None
        else:
            assert m == pytest.approx(bm, abs=1e-12)
            assert s == pytest.approx(bs, abs=1e-12)


def test_aggregate_matches_brute_force():
    rng = np.random.default_rng(77)
    for _ in range(30):
        models = random_aggregate_scenario(rng, n_models=int(rng.integers(1, 25)))
        evals = [
            ModelEvaluation(f"m{i}", code, ConfusionCounts(*counts), np.array(d))
            for i, (code, counts, d) in enumerate(models)
        ]
        report = aggregate(evals, radius=1.0)
        per_type, macro, micro = brute_aggregate(models, 1.0)
        for row in report.rows:
            n, counts, score, m_, s_ = per_type[row.dentition_type]
            assert row.n_models == n
            assert (row.counts.tp, row.counts.fp, row.counts.fn, row.counts.tn) == counts
            for got, want in ((row.f1, score), (row.mede, m_), (row.msr, s_)):
                if want is None:
                    assert got is None
                else:
                    assert got == pytest.approx(want, abs=1e-12)
        for got, want in (
            (report.macro_f1, macro[0]),
            (report.macro_mede, macro[1]),
            (report.macro_msr, macro[2]),
            (report.micro_f1, micro[0]),
            (report.micro_mede, micro[1]),
            (report.micro_msr, micro[2]),
        ):
            if want is None:
                assert got is None
            else:
                assert got == pytest.approx(want, abs=1e-12)


def test_aggregate_single_type_macro_equals_micro():
    ev = ModelEvaluation("m", "00", ConfusionCounts(70, 3, 4, 3), np.linspace(0.1, 2.0, 70))
    report = aggregate([ev])
    assert report.macro_f1 == report.micro_f1
    assert report.macro_mede == report.micro_mede
    assert report.macro_msr == report.micro_msr


def test_aggregate_balanced_vs_weighted():
    # equal TP counts: macro == micro == 2.0
    a = ModelEvaluation("a", "00", ConfusionCounts(10, 0, 0, 70), np.full(10, 1.0))
    b = ModelEvaluation("b", "10", ConfusionCounts(10, 0, 0, 70), np.full(10, 3.0))
    rep = aggregate([a, b])
    assert rep.macro_mede == pytest.approx(2.0, abs=1e-15)
    assert rep.micro_mede == pytest.approx(2.0, abs=1e-15)
    # 10 vs 90 TPs: macro stays 2.0, micro moves to 2.8
    b90 = ModelEvaluation("b", "10", ConfusionCounts(90, 0, 0, 0), np.full(90, 3.0))
    # 90 TPs over two pooled models of the same type
    rep = aggregate([a, b90])
    assert rep.macro_mede == pytest.approx(2.0, abs=1e-15)
    assert rep.micro_mede == pytest.approx(2.8, abs=1e-12)


def test_aggregate_micro_mede_is_tp_weighted_macro():
    rng = np.random.default_rng(5)
    models = random_aggregate_scenario(rng, n_models=12)
    evals = [
        ModelEvaluation(f"m{i}", code, ConfusionCounts(*counts), np.array(d))
        for i, (code, counts, d) in enumerate(models)
    ]
    rep = aggregate(evals)
    num = den = 0.0
    for row in rep.rows:
        if row.mede is not None:
            num += row.counts.tp * row.mede
            den += row.counts.tp
    assert rep.micro_mede == pytest.approx(num / den, rel=1e-12)


def test_aggregate_flags_no_tp_types():
    ev = ModelEvaluation("m", "04", ConfusionCounts(0, 2, 3, 75), np.array([]))
    rep = aggregate([ev])
    assert rep.no_tp_types == ("04",)
    assert rep.macro_mede is None
    assert rep.macro_f1 == pytest.approx(f1(ConfusionCounts(0, 2, 3, 75)))


def _full_annotation(shift=0.0):
    landmarks = {}
    for t in range(1, 17):
        base = np.array([float(t), 0.0, 0.0])
        landmarks[t] = np.stack([base + [0, g, shift] for g in range(5)])
    return DentalAnnotation(
        model_id="m0",
        patient_id="p0",
        arch="lower",
        presence=(True,) * 16,
        landmarks=landmarks,
        dentition_type="10",
    )


def test_evaluate_model_perfect_prediction():
    ann = _full_annotation()
    pred = np.concatenate([ann.landmarks[t] for t in range(1, 17)])
    ev = evaluate_model(pred, np.ones(80, dtype=bool), ann)
    assert ev.counts.tp == 80 and ev.counts.total == 80
    assert ev.dentition_type == "10"
    assert np.all(ev.tp_distances == 0.0)


def test_evaluate_model_offset_distances():
    ann = _full_annotation()
    pred = np.concatenate([ann.landmarks[t] for t in range(1, 17)]) + [0.0, 0.0, 0.5]
    flags = np.ones(80, dtype=bool)
    flags[:5] = False  # tooth 1 sent to null: 5 FNs, excluded from distances
    ev = evaluate_model(pred, flags, ann)
    assert (ev.counts.tp, ev.counts.fn) == (75, 5)
    assert ev.tp_distances == pytest.approx(np.full(75, 0.5), abs=1e-15)


def test_model_evaluation_validates_distance_count():
    with pytest.raises(InputError):
        ModelEvaluation("m", "00", ConfusionCounts(3, 0, 0, 77), np.array([1.0]))


def test_report_csv_structure():
    ev = ModelEvaluation("m", "00", ConfusionCounts(70, 3, 4, 3), np.linspace(0.2, 1.4, 70))
    text = report_csv(aggregate([ev]))
    lines = text.strip().split("\n")
    assert lines[0] == "dentition_type,models,tp,fp,fn,tn,f1,mede_mm,msr_pct"
    assert len(lines) == 1 + 10 + 2
    assert [ln.split(",")[0] for ln in lines[1:11]] == list(DENTITION_CODES)
    assert lines[-2].startswith("macro,")
    assert lines[-1].startswith("micro,")
    # empty metric fields for types with no models
    assert lines[2].endswith(",,,")


def test_report_text_structure():
    ev = ModelEvaluation("m", "13", ConfusionCounts(60, 5, 5, 10), np.full(60, 0.9))
    text = report_text(aggregate([ev]))
    assert "Macro-avg" in text and "Micro-avg" in text
    for code in DENTITION_CODES:
        assert f"\n{code}" in text or text.startswith(code)


def test_benchmark_single_sample_single_rep():
    desc = ArchDescriptor.toy()
    params = init_params(desc, np.random.default_rng(0))
    cloud = PointCloud(np.random.default_rng(1).uniform(-20, 20, size=(50, 3)))
    result = benchmark_inference(params, [cloud], warmup=1, reps=1)
    assert result.std == 0.0
    assert result.mean > 0.0
    assert result.n_samples == 1 and result.reps == 1


def test_benchmark_rejects_empty_dataset():
    desc = ArchDescriptor.toy()
    params = init_params(desc, np.random.default_rng(0))
    with pytest.raises(InputError):
        benchmark_inference(params, [])


def test_timing_result_format():
    row = TimingResult(0.1234, 0.01, 4, 10).format_row()
    assert "0.1234" in row and "4 samples" in row
