"""Brute-force reference implementations of the evaluation metrics.

Everything here is deliberately written as plain Python loops over lists so
the vectorized implementations in charnet.evaluation are checked against an
independent computation, not a refactoring of themselves.
"""

import math

import numpy as np

from charnet.dental import DENTITION_CODES

NUM = 80


def brute_confusion(pred, gt):
    tp = fp = fn = tn = 0
    for p, g in zip(pred, gt):
        if p and g:
            tp += 1
        elif p and not g:
            fp += 1
        elif not p and g:
            fn += 1
        else:
            tn += 1
    return tp, fp, fn, tn


def brute_f1(tp, fp, fn):
    denom = 2 * tp + fp + fn
    if denom == 0:
        return 1.0
    return 2.0 * tp / denom


def brute_distances(pred_pos, gt_pos, mask):
    out = []
    for i in range(len(mask)):
        if mask[i]:
            dx = pred_pos[i][0] - gt_pos[i][0]
            dy = pred_pos[i][1] - gt_pos[i][1]
            dz = pred_pos[i][2] - gt_pos[i][2]
            out.append(math.sqrt(dx * dx + dy * dy + dz * dz))
    return out


def brute_mede(pred_pos, gt_pos, mask):
    d = brute_distances(pred_pos, gt_pos, mask)
    if not d:
        return None
    return sum(d) / len(d)


def brute_msr(pred_pos, gt_pos, mask, r):
    d = brute_distances(pred_pos, gt_pos, mask)
    if not d:
        return None
    hits = sum(1 for x in d if x <= r)
    return 100.0 * hits / len(d)


def brute_aggregate(models, r):
    """models: list of (type_code, (tp, fp, fn, tn), [distances]).

    Returns (per_type, macro, micro) where per_type maps code ->
    (n, counts, f1, mede, msr) and macro/micro are (f1, mede, msr).
    """
    per_type = {}
    macro_f1, macro_mede, macro_msr = [], [], []
    for code in DENTITION_CODES:
        group = [m for m in models if m[0] == code]
        if not group:
            per_type[code] = (0, (0, 0, 0, 0), None, None, None)
            continue
        tp = sum(m[1][0] for m in group)
        fp = sum(m[1][1] for m in group)
        fn = sum(m[1][2] for m in group)
        tn = sum(m[1][3] for m in group)
        d = [x for m in group for x in m[2]]
        score = brute_f1(tp, fp, fn)
        if d:
            m_ = sum(d) / len(d)
            s_ = 100.0 * sum(1 for x in d if x <= r) / len(d)
            macro_mede.append(m_)
            macro_msr.append(s_)
        else:
            m_ = s_ = None
        per_type[code] = (len(group), (tp, fp, fn, tn), score, m_, s_)
        macro_f1.append(score)

    def mean(xs):
        return sum(xs) / len(xs) if xs else None

    macro = (mean(macro_f1), mean(macro_mede), mean(macro_msr))

    if models:
        tp = sum(m[1][0] for m in models)
        fp = sum(m[1][1] for m in models)
        fn = sum(m[1][2] for m in models)
        tn = sum(m[1][3] for m in models)
        d = [x for m in models for x in m[2]]
        micro_mede = sum(d) / len(d) if d else None
        micro_msr = 100.0 * sum(1 for x in d if x <= r) / len(d) if d else None
        micro = (brute_f1(tp, fp, fn), micro_mede, micro_msr)
    else:
        micro = (None, None, None)
    return per_type, macro, micro


def random_flag_scenario(rng):
    """Random 80-landmark flags plus positions with exact-boundary rows.

    A few true positives are placed exactly r=1 away along a coordinate
    axis, so the inclusive boundary of the success ratio is exercised on
    every scenario, not just by luck.
    """
    gt = rng.random(NUM) < rng.uniform(0.2, 0.95)
    pred = np.where(rng.random(NUM) < 0.8, gt, ~gt)
    gt_pos = rng.uniform(-30, 30, size=(NUM, 3))
    pred_pos = gt_pos + rng.normal(0.0, 1.0, size=(NUM, 3))
    tp_idx = np.flatnonzero(pred & gt)
    for i in tp_idx[: max(1, len(tp_idx) // 8)]:
        axis = rng.integers(3)
        offset = np.zeros(3)
        offset[axis] = 1.0
        pred_pos[i] = gt_pos[i] + offset
    return pred.tolist(), gt.tolist(), pred_pos, gt_pos


def random_aggregate_scenario(rng, n_models):
    models = []
    for _ in range(n_models):
        code = DENTITION_CODES[rng.integers(len(DENTITION_CODES))]
        pred, gt, pred_pos, gt_pos = random_flag_scenario(rng)
        counts = brute_confusion(pred, gt)
        mask = [p and g for p, g in zip(pred, gt)]
        d = brute_distances(pred_pos, gt_pos, mask)
        models.append((code, counts, d))
    return models
