import itertools

import numpy as np
import pytest

from click3d.metrics import (ClickCurve, MetricsReport, aggregate, instance_ap,
                             iou, iou_at_k, noc, pairwise_iou)


def masks_from_sets(n, *sets):
    out = []
    for s in sets:
        m = np.zeros(n, dtype=bool)
        m[list(s)] = True
        out.append(m)
    return out


# --- IoU ----------------------------------------------------------------

def test_iou_examples():
    a, b = masks_from_sets(6, {1, 2, 3}, {2, 3, 4})
    assert iou(a, a) == 1.0
    assert iou(a, b) == 0.5          # hand count: 2 / 4
    c, d = masks_from_sets(6, {0}, {5})
    assert iou(c, d) == 0.0
    e = np.zeros(6, dtype=bool)
    assert iou(e, e) == 1.0           # both empty
    with pytest.raises(ValueError):
        iou(a, np.zeros(5, dtype=bool))


def test_iou_symmetric(rng):
    a = rng.random(40) < 0.5
    b = rng.random(40) < 0.5
    assert iou(a, b) == iou(b, a)


# --- NoC / IoU@k --------------------------------------------------------

def test_noc_examples():
    assert noc(ClickCurve((0.95,)), 90) == 1
    assert noc(ClickCurve((0.5, 0.85, 0.92)), 90) == 3
    assert noc(ClickCurve(tuple([0.5] * 20)), 90) == 20
    with pytest.raises(ValueError):
        noc(ClickCurve((0.5,)), 0)


def test_noc_monotone_in_quality(rng):
    curve = ClickCurve(tuple(np.sort(rng.random(12))))
    assert noc(curve, 90) >= noc(curve, 80)
    improved = ClickCurve(tuple(min(1.0, v + 0.05) for v in curve.ious))
    assert noc(improved, 85) <= noc(curve, 85)


def test_iou_at_k_examples():
    assert iou_at_k([ClickCurve((0.6, 0.8))], 2) == 0.8
    assert iou_at_k([ClickCurve((0.6,)), ClickCurve((1.0,))], 1) == pytest.approx(0.8)
    # hold-last beyond a finished curve
    assert iou_at_k([ClickCurve((0.6, 0.9))], 10) == 0.9
    with pytest.raises(ValueError):
        iou_at_k([], 1)


# --- AP -----------------------------------------------------------------

def oracle_ap(predictions, gts, threshold):
    """Exhaustive AP: the protocol evaluated with plain-python set math.

    Walks predictions in confidence order; each takes the unmatched gt of
    highest IoU (exhaustive scan over all remaining gts, all tie orders
    collapse by first index), then integrates interpolated precision over
    every achieved recall level.
    """
    order = sorted(range(len(predictions)),
                   key=lambda i: (-predictions[i][1], i))
    remaining = set(range(len(gts)))
    flags = []
    for pi in order:
        pm = set(np.flatnonzero(predictions[pi][0]))
        best, best_iou = None, -1.0
        for gi in sorted(remaining):
            gm = set(np.flatnonzero(gts[gi]))
            union = len(pm | gm)
            v = 1.0 if union == 0 else len(pm & gm) / union
            if v > best_iou:
                best, best_iou = gi, v
        if best is not None and best_iou >= threshold:
            remaining.discard(best)
            flags.append(True)
        else:
            flags.append(False)
    ap = 0.0
    tp = 0
    for rank, flag in enumerate(flags, start=1):
        if not flag:
            continue
        tp += 1
        # interpolated precision: best precision at any rank >= this one
        best_prec = 0.0
        t = 0
        for r2, f2 in enumerate(flags, start=1):
            t += f2
            if r2 >= rank:
                best_prec = max(best_prec, t / r2)
        ap += best_prec / len(gts)
    return ap


def test_ap_perfect_match():
    (g,) = masks_from_sets(10, {1, 2, 3})
    res = instance_ap([(g.copy(), 1.0)], [g])
    assert res == {"ap": 1.0, "ap50": 1.0, "ap25": 1.0}


def test_ap_threshold_straddling():
    # prediction overlapping gt at IoU 0.4: counts at 0.25, not at 0.5
    g, p = masks_from_sets(10, {0, 1, 2, 3, 4}, {2, 3, 4, 5, 6})
    assert iou(p, g) == pytest.approx(0.42857142857)
    res = instance_ap([(p, 1.0)], [g])
    assert res["ap50"] == 0.0
    assert res["ap25"] == 1.0
    assert res["ap25"] == oracle_ap([(p, 1.0)], [g], 0.25)


def test_ap_spurious_low_confidence_fp():
    g, spurious = masks_from_sets(12, {0, 1, 2}, {8, 9})
    preds = [(g.copy(), 0.9), (spurious, 0.1)]
    res = instance_ap(preds, [g])
    assert res["ap50"] == 1.0
    assert res["ap50"] == oracle_ap(preds, [g], 0.5)


def test_ap_zero_gts_absent():
    (p,) = masks_from_sets(5, {0})
    assert instance_ap([(p, 1.0)], []) == {"ap": None, "ap50": None, "ap25": None}


def random_fixture(rng, n_points=40):
    """Noisy per-gt predictions: each prediction perturbs one gt mask."""
    n_gt = rng.integers(1, 5)
    gts = []
    used = np.zeros(n_points, dtype=bool)
    for _ in range(n_gt):
        size = rng.integers(3, 9)
        free = np.flatnonzero(~used)
        if len(free) < size:
            break
        pick = rng.choice(free, size=size, replace=False)
        m = np.zeros(n_points, dtype=bool)
        m[pick] = True
        used |= m
        gts.append(m)
    preds = []
    for g in gts:
        if rng.random() < 0.2:
            continue  # missed instance
        p = g.copy()
        flips = rng.choice(n_points, size=rng.integers(0, 5), replace=False)
        p[flips] = ~p[flips]
        preds.append((p, float(rng.random())))
    if rng.random() < 0.3:
        extra = np.zeros(n_points, dtype=bool)
        extra[rng.choice(n_points, size=3, replace=False)] = True
        preds.append((extra, float(rng.random())))
    return preds, gts


def test_ap_matches_exhaustive_oracle(rng):
    for _ in range(120):
        preds, gts = random_fixture(rng)
        if not gts:
            continue
        res = instance_ap(preds, gts)
        for thr, key in ((0.5, "ap50"), (0.25, "ap25")):
            assert res[key] == pytest.approx(oracle_ap(preds, gts, thr), abs=1e-9)


def test_ap_threshold_monotonicity(rng):
    for _ in range(300):
        preds, gts = random_fixture(rng)
        if not gts:
            continue
        res = instance_ap(preds, gts)
        assert res["ap"] <= res["ap50"] + 1e-9
        assert res["ap50"] <= res["ap25"] + 1e-9


def test_pairwise_iou_shape():
    a, b, c = masks_from_sets(8, {0, 1}, {1, 2}, {5})
    m = pairwise_iou([a, b], [c])
    assert m.shape == (2, 1) and m[0, 0] == 0.0


# --- aggregation --------------------------------------------------------

def test_aggregate_single_instance():
    curve = ClickCurve((0.7, 0.91), instance_id=1, scene_id="s")
    rep = aggregate([curve], ks=(1, 2, 3))
    assert rep.noc[90] == 2
    assert rep.iou_at_k[3] == 0.91
    assert rep.n_instances == 1


def test_aggregate_mean_noc():
    a = ClickCurve(tuple([0.5] * 3 + [0.95]))
    b = ClickCurve(tuple([0.1] * 20))
    rep = aggregate([a, b], ks=(1,))
    assert rep.noc[90] == pytest.approx(12.0)  # mean of 4 and 20


def test_aggregate_per_class():
    a = ClickCurve((0.95,), class_id=1)
    b = ClickCurve((0.5, 0.95), class_id=2)
    rep = aggregate([a, b], ks=(1, 2), per_class=True)
    assert rep.per_class[1].noc[90] == 1
    assert rep.per_class[2].noc[90] == 2


def test_report_serialization():
    rep = aggregate([ClickCurve((0.95,))], ks=(1,))
    doc = rep.to_dict()
    assert doc["noc"]["90"] == 1.0
    csv_text = rep.to_csv()
    assert "noc@90" in csv_text and csv_text.startswith("class,metric,value")
    assert rep.to_json().endswith("\n")
