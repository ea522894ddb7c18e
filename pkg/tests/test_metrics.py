import json
import math

import jsonschema
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

import oracles
from rotcatt.losses import (
    REPORT_SCHEMA,
    MetricsReport,
    dsc_metric,
    hausdorff,
    hausdorff_per_class,
    iou_metric,
)


def test_identical_masks_score_one():
    m = np.random.default_rng(0).integers(0, 3, (6, 6))
    assert np.all(dsc_metric(m, m, 3) == 1.0)
    assert np.all(iou_metric(m, m, 3) == 1.0)


def test_half_overlap():
    pred = np.zeros((4, 4), int)
    gt = np.zeros((4, 4), int)
    pred[:, :2] = 1  # columns 0-1
    gt[:, 1:3] = 1  # columns 1-2
    # |P| = |G| = 8, |P & G| = 4, |P | G| = 12
    assert dsc_metric(pred, gt, 2)[1] == 0.5
    assert iou_metric(pred, gt, 2)[1] == pytest.approx(1 / 3)


def test_all_background_prediction():
    gt = np.zeros((4, 4), int)
    gt[1, 1] = 1
    assert dsc_metric(np.zeros_like(gt), gt, 2)[1] == 0.0


def test_absent_class_scores_one():
    m = np.zeros((3, 3), int)
    assert dsc_metric(m, m, 3)[2] == 1.0


def test_label_range_checked():
    with pytest.raises(ValueError):
        dsc_metric(np.array([[3]]), np.array([[0]]), 3)


@given(st.integers(0, 10_000))
@settings(max_examples=30, deadline=None)
def test_relabeling_invariance(seed):
    rng = np.random.default_rng(seed)
    pred, gt = rng.integers(0, 4, (2, 6, 6))
    perm = rng.permutation(4)
    d1, d2 = dsc_metric(pred, gt, 4), dsc_metric(perm[pred], perm[gt], 4)
    assert np.allclose(d2[perm], d1)
    i1, i2 = iou_metric(pred, gt, 4), iou_metric(perm[pred], perm[gt], 4)
    assert np.allclose(i2[perm], i1)


def test_hausdorff_basic():
    a = np.zeros((8, 8), bool)
    assert hausdorff(a | (np.arange(64).reshape(8, 8) == 9), a | (np.arange(64).reshape(8, 8) == 9)) == 0.0
    p, g = np.zeros((5, 5), bool), np.zeros((5, 5), bool)
    p[0, 0] = True
    g[3, 4] = True
    assert hausdorff(p, g) == 5.0
    assert hausdorff(p, g, spacing=(2.0, 1.0)) == pytest.approx(math.sqrt(36 + 16))
    with pytest.raises(ValueError):
        hausdorff(p, np.zeros_like(p))


@given(st.data())
@settings(max_examples=60, deadline=None)
def test_hausdorff_matches_brute_force(data):
    shape = data.draw(st.tuples(st.integers(1, 12), st.integers(1, 12)))
    a = data.draw(hnp.arrays(np.bool_, shape))
    b = data.draw(hnp.arrays(np.bool_, shape))
    if not a.any() or not b.any():
        return
    ref = oracles.hausdorff(np.argwhere(a).tolist(), np.argwhere(b).tolist())
    assert hausdorff(a, b) == ref


def test_hausdorff_per_class_flags():
    pred = np.zeros((4, 4), int)
    gt = np.zeros((4, 4), int)
    gt[0, 0] = 1
    d, flags = hausdorff_per_class(pred, gt, 3, spacing=(1.0, 2.0))
    assert d[1] == pytest.approx(math.sqrt(4**2 + 8**2))
    assert math.isnan(d[2])
    assert len(flags) == 1 and "class 1" in flags[0]


def test_report_serialization():
    rng = np.random.default_rng(0)
    gt = rng.integers(0, 3, (3, 8, 8))
    pred = gt.copy()
    pred[0, :2] = 0
    report = MetricsReport.compute(pred, gt, 3, spacing=(2.0, 1.0, 1.0), loss={"dice": 0.1, "iou": 0.2, "combined": 0.16})
    doc = json.loads(report.to_json())
    jsonschema.validate(doc, REPORT_SCHEMA)
    assert MetricsReport.from_dict(doc) == report
    assert report.macro["dsc"] == pytest.approx(np.mean(report.dsc[1:]))
    lines = report.to_csv().splitlines()
    assert len(lines) == 2 and lines[0].startswith("macro_dsc")
    assert len(lines[0].split(",")) == len(lines[1].split(","))
    assert report.to_json() == MetricsReport.compute(pred, gt, 3, (2.0, 1.0, 1.0), report.loss).to_json()


def test_report_absent_class_null_hd():
    gt = np.zeros((2, 4, 4), int)
    gt[0, 0, 0] = 1
    report = MetricsReport.compute(gt, gt, 3)
    assert report.hd[2] is None and report.hd[1] == 0.0
    jsonschema.validate(json.loads(report.to_json()), REPORT_SCHEMA)
