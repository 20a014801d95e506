import json
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from salbci.distributions import BASIC_EMOTION, VALENCE, CategoricalDistribution, LabelSpace, uniform
from salbci.errors import Empty, KeyMismatch, LengthMismatch, MissingCondition, SpaceMismatch, ZeroVariance
from salbci.metrics import (
    classify_closeness,
    closeness_analysis,
    closeness_to_csv,
    evaluate,
    format_table,
    kld,
    mse_rmse,
    pearson,
    plot_closeness,
)

AB = LabelSpace(("A", "B"))


def D(*p, space=AB):
    return CategoricalDistribution(space, p)


def test_kld_examples():
    p = D(0.3, 0.7)
    assert kld(p, p) <= 1e-12
    assert kld(D(1.0, 0.0), D(0.5, 0.5), 1e-6) == pytest.approx(math.log(2), abs=1e-3)
    a, b = D(0.8, 0.2), D(0.2, 0.8)
    assert kld(a, D(0.5, 0.5)) != kld(D(0.5, 0.5), a)
    # closed form without smoothing: sum p ln(p/q)
    assert kld(a, D(0.5, 0.5), 0.0) == pytest.approx(0.8 * math.log(1.6) + 0.2 * math.log(0.4), abs=1e-14)
    with pytest.raises(SpaceMismatch):
        kld(a, uniform(BASIC_EMOTION))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=7, max_size=7), st.lists(st.floats(0, 1), min_size=7, max_size=7))
def test_kld_non_negative(p, q):
    if sum(p) == 0 or sum(q) == 0:
        return
    a = CategoricalDistribution(BASIC_EMOTION, np.array(p) / sum(p))
    b = CategoricalDistribution(BASIC_EMOTION, np.array(q) / sum(q))
    assert kld(a, b) >= 0
    assert kld(a, a) <= 1e-12


def test_mse_rmse_examples():
    assert mse_rmse([1, 2, 3], [1, 2, 3]) == (0.0, 0.0)
    mse, rmse = mse_rmse([1, 2], [2, 4])
    assert mse == 2.5 and rmse == pytest.approx(1.5811, abs=1e-4)
    mse, rmse = mse_rmse([1.5, 2.5, -1.0], [1.0, 2.0, -1.5])
    assert mse == pytest.approx(0.25) and rmse == pytest.approx(0.5)
    with pytest.raises(LengthMismatch):
        mse_rmse([1], [1, 2])
    with pytest.raises(Empty):
        mse_rmse([], [])


def _pearson_oracle(x, y):
    # exact rational product-moment correlation squared, sign kept
    x = [Fraction(v) for v in x]
    y = [Fraction(v) for v in y]
    mx, my = sum(x) / len(x), sum(y) / len(y)
    sxy = sum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = sum((a - mx) ** 2 for a in x)
    syy = sum((b - my) ** 2 for b in y)
    return float(sxy) / math.sqrt(float(sxx * syy))


def test_pearson_examples():
    x = [1.0, 2.0, 3.0, 4.0, 7.5]
    assert pearson(x, [2 * v + 3 for v in x]) == pytest.approx(1.0, abs=1e-12)
    assert pearson(x, [-v for v in x]) == pytest.approx(-1.0, abs=1e-12)
    assert _pearson_oracle([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8, abs=1e-15)
    assert pearson([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8, abs=1e-12)
    with pytest.raises(ZeroVariance):
        pearson([1, 1, 1], [1, 2, 3])
    with pytest.raises(LengthMismatch):
        pearson([1, 2], [1, 2, 3])


def test_evaluate_identical_predictions():
    truths = {
        "a": D(0.2, 0.1, 0.3, 0.3, 0.1, space=VALENCE),
        "b": D(0.0, 0.0, 0.1, 0.4, 0.5, space=VALENCE),
        "c": D(0.6, 0.2, 0.2, 0.0, 0.0, space=VALENCE),
    }
    rep = evaluate(truths, truths, "valence")
    assert rep.aggregate["mse"] == 0 and rep.aggregate["rmse"] == 0
    assert rep.aggregate["pearson"] == pytest.approx(1.0)
    be = {k: CategoricalDistribution(BASIC_EMOTION, np.r_[v.probs, 0.0, 0.0]) for k, v in truths.items()}
    rep = evaluate(be, be, "basic_emotion")
    assert rep.aggregate["kld"] <= 1e-12 and rep.aggregate["mse"] == 0 and rep.aggregate["rmse"] == 0
    assert rep.aggregate["pearson"] == pytest.approx(1.0)


def _be(*p):
    return CategoricalDistribution(BASIC_EMOTION, p)


def test_evaluate_two_video_hand_recomputation():
    truths = {"x": _be(0.5, 0, 0, 0.5, 0, 0, 0), "y": _be(0, 0, 0, 1.0, 0, 0, 0)}
    preds = {"x": _be(0.25, 0, 0, 0.75, 0, 0, 0), "y": _be(0, 0, 0, 0.5, 0.5, 0, 0)}
    rep = evaluate(preds, truths, "basic_emotion", epsilon=0.0)
    # spreadsheet-style recomputation
    kx = 0.5 * math.log(0.5 / 0.25) + 0.5 * math.log(0.5 / 0.75)
    ky = 1.0 * math.log(1.0 / 0.5)
    mse_x = (0.25**2 + 0.25**2) / 7
    mse_y = (0.5**2 + 0.5**2) / 7
    agg = rep.aggregate
    assert agg["kld"] == pytest.approx((kx + ky) / 2, abs=1e-12)
    assert agg["mse"] == pytest.approx((mse_x + mse_y) / 2, abs=1e-15)
    assert agg["rmse"] == pytest.approx((math.sqrt(mse_x) + math.sqrt(mse_y)) / 2, abs=1e-15)
    pooled_p = [0.25, 0, 0, 0.75, 0, 0, 0, 0, 0, 0, 0.5, 0.5, 0, 0]
    pooled_t = [0.5, 0, 0, 0.5, 0, 0, 0, 0, 0, 0, 1.0, 0, 0, 0]
    assert agg["pearson"] == pytest.approx(_pearson_oracle(pooled_p, pooled_t), abs=1e-12)
    assert [row["video_id"] for row in rep.per_video] == ["x", "y"]
    assert rep.metadata["kld_direction"] == "truth||prediction"


def test_evaluate_valence_hand_recomputation():
    truths = {"a": D(0, 0, 1, 0, 0, space=VALENCE), "b": D(0, 0, 0, 0, 1, space=VALENCE), "c": D(1, 0, 0, 0, 0, space=VALENCE)}
    preds = {"a": D(0, 0.5, 0.5, 0, 0, space=VALENCE), "b": D(0, 0, 0, 1, 0, space=VALENCE), "c": D(0.5, 0.5, 0, 0, 0, space=VALENCE)}
    rep = evaluate(preds, truths, "valence")
    pv, tv = [2.5, 4.0, 1.5], [3.0, 5.0, 1.0]
    assert rep.aggregate["mse"] == pytest.approx((0.25 + 1 + 0.25) / 3)
    assert rep.aggregate["rmse"] == pytest.approx(math.sqrt(0.5))
    assert rep.aggregate["pearson"] == pytest.approx(_pearson_oracle(pv, tv))


def test_evaluate_per_video_pearson_mode_and_errors():
    truths = {"x": _be(0.5, 0, 0, 0.5, 0, 0, 0), "y": _be(0, 0, 0, 1.0, 0, 0, 0)}
    rep = evaluate(truths, truths, "basic_emotion", pearson_mode="per_video")
    assert rep.aggregate["pearson"] == pytest.approx(1.0)
    assert rep.config_fingerprint != evaluate(truths, truths, "basic_emotion").config_fingerprint
    with pytest.raises(KeyMismatch):
        evaluate({"x": truths["x"]}, truths, "basic_emotion")
    with pytest.raises(SpaceMismatch):
        evaluate(truths, truths, "valence")


def test_evaluate_permutation_invariant():
    rng = np.random.default_rng(0)
    ids = [f"v{i}" for i in range(30)]
    preds = {v: CategoricalDistribution(BASIC_EMOTION, rng.dirichlet(np.ones(7))) for v in ids}
    truths = {v: CategoricalDistribution(BASIC_EMOTION, rng.dirichlet(np.ones(7))) for v in ids}
    shuffled = list(ids)
    rng.shuffle(shuffled)
    a = evaluate(preds, truths, "basic_emotion")
    b = evaluate({v: preds[v] for v in shuffled}, {v: truths[v] for v in reversed(shuffled)}, "basic_emotion")
    assert a.to_json() == b.to_json()


def test_rmse_squared_is_mse():
    rng = np.random.default_rng(1)
    for _ in range(100):
        x, y = rng.normal(size=20), rng.normal(size=20)
        mse, rmse = mse_rmse(x, y)
        assert abs(rmse**2 - mse) <= 1e-12


def test_pearson_affine_invariance():
    rng = np.random.default_rng(2)
    for _ in range(100):
        x, y = rng.normal(size=30), rng.normal(size=30)
        a, b = rng.uniform(0.1, 10), rng.normal()
        assert abs(pearson(a * x + b, y) - pearson(x, y)) <= 1e-9
        assert abs(pearson(x, a * y + b) - pearson(x, y)) <= 1e-9


def test_classify_closeness():
    f, c = D(0.9, 0.1), D(0.2, 0.8)
    assert classify_closeness(f, c, f) == "face"
    assert classify_closeness(f, c, c) == "situation"
    assert classify_closeness(f, f, f) == "tie"
    for metric in ("l1", "l2"):
        assert classify_closeness(f, c, D(0.8, 0.2), metric) == "face"


def test_closeness_analysis_groups_and_ties(tmp_path):
    f, c = D(0.9, 0.1), D(0.2, 0.8)
    items = [
        ("a", f, c, f),
        ("b", f, c, c),
        ("c", f, f, f),
        ("d", f, c, D(0.85, 0.15)),
    ]
    tertiles = {"a": "low", "b": "low", "c": "high", "d": "high"}
    res = closeness_analysis(items, tertiles, "x")
    low, high = res["tertiles"]["low"], res["tertiles"]["high"]
    assert (low["face_closer_prop"], low["situation_closer_prop"]) == (0.5, 0.5)
    assert high["ties"] == 1 and high["face_closer_prop"] == 1.0
    assert res["tertiles"]["mid"]["face_closer_prop"] is None
    for g in (low, high):
        assert g["face_closer_prop"] + g["situation_closer_prop"] == 1.0
    csv_text = closeness_to_csv(res, "fp0")
    assert csv_text.splitlines()[0] == "# config_fingerprint=fp0"
    assert csv_text.splitlines()[2].startswith("low,2,1,1,0,0.5,0.5")
    plot_closeness(res, tmp_path / "bars.png", "fp0")
    assert (tmp_path / "bars.png").stat().st_size > 0


def test_closeness_needs_all_conditions(tiny_dataset):
    from salbci.ingest import load_dataset

    recs = load_dataset(tiny_dataset)
    ter = {r.video_id: "low" for r in recs}
    res = closeness_analysis(recs, ter, "basic_emotion")
    assert res["tertiles"]["low"]["n"] == 4
    stripped = [type(r)(r.video_id, r.outcome, {"context_free": r.annotations["context_free"]}) for r in recs]
    with pytest.raises(MissingCondition):
        closeness_analysis(stripped, ter, "basic_emotion")


def test_format_table_and_report_json():
    truths = {"x": _be(0.5, 0, 0, 0.5, 0, 0, 0), "y": _be(0, 0, 0, 1.0, 0, 0, 0)}
    rep = evaluate(truths, truths, "basic_emotion")
    table = format_table([("EAC+ctx", "w/", rep)])
    assert "KLD" in table and "EAC+ctx" in table and rep.config_fingerprint in table
    body = json.loads(rep.to_json())
    assert set(body) == {"task", "config_fingerprint", "aggregate", "metadata", "per_video"}
