from __future__ import annotations

import json
import math

import pytest

from src.cli.presets import PRESETS, get_preset, strength_for_gap
from src.errors import ConfigError, SubcriticalInS, SubcriticalTarget
from src.spiked.model import MAX_SPIKES, Side, SpikedModel, SpikeLabel
from src.spiked.overlaps import nonoverlap_deltas, overlap_envelope, prediction_report, predict_overlaps
from src.spiked.predict import (
    classify,
    forward_solution,
    omega_forward,
    omega_inverse,
    predict_outliers,
)

A1 = SpikeLabel(Side.A, 1)
A2 = SpikeLabel(Side.A, 2)
B1 = SpikeLabel(Side.B, 1)


def _location(t: float) -> float:
    # μ_A = δ_1、μ_B = ½(δ_1 + δ_3) のとき Ω_B^{-1}(t) = (1 + t) + sqrt(t² − t + 1)
    return (1.0 + t) + math.sqrt(t * t - t + 1.0)


def _location_prime(t: float) -> float:
    return 1.0 + (2.0 * t - 1.0) / (2.0 * math.sqrt(t * t - t + 1.0))


@pytest.fixture(scope="module")
def base(delta1, two_atom):
    return SpikedModel(muA=delta1, muB=two_atom, n=1000)


# -------------------
# model
# -------------------

def test_labels_and_hats(base):
    m = base.with_strengths([0.5], [1.0])
    assert [str(x) for x in m.labels()] == ["A1", "B1"]
    assert [str(x) for x in m.bulk_labels()] == ["A*", "B*"]
    assert m.hat(A1) == pytest.approx(1.5)
    assert m.hat(B1) == pytest.approx(6.0)
    a, b = m.spiked_diagonals()
    assert a[0] == pytest.approx(1.5) and a[1] == 1.0
    assert b[0] == pytest.approx(6.0) and b[1] == 3.0


def test_thresholds_at_edge(base):
    assert base.e_plus == pytest.approx(3.0, abs=1e-6)
    assert base.threshold(Side.A) == pytest.approx(1.0, abs=1e-6)
    assert base.threshold(Side.B) == pytest.approx(3.0, abs=1e-6)


def test_with_strengths_reuses_edge(base):
    _ = base.edge
    m = base.with_strengths([0.5])
    assert "edge" in m.__dict__
    assert m.d_a == (0.5,) and m.d_b == ()


@pytest.mark.parametrize(
    "kwargs",
    [
        {"d_a": (-0.1,)},
        {"d_a": (float("nan"),)},
        {"d_b": (2e3,)},
        {"d_a": (0.1,) * (MAX_SPIKES + 1)},
        {"n": 1},
    ],
)
def test_model_validation(delta1, two_atom, kwargs):
    with pytest.raises(ConfigError):
        SpikedModel(muA=delta1, muB=two_atom, **kwargs)


def test_from_json(tmp_path, delta1, two_atom):
    p = tmp_path / "spikes.json"
    p.write_text(json.dumps({"d_a": [0.5], "d_b": [1.0], "n": 200}), encoding="utf-8")
    m = SpikedModel.from_json(p, delta1, two_atom)
    assert m.n == 200 and m.d_a == (0.5,) and m.d_b == (1.0,)
    assert SpikedModel.from_json(p, delta1, two_atom, n=50).n == 50
    assert m.spikes_json() == {"d_a": [0.5], "d_b": [1.0], "n": 200}


def test_from_json_rejects_garbage(tmp_path, delta1, two_atom):
    p = tmp_path / "bad.json"
    p.write_text("{not json", encoding="utf-8")
    with pytest.raises(ConfigError):
        SpikedModel.from_json(p, delta1, two_atom)
    with pytest.raises(ConfigError):
        SpikedModel.from_json({"d_a": ["x"]}, delta1, two_atom)


# -------------------
# Ω の順方向と逆関数
# -------------------

def test_forward_identity_factor(base):
    sol = forward_solution(base, 5.0)
    assert sol.omega_a.real == pytest.approx(5.0, abs=1e-9)
    assert sol.omega_b.real == pytest.approx(15.0 / 7.0, abs=1e-9)
    assert omega_forward(Side.B, base, 5.0) == pytest.approx(15.0 / 7.0, abs=1e-9)


def test_forward_rejects_bulk(base):
    with pytest.raises(SubcriticalTarget):
        forward_solution(base, 2.5)


@pytest.mark.parametrize("t", [1.2, 1.5, 2.0, 4.0])
def test_inverse_closed_form(base, t):
    assert omega_inverse(Side.B, base, t) == pytest.approx(_location(t), abs=1e-9)


def test_inverse_rejects_subcritical(base):
    with pytest.raises(SubcriticalTarget):
        omega_inverse(Side.B, base, 0.9)


def test_forward_inverts_inverse(base):
    x = omega_inverse(Side.B, base, 1.7)
    assert omega_forward(Side.B, base, x) == pytest.approx(1.7, abs=1e-9)


# -------------------
# classify / predict
# -------------------

def test_classification_sets(base):
    # gap 0.5 は O⁺、gap 0.05 < n^{-1/3} は O のみ、強さ 0 は O の外
    m = base.with_strengths([0.5, 0.05, 0.0])
    cls = classify(m)
    a3 = SpikeLabel(Side.A, 3)
    assert cls.outliers == (A1, A2)
    assert cls.supercritical == (A1,)
    assert cls.location(a3, m.e_plus) == m.e_plus
    assert cls.location(A2, m.e_plus) == pytest.approx(_location(1.05), abs=1e-9)
    assert [cls.pi[x] for x in (A1, A2, a3)] == [1, 2, 3]


def test_pi_orders_by_location(base):
    m = base.with_strengths([0.5], [1.0])
    cls = classify(m)
    assert cls.pi[B1] == 1 and cls.pi[A1] == 2
    assert cls.label_at(1) == B1
    assert cls.location(B1, m.e_plus) == pytest.approx(6.0, abs=1e-9)
    assert cls.location(A1, m.e_plus) == pytest.approx(3.8228756555, abs=1e-9)


def test_predicted_outliers(base):
    m = base.with_strengths([0.5, 0.0], [1.0])
    preds = predict_outliers(m)
    assert [str(p.label) for p in preds] == ["B1", "A1", "A2"]
    b, a, sub = preds
    assert b.supercritical and a.supercritical and not sub.supercritical
    assert a.fluctuation == pytest.approx(math.sqrt(0.5 / 1000.0), rel=1e-6)
    assert sub.location == m.e_plus
    assert sub.fluctuation == pytest.approx(1000.0 ** (-2.0 / 3.0))
    assert a.to_record()["label"] == "A1"


def test_locations_increase_with_strength(base):
    xs = [classify(base.with_strengths([d])).location(A1, base.e_plus) for d in (0.2, 0.5, 1.0, 2.0)]
    assert all(b > a for a, b in zip(xs, xs[1:]))


# -------------------
# overlaps
# -------------------

def test_overlap_coefficient_closed_form(base):
    m = base.with_strengths([0.5], [1.0])
    pred = predict_overlaps(m, [A1])
    want = 1.5 * _location_prime(1.5) / _location(1.5)
    assert pred.g(A1) == pytest.approx(want, abs=1e-7)
    assert pred.g(A1) == pytest.approx(0.68898, abs=1e-4)


def test_overlap_by_rank(base):
    m = base.with_strengths([0.5], [1.0])
    # π = 1 は B1: Ω_A = id なので g = 1
    pred = predict_overlaps(m, [1])
    assert pred.set_s == (B1,)
    assert pred.g(B1) == pytest.approx(1.0, abs=1e-7)


def test_delta_table(base):
    m = base.with_strengths([0.5, 1.0], [1.0])
    table = nonoverlap_deltas(m, [A1])
    assert table.get(A1, A2) == pytest.approx(0.5)
    # 異なる側: |b̂ − Ω_A(Ω_B^{-1}(â))| と |â − Ω_B(Ω_A^{-1}(b̂))|
    assert table.get(A1, B1) == pytest.approx(6.0 - _location(1.5), abs=1e-9)
    assert table.get(B1, A1) == pytest.approx(24.0 / 9.0 - 1.5, abs=1e-9)
    assert table.get(A1, SpikeLabel(Side.A, 3, bulk=True)) == pytest.approx(0.5)
    assert table.per_label[A1] == pytest.approx(0.5)


def test_subcritical_label_in_s(base):
    m = base.with_strengths([0.5, 0.05])
    with pytest.raises(SubcriticalInS):
        predict_overlaps(m, [A2])


def test_assumption_flag(base):
    big = predict_overlaps(base.with_strengths([2.0]), [A1])
    assert big.assumption_ok
    close = predict_overlaps(base.with_strengths([2.0, 2.0001]), [A1])
    assert not close.assumption_ok


def test_overlap_envelope():
    assert overlap_envelope(100, 0.0, 1.0) == math.inf
    assert overlap_envelope(100, 1.0, 0.0) == math.inf
    assert overlap_envelope(100, 1.0, 1.0, 2.0) == pytest.approx(2.0 * (0.1 + 0.01))


def test_prediction_report(base):
    m = base.with_strengths([0.5, 0.0], [1.0])
    rep = prediction_report(m)
    assert set(rep) == {"version", "spikes", "e_plus", "omega_a_at_edge", "omega_b_at_edge", "outliers", "overlaps", "tau1", "tau2"}
    assert set(rep["overlaps"]) == {"A1", "B1"}
    assert len(rep["outliers"]) == 3


# -------------------
# presets
# -------------------

def test_preset_gap():
    m = get_preset("spiked").model(200)
    assert m.gap(A1) == pytest.approx(0.5, abs=1e-9)
    assert strength_for_gap(m, Side.A, 1, -10.0) == 0.0


def test_presets_without_spikes():
    assert get_preset("two-atom").model(100) is None
    assert set(PRESETS) == {"two-atom", "regular", "spiked", "multi-spike"}


def test_unknown_preset():
    with pytest.raises(ConfigError):
        get_preset("nope")
