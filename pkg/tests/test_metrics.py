"""Robustness measures checked against brute-force re-implementations."""

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from apkrobust import (
    FamilyMismatch,
    FeatureVector,
    LengthMismatch,
    Pair,
    PairedCorpus,
    RobustnessReport,
    SingleClassLabels,
    discrepancy_topk,
    eval_metrics,
    family_persistence,
    family_tool_overlap,
    insensitivity,
    persistence,
    tool_overlap,
)
from apkrobust.vectorize import Vocabulary, build_vocabulary
from apkrobust.features import RawFeatureSet


def fv(values, family="Opcodes", kind="frequency", app="x"):
    return FeatureVector(app, family, kind, values)


def brute_agreement(a: dict, b: dict) -> float:
    union = set(a) | set(b)
    if not union:
        return 1.0
    same = sum(1 for i in union if a.get(i, 0.0) == b.get(i, 0.0))
    return same / len(union)


def test_agreement_examples():
    assert persistence(fv({}), fv({})) == 1.0
    assert persistence(fv({0: 2.0}), fv({0: 2.0})) == 1.0
    assert persistence(fv({0: 2.0}), fv({0: 3.0})) == 0.0
    # one shared match, one mismatch, one one-sided activation
    assert persistence(fv({0: 1.0, 1: 2.0}),
                       fv({0: 1.0, 2: 5.0})) == pytest.approx(1 / 3)


def test_agreement_requires_same_family():
    with pytest.raises(FamilyMismatch):
        persistence(fv({0: 1.0}), fv({0: 1.0}, family="Strings",
                                     kind="binary"))


def test_binary_agreement_equals_set_jaccard():
    rng = random.Random(11)
    for _ in range(2000):
        a = {i: 1.0 for i in rng.sample(range(32), rng.randrange(0, 10))}
        b = {i: 1.0 for i in rng.sample(range(32), rng.randrange(0, 10))}
        got = persistence(fv(a, family="Strings", kind="binary"),
                          fv(b, family="Strings", kind="binary"))
        sa, sb = set(a), set(b)
        union = sa | sb
        jaccard = 1.0 if not union else len(sa & sb) / len(union)
        assert got == pytest.approx(jaccard)


@settings(max_examples=150, deadline=None)
@given(
    st.dictionaries(st.integers(0, 40), st.floats(1, 9), max_size=12),
    st.dictionaries(st.integers(0, 40), st.floats(1, 9), max_size=12),
)
def test_agreement_matches_brute_force(a, b):
    got = persistence(fv(a), fv(b))
    assert got == pytest.approx(brute_agreement(a, b))
    # symmetric, and identical inputs agree fully
    assert got == pytest.approx(persistence(fv(b), fv(a)))
    assert persistence(fv(a), fv(a)) == 1.0


def test_tool_overlap_is_the_same_measure():
    a, b = {0: 1.0, 3: 2.0}, {0: 1.0}
    assert tool_overlap(fv(a), fv(b)) == persistence(fv(a), fv(b))


def paired_fixture():
    """Two clean apps, two tools, one technique; numbers small enough to
    check by hand."""
    def vecs(app, op_values):
        return {
            "Opcodes": fv(op_values, app=app),
            "Strings": fv({0: 1.0}, family="Strings", kind="binary", app=app),
        }

    vectors = {
        "c1": vecs("c1", {0: 4.0, 1: 2.0}),
        "c1_t1": vecs("c1_t1", {0: 4.0, 1: 6.0}),      # |d|=0,4
        "c1_t2": vecs("c1_t2", {0: 1.0, 1: 2.0}),      # |d|=3,0
        "c2": vecs("c2", {0: 2.0}),
        "c2_t1": vecs("c2_t1", {0: 2.0}),              # |d|=0
        "c2_t2": vecs("c2_t2", {0: 8.0}),              # |d|=6
    }
    pairs = [
        Pair("c1", "c1_t1", "t1", "Tech"),
        Pair("c1", "c1_t2", "t2", "Tech"),
        Pair("c2", "c2_t1", "t1", "Tech"),
        Pair("c2", "c2_t2", "t2", "Tech"),
    ]
    vocab = Vocabulary(
        {"Opcodes": [("op2::0_1", 1.0), ("op2::1_2", 0.5)],
         "Strings": [("str::s", 1.0)]},
        built_from=6)
    return PairedCorpus(pairs, vectors, vocab)


def test_family_persistence_cells():
    paired = paired_fixture()
    cells = family_persistence(paired, "Opcodes")
    # t1: c1 agrees on col0 only (1/2), c2 fully (1/1)
    assert cells[("t1", "Tech")] == pytest.approx((0.5 + 1.0) / 2)
    # t2: c1 agrees on col1 only, c2 disagrees on its single column
    assert cells[("t2", "Tech")] == pytest.approx((0.5 + 0.0) / 2)


def test_family_tool_overlap_cells():
    paired = paired_fixture()
    cells = family_tool_overlap(paired, "Opcodes")
    # c1: t1 {4,6} vs t2 {1,2} -> 0/2; c2: t1 {2} vs t2 {8} -> 0/1
    assert cells[("Tech", "t1", "t2")] == pytest.approx(0.0)
    strings = family_tool_overlap(paired, "Strings")
    assert strings[("Tech", "t1", "t2")] == pytest.approx(1.0)


def test_discrepancy_two_stage_average():
    paired = paired_fixture()
    top = discrepancy_topk(paired, k=15, families=("Opcodes",))
    scores = dict(top["Tech"])
    # op2::0_1: t1 mean |d| = (0+0)/2 = 0, t2 mean = (3+6)/2 = 4.5 -> 2.25
    # op2::1_2: t1 mean = 4/2 = 2, t2 mean = 0/2 = 0 -> 1.0
    assert scores["op2::0_1"] == pytest.approx(2.25)
    assert scores["op2::1_2"] == pytest.approx(1.0)
    names = [n for n, _s in top["Tech"]]
    assert names == ["op2::0_1", "op2::1_2"]   # descending score


def test_discrepancy_ties_break_by_name():
    vectors = {
        "c": {"Opcodes": fv({0: 1.0, 1: 1.0}, app="c")},
        "o": {"Opcodes": fv({0: 3.0, 1: 3.0}, app="o")},
    }
    vocab = Vocabulary(
        {"Opcodes": [("op2::b", 1.0), ("op2::a", 1.0)]}, built_from=2)
    paired = PairedCorpus([Pair("c", "o", "t", "T")], vectors, vocab)
    top = discrepancy_topk(paired, k=15, families=("Opcodes",))
    assert [n for n, _ in top["T"]] == ["op2::a", "op2::b"]


def test_discrepancy_caps_at_k_and_drops_zero():
    vectors = {
        "c": {"Opcodes": fv({i: 1.0 for i in range(20)}, app="c")},
        "o": {"Opcodes": fv({i: 1.0 + (i % 17) for i in range(20)}, app="o")},
    }
    vocab = Vocabulary(
        {"Opcodes": [(f"op2::{i:02d}", 1.0) for i in range(20)]},
        built_from=2)
    paired = PairedCorpus([Pair("c", "o", "t", "T")], vectors, vocab)
    top = discrepancy_topk(paired, k=15, families=("Opcodes",))
    assert len(top["T"]) == 15
    assert all(score > 0 for _n, score in top["T"])
    # column 0 and 17 have zero delta (i % 17 == 0)
    names = {n for n, _ in top["T"]}
    assert "op2::00" not in names and "op2::17" not in names


def test_eval_metrics_arithmetic():
    preds = [1, 1, 0, 0, 1, 0]
    truth = [1, 0, 1, 0, 1, 0]
    result = eval_metrics(preds, truth)
    assert result.tpr == pytest.approx(2 / 3)
    assert result.fpr == pytest.approx(1 / 3)
    assert result.a_mean == pytest.approx((2 / 3 + 1 - 1 / 3) / 2)


def test_eval_metrics_errors():
    with pytest.raises(LengthMismatch):
        eval_metrics([1, 0], [1])
    with pytest.raises(SingleClassLabels):
        eval_metrics([1, 0], [1, 1])
    with pytest.raises(SingleClassLabels):
        eval_metrics([], [])


def test_insensitivity():
    result = insensitivity([1, 0, 1, 0], [1, 1, 1, 0])
    assert result.agreement == pytest.approx(3 / 4)
    # positives {0,2} vs {0,1,2} -> jaccard 2/3
    assert result.positive_jaccard == pytest.approx(2 / 3)
    both_negative = insensitivity([0, 0], [0, 0])
    assert both_negative.agreement == 1.0
    assert both_negative.positive_jaccard == 1.0
    with pytest.raises(LengthMismatch):
        insensitivity([1], [1, 0])
    with pytest.raises(LengthMismatch):
        insensitivity([], [])


def test_paired_corpus_validates_ids():
    vectors = {"c": {"Opcodes": fv({}, app="c")}}
    with pytest.raises(ValueError):
        PairedCorpus([Pair("c", "missing", "t", "T")], vectors)


def test_report_rows_and_json(demo_apk):
    paired = paired_fixture()
    report = RobustnessReport(
        persistence={"Opcodes": family_persistence(paired, "Opcodes")},
        overlap={"Opcodes": family_tool_overlap(paired, "Opcodes")},
        discrepancy=discrepancy_topk(paired, families=("Opcodes",)),
        insensitivity={},
    )
    rows = list(report.csv_rows())
    assert all(len(r) == 6 for r in rows)
    metrics_seen = {r[0] for r in rows}
    assert {"persistence", "overlap", "discrepancy"} <= metrics_seen
    import json

    doc = json.loads(report.to_json())
    assert "persistence" in doc and "discrepancy" in doc
