"""Manifest validation, detection-count labeling, and the success split."""

import pytest

from apkrobust import (
    AppRecord,
    CorpusManifest,
    InvalidManifest,
    LabelRule,
    MissingVtd,
    derive_success_split,
    label,
)


def rec(app_id, **kw):
    return AppRecord(app_id, f"apps/{app_id}.apk", **kw)


def test_label_rule_boundaries():
    assert label(rec("a", vtd=7)) == "malware"
    assert label(rec("a", vtd=40)) == "malware"
    assert label(rec("a", vtd=0)) == "goodware"
    assert label(rec("a", vtd=1)) == "excluded"
    assert label(rec("a", vtd=6)) == "excluded"


def test_label_missing_vtd():
    with pytest.raises(MissingVtd):
        label(rec("a"))


def test_custom_rule():
    loose = LabelRule(malware_min_vtd=3)
    assert label(rec("a", vtd=3), loose) == "malware"
    assert label(rec("a", vtd=2), loose) == "excluded"
    with pytest.raises(InvalidManifest):
        LabelRule(malware_min_vtd=0)


def test_manifest_rejects_duplicates():
    with pytest.raises(InvalidManifest, match="duplicate"):
        CorpusManifest("x", [rec("a"), rec("a")])


def test_obfuscated_records_need_provenance():
    base = rec("a")
    with pytest.raises(InvalidManifest, match="tool/technique"):
        CorpusManifest("x", [base, rec("a__obf", origin="obfuscated",
                                       clean_ref="a")])
    with pytest.raises(InvalidManifest, match="dangling"):
        CorpusManifest("x", [base, rec("a__obf", origin="obfuscated",
                                       tool="alpha", technique="Renaming",
                                       clean_ref="ghost")])
    ok = CorpusManifest("x", [base, rec("a__obf", origin="obfuscated",
                                        tool="alpha", technique="Renaming",
                                        clean_ref="a")])
    assert ok.by_id()["a__obf"].clean_ref == "a"


def test_unknown_origin_rejected():
    with pytest.raises(InvalidManifest, match="origin"):
        CorpusManifest("x", [rec("a", origin="mystery")])


def test_label_vtd_contradiction():
    with pytest.raises(InvalidManifest, match="contradicts"):
        CorpusManifest("x", [rec("a", vtd=0, label="malware")])
    # excluded vtd values carry whatever label the curator assigned
    CorpusManifest("x", [rec("a", vtd=3, label="malware")])


def test_json_round_trip():
    m = CorpusManifest("demo", [
        rec("a", vtd=9, label="malware"),
        rec("a__r__alpha", origin="obfuscated", tool="alpha",
            technique="Renaming", clean_ref="a"),
    ])
    again = CorpusManifest.from_json(m.to_json())
    assert again == m


def test_bad_manifest_documents():
    with pytest.raises(InvalidManifest):
        CorpusManifest.from_json("{}")
    with pytest.raises(InvalidManifest):
        CorpusManifest.from_json('{"name": "x", "records": [{"nope": 1}]}')
    with pytest.raises(InvalidManifest):
        CorpusManifest.from_json("not json at all")


def test_success_split():
    m = CorpusManifest("demo", [rec(i) for i in ("a", "b", "c", "d")])
    flags = [
        # a: Renaming worked under both tools that tried it
        ("a", "alpha", "Renaming", True),
        ("a", "beta", "Renaming", True),
        ("a", "alpha", "Encryption", False),
        # b: every technique failed under some tool
        ("b", "alpha", "Renaming", True),
        ("b", "beta", "Renaming", False),
        ("b", "beta", "Encryption", False),
        # c: single-tool attempt that worked
        ("c", "gamma", "Encryption", True),
        # d: never attempted
    ]
    split = derive_success_split(m, flags)
    assert [r.app_id for r in split["NonObf"].records] == ["a", "b", "c", "d"]
    assert [r.app_id for r in split["CleanSuccObf"].records] == ["a", "c"]


def test_success_split_ignores_obfuscated_rows():
    m = CorpusManifest("demo", [
        rec("a"),
        rec("a__x", origin="obfuscated", tool="alpha",
            technique="Renaming", clean_ref="a"),
    ])
    split = derive_success_split(m, [("a", "alpha", "Renaming", True)])
    assert [r.app_id for r in split["NonObf"].records] == ["a"]
    assert [r.app_id for r in split["CleanSuccObf"].records] == ["a"]
