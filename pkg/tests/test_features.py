"""Feature extraction against a package whose exact contents are known.

Every expected name below traces to something planted in
conftest.build_demo_package.
"""

import pytest

from apkrobust import (
    BINARY_FAMILIES,
    ExtractionBudget,
    FAMILIES,
    RawFeatureSet,
    build_manifest,
    extract_adhoc,
    extract_all,
    extract_api_functions,
    extract_components,
    extract_file_features,
    extract_opcode_bigrams,
    extract_permissions,
    extract_strings,
    family_kind,
    load_official_permissions,
)


def test_family_roster():
    assert FAMILIES == ("Permissions", "Components", "ApiFunctions",
                        "Opcodes", "Strings", "FileRelated", "AdHoc")
    assert BINARY_FAMILIES == frozenset({"Permissions", "ApiFunctions",
                                         "Strings"})
    assert family_kind("Permissions") == "binary"
    assert family_kind("Opcodes") == "frequency"


def test_official_permission_list():
    official = load_official_permissions()
    assert len(official) == 683
    assert "android.permission.INTERNET" in official
    assert "android.permission.SEND_SMS" in official


def test_permissions(demo_apk):
    obs = extract_permissions(demo_apk.manifest).observations
    assert obs == {
        "perm::android.permission.INTERNET": 1,
        "perm::android.permission.SEND_SMS": 1,
        # used and declared by the package itself: counted twice over
        "perm::com.demo.app.SHARED": 1,
        "perm::declared::com.demo.app.SHARED": 1,
        # declared but never used still leaves a declaration marker
        "perm::declared::com.demo.app.LOCAL": 1,
        # com.demo.app.CUSTOM is used but neither official nor declared
    }


def test_components(demo_apk):
    obs = extract_components(demo_apk.manifest).observations
    assert obs["comp::activity::com.demo.app.Main"] == 1
    assert obs["comp::activity::com.demo.app.Second"] == 1
    assert obs["comp::service::com.demo.app.Sync"] == 1
    assert obs["comp::receiver::com.demo.app.Boot"] == 1
    assert obs["comp::#activity"] == 2
    assert obs["comp::#service"] == 1
    assert obs["comp::#receiver"] == 1
    assert "comp::#provider" not in obs
    assert obs["comp::#intentfilter"] == 2
    assert obs["comp::action::android.intent.action.MAIN"] == 1
    assert obs["comp::action::android.intent.action.BOOT_COMPLETED"] == 1
    assert obs["comp::category::android.intent.category.LAUNCHER"] == 1
    assert obs["comp::#feature.hw"] == 1
    assert obs["comp::#feature.sw"] == 1
    assert obs["comp::feature::android.hardware.camera"] == 1
    assert obs["comp::feature::android.software.midi"] == 1


def test_api_functions(demo_apk):
    obs = extract_api_functions(demo_apk).observations
    assert obs == {
        "api::Landroid/util/Log;->iILL": 1,
        "api::Ljava/lang/Runtime;->execLL": 1,
        "api::Ljava/lang/Class;->forNameLL": 1,
        # the call into Lcom/demo/app/Util; is internal, so no feature
    }


def test_opcode_bigrams(demo_apk):
    obs = extract_opcode_bigrams(demo_apk).observations
    # Main.onCreate: 26 110 18 110 110 14; Util.helper: 26 110 14
    assert obs == {
        "op2::26_110": 2,
        "op2::110_18": 1,
        "op2::18_110": 1,
        "op2::110_110": 1,
        "op2::110_14": 2,
    }


def test_strings(demo_apk):
    obs = extract_strings(demo_apk).observations
    assert obs["str::hello world"] == 1
    assert obs["str::com.demo.Plugin"] == 1
    # printable run mined from assets/config.txt, split at the NUL
    assert obs["str::endpoint=https://x.example/api"] == 1
    assert "str::ab" not in obs  # below the 4-byte floor


def test_file_features(demo_apk, demo_apk_bytes):
    obs = extract_file_features(demo_apk).observations
    assert obs["file::xml_xml_plain"] == 1
    assert obs["file::dex_dex"] == 1
    assert obs["file::txt_unknown"] == 1
    assert obs["file::rsa_unknown"] == 1
    assert obs["file::apk.size"] == len(demo_apk_bytes)
    dex_entry = next(e for e in demo_apk.entries if e.path == "classes.dex")
    assert obs["file::dex.size"] == dex_entry.uncompressed_size


def test_adhoc(demo_apk):
    obs = extract_adhoc(demo_apk).observations
    assert obs["adhoc::cert.self_signed"] == 1
    assert obs["adhoc::cert.validity::1to5y"] == 1
    alg_keys = [k for k in obs if k.startswith("adhoc::cert.alg::")]
    assert len(alg_keys) == 1
    assert obs["adhoc::use_exec"] == 1
    assert obs["adhoc::refl::com.demo.Plugin"] == 1
    assert "adhoc::truncated" not in obs


def test_reflection_pairing_voided_by_intermediate_call():
    from apkrobust import DexBuilder, open_apk, serialize_min_apk

    b = DexBuilder()
    b.add_class("Lrf/A;", [
        ("go", [
            ("str", "com.target.X"),
            ("call", "Landroid/util/Log;", "i", "ILL"),  # consumes the string
            ("call", "Ljava/lang/Class;", "forName", "LL"),
            0x0E,
        ]),
    ])
    blob = serialize_min_apk(build_manifest(package="rf"), [b.build()])
    obs = extract_adhoc(open_apk(blob)).observations
    assert not any(k.startswith("adhoc::refl::") for k in obs)


def test_adhoc_budget_truncation(demo_apk):
    obs = extract_adhoc(demo_apk, ExtractionBudget(adhoc_time_limit=-1.0))
    assert obs.observations.get("adhoc::truncated") == 1


def test_extract_all_order_and_kinds(demo_apk):
    sets = extract_all(demo_apk)
    assert tuple(sets) == FAMILIES
    for family, raw in sets.items():
        assert raw.family == family
        assert raw.kind == family_kind(family)


def test_extraction_is_deterministic(demo_apk):
    a = extract_all(demo_apk)
    b = extract_all(demo_apk)
    assert all(a[f].observations == b[f].observations for f in FAMILIES)


def test_raw_set_validation():
    with pytest.raises(ValueError):
        RawFeatureSet("Permissions", "binary", {"wrong::name": 1})
    with pytest.raises(ValueError):
        RawFeatureSet("Permissions", "binary", {"perm::x": 2})
    with pytest.raises(ValueError):
        RawFeatureSet("Opcodes", "frequency", {"op2::1_2": 0})
    with pytest.raises(ValueError):
        RawFeatureSet("Nonsense", "binary", {})


def test_unofficial_used_permission_needs_declaration():
    manifest = build_manifest(
        package="p",
        used_permissions=["com.other.vendor.THING"],
    )
    assert extract_permissions(manifest).observations == {}
