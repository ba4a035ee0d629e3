"""Transform invariants per technique, across the three emulated tools."""

from collections import Counter

import pytest

from apkrobust import (
    ObfSpec,
    TECHNIQUES,
    TOOL_PROFILES,
    ToolProfile,
    apply_technique,
    extract_all,
    load_package,
    obfuscate_apk_bytes,
    open_apk,
    serialize_package,
)
from apkrobust.dex import INVOKE_OPS, STRING_OPS
from conftest import build_demo_package


@pytest.fixture(scope="module")
def demo_bytes():
    return build_demo_package()


def opcode_multisets(pkg):
    out = {}
    for dex in pkg.dex_models:
        for cls in dex.defined_classes:
            for m in cls.methods:
                out.setdefault(cls.name, []).append(Counter(m.opcodes))
    return out


def test_technique_roster():
    assert TECHNIQUES == ("Renaming", "JunkCodeInsertion", "CallIndirection",
                          "Reflection", "Encryption")
    assert set(TOOL_PROFILES) == {"alpha", "beta", "gamma"}


def test_unknown_technique_rejected(demo_bytes):
    pkg = load_package(demo_bytes)
    with pytest.raises(ValueError):
        apply_technique(pkg, ObfSpec("Transmogrify"))
    with pytest.raises(ValueError):
        ObfSpec("Renaming", tool_profile="delta").profile()


def test_profile_validation():
    with pytest.raises(ValueError):
        ToolProfile("x", "ab", 4, (0,), "inline", "aes-like", "defined", True)
    with pytest.raises(ValueError):
        ToolProfile("x", "ab", 4, (0,), "same-class", "rot13", "defined",
                    True)


def test_all_combinations_round_trip(demo_bytes):
    for technique in TECHNIQUES:
        for tool in TOOL_PROFILES:
            out, log = obfuscate_apk_bytes(
                demo_bytes, ObfSpec(technique, tool_profile=tool, seed=3))
            model = open_apk(out)
            sets = extract_all(model)
            assert sets["Opcodes"].observations
            assert log.technique == technique
            assert log.tool == tool


def test_obfuscation_is_deterministic(demo_bytes):
    spec = ObfSpec("Encryption", tool_profile="gamma", seed=9)
    one, _ = obfuscate_apk_bytes(demo_bytes, spec)
    two, _ = obfuscate_apk_bytes(demo_bytes, spec)
    assert one == two
    other, _ = obfuscate_apk_bytes(
        demo_bytes, ObfSpec("Encryption", tool_profile="gamma", seed=10))
    assert other != one


# --- renaming ---------------------------------------------------------------


def test_rename_preserves_opcodes_and_protects_layers(demo_bytes):
    pkg = load_package(demo_bytes)
    before = opcode_multisets(pkg)
    out, log = apply_technique(pkg, ObfSpec("Renaming", seed=2))

    renamed = dict(log.renamed_classes)
    assert "Lcom/demo/app/Main;" in renamed
    assert "Lcom/demo/app/Util;" in renamed
    by_new = {renamed[old]: counters
              for old, counters in before.items() if old in renamed}
    after = opcode_multisets(out)
    for new_name, counters in by_new.items():
        assert after[new_name] == counters

    for dex in out.dex_models:
        for name in dex.defined_class_names():
            assert not name.startswith(("Landroid/", "Ljava/"))
        # protected namespaces survive in the reference table
        kept = {r.defining_class for r in dex.method_refs}
        assert any(c.startswith("Landroid/") for c in kept)
        assert any(c.startswith("Ljava/") for c in kept)


def test_rename_keeps_lifecycle_names(demo_bytes):
    pkg = load_package(demo_bytes)
    out, log = apply_technique(pkg, ObfSpec("Renaming", seed=2))
    names = {r.method_name for dex in out.dex_models
             for r in dex.method_refs}
    assert "onCreate" in names
    renamed_methods = dict(log.renamed_methods)
    assert "helper" in renamed_methods
    assert "onCreate" not in renamed_methods


def test_rename_manifest_follows_profile(demo_bytes):
    pkg = load_package(demo_bytes)
    with_manifest, _ = apply_technique(
        pkg, ObfSpec("Renaming", tool_profile="alpha", seed=1))
    comp_names = {n for _k, n in with_manifest.manifest.components}
    assert "com.demo.app.Main" not in comp_names

    without, _ = apply_technique(
        pkg, ObfSpec("Renaming", tool_profile="beta", seed=1))
    comp_names = {n for _k, n in without.manifest.components}
    assert "com.demo.app.Main" in comp_names


def test_rename_scope_aggressive_hits_external_classes(demo_bytes):
    # alpha renames non-protected externals; beta leaves them be
    pkg = load_package(demo_bytes)
    aggressive, _ = apply_technique(
        pkg, ObfSpec("Renaming", tool_profile="alpha", seed=4))
    conservative, _ = apply_technique(
        pkg, ObfSpec("Renaming", tool_profile="beta", seed=4))
    # the demo app only references protected namespaces externally, so both
    # keep them; plant an unprotected external ref to see the difference
    from apkrobust import DexBuilder, build_manifest, serialize_min_apk

    b = DexBuilder()
    b.add_class("Lown/A;", [
        ("go", [("call", "Lvendor/sdk/Api;", "hit", "V"), 0x0E]),
    ])
    blob = serialize_min_apk(build_manifest(package="own"), [b.build()])
    agg, _ = apply_technique(load_package(blob),
                             ObfSpec("Renaming", tool_profile="alpha",
                                     seed=4))
    con, _ = apply_technique(load_package(blob),
                             ObfSpec("Renaming", tool_profile="beta",
                                     seed=4))
    agg_refs = {r.defining_class for dex in agg.dex_models
                for r in dex.method_refs}
    con_refs = {r.defining_class for dex in con.dex_models
                for r in dex.method_refs}
    assert "Lvendor/sdk/Api;" not in agg_refs
    assert "Lvendor/sdk/Api;" in con_refs


def test_renamed_output_reparses(demo_bytes):
    out, _ = obfuscate_apk_bytes(demo_bytes, ObfSpec("Renaming", seed=5))
    model = open_apk(out)
    assert model.dex_models
    assert all(not c.startswith("Lcom/demo/")
               for c in model.defined_class_names())


# --- junk insertion ----------------------------------------------------------


def test_junk_insertion_counts(demo_bytes):
    pkg = load_package(demo_bytes)
    lengths = {}
    for dex in pkg.dex_models:
        for cls in dex.defined_classes:
            for m in cls.methods:
                lengths[(cls.name, m.method_idx)] = len(m.opcodes)
    out, log = apply_technique(pkg, ObfSpec("JunkCodeInsertion", seed=1,
                                            junk_density=0.5))
    for dex in out.dex_models:
        for cls in dex.defined_classes:
            for m in cls.methods:
                old = lengths[(cls.name, m.method_idx)]
                assert len(m.opcodes) == old + int(round(0.5 * (old + 1)))
    assert log.junk_inserted


def test_junk_is_inert_and_original_survives(demo_bytes):
    pkg = load_package(demo_bytes)
    originals = {
        (cls.name, m.method_idx): list(m.opcodes)
        for dex in pkg.dex_models
        for cls in dex.defined_classes
        for m in cls.methods
    }
    for tool in TOOL_PROFILES:
        out, _ = apply_technique(
            pkg, ObfSpec("JunkCodeInsertion", tool_profile=tool, seed=2,
                         junk_density=0.8))
        menu = set(TOOL_PROFILES[tool].junk_menu)
        assert not (menu & INVOKE_OPS) and not (menu & STRING_OPS)
        for dex in out.dex_models:
            for cls in dex.defined_classes:
                for m in cls.methods:
                    old = originals[(cls.name, m.method_idx)]
                    # the original opcodes remain as a subsequence
                    it = iter(m.opcodes)
                    assert all(op in it for op in old)
                    added = Counter(m.opcodes) - Counter(old)
                    assert set(added) <= menu


def test_zero_density_is_identity(demo_bytes):
    pkg = load_package(demo_bytes)
    out, log = apply_technique(pkg, ObfSpec("JunkCodeInsertion",
                                            junk_density=0.0))
    assert opcode_multisets(out) == opcode_multisets(pkg)
    assert log.junk_inserted == {}


# --- call indirection --------------------------------------------------------


def count_defined_methods(pkg):
    return sum(len(cls.methods) for dex in pkg.dex_models
               for cls in dex.defined_classes)


def test_chain_length_adds_exactly_that_many_wrappers(demo_bytes):
    pkg = load_package(demo_bytes)
    base = count_defined_methods(pkg)
    # the demo app has exactly one internal call site (Main -> Util.helper)
    for n in (1, 2, 4):
        out, log = apply_technique(
            pkg, ObfSpec("CallIndirection", seed=1, chain_length=n))
        assert count_defined_methods(out) == base + n
        assert log.call_chains == [("Lcom/demo/app/Util;->helper", n)]


def test_indirection_keeps_target_reachable(demo_bytes):
    pkg = load_package(demo_bytes)
    out, _ = apply_technique(pkg, ObfSpec("CallIndirection", seed=1,
                                          chain_length=3))
    (dex,) = out.dex_models
    # follow the chain from Main.onCreate to the original target
    main = next(c for c in dex.defined_classes
                if c.name == "Lcom/demo/app/Main;")
    onc = main.methods[0]
    internal = [i for i in onc.invoke_uses
                if dex.method_refs[i].defining_class
                in out.defined_class_names()]
    assert len(internal) == 1
    bodies = {m.method_idx: m for dcls in dex.defined_classes
              for m in dcls.methods}
    idx = internal[0]
    for _ in range(3):
        wrapper = bodies[idx]
        assert wrapper.opcodes == [0x71, 0x0E]
        (idx,) = wrapper.invoke_uses
    assert dex.method_refs[idx].method_name == "helper"


def test_helper_placement(demo_bytes):
    pkg = load_package(demo_bytes)
    before = {c.name for dex in pkg.dex_models
              for c in dex.defined_classes}
    same, _ = apply_technique(
        pkg, ObfSpec("CallIndirection", tool_profile="alpha", seed=1))
    assert {c.name for dex in same.dex_models
            for c in dex.defined_classes} == before

    separate, _ = apply_technique(
        pkg, ObfSpec("CallIndirection", tool_profile="beta", seed=1))
    after = {c.name for dex in separate.dex_models
             for c in dex.defined_classes}
    assert len(after - before) == 1


def test_undefined_helper_leaves_dangling_refs(demo_bytes):
    ghost = ToolProfile("ghost", "abcdef", 6, (0,), "separate-helper",
                        "aes-like", "defined", False, helper_defined=False)
    pkg = load_package(demo_bytes)
    base = count_defined_methods(pkg)
    out, _ = apply_technique(
        pkg, ObfSpec("CallIndirection", tool_profile=ghost, seed=1,
                     chain_length=2))
    # refs exist, bodies do not
    assert count_defined_methods(out) == base
    blob = serialize_package(out)
    model = open_apk(blob)
    api = extract_all(model)["ApiFunctions"].observations
    assert any("->helper" not in k and "demo" not in k
               for k in api), api


# --- reflection --------------------------------------------------------------


def test_full_reflection_replaces_external_calls(demo_bytes):
    out, log = obfuscate_apk_bytes(
        demo_bytes, ObfSpec("Reflection", seed=1, reflection_fraction=1.0))
    sets = extract_all(open_apk(out))
    api = set(sets["ApiFunctions"].observations)
    assert api == {
        "api::Ljava/lang/Class;->forNameLL",
        "api::Ljava/lang/Class;->getDeclaredMethodLLL",
        "api::Ljava/lang/reflect/Method;->invokeLLL",
    }
    # targets resurface as reflective-resolution counters and as strings
    adhoc = sets["AdHoc"].observations
    assert adhoc.get("adhoc::refl::android.util.Log", 0) >= 1
    strings = sets["Strings"].observations
    assert "str::android.util.Log" in strings
    # three external sites: Log.i, Runtime.exec, Class.forName
    assert len(log.reflected_sites) == 3


def test_zero_reflection_changes_nothing(demo_bytes):
    pkg = load_package(demo_bytes)
    out, log = apply_technique(pkg, ObfSpec("Reflection", seed=1,
                                            reflection_fraction=0.0))
    assert opcode_multisets(out) == opcode_multisets(pkg)
    assert log.reflected_sites == []


def test_partial_reflection_is_seeded(demo_bytes):
    pkg = load_package(demo_bytes)
    out_a, log_a = apply_technique(pkg, ObfSpec("Reflection", seed=1,
                                                reflection_fraction=0.5))
    out_b, log_b = apply_technique(pkg, ObfSpec("Reflection", seed=1,
                                                reflection_fraction=0.5))
    assert log_a.reflected_sites == log_b.reflected_sites
    assert len(log_a.reflected_sites) == 2  # round(0.5 * 3)


def test_internal_calls_never_reflected(demo_bytes):
    pkg = load_package(demo_bytes)
    out, log = apply_technique(pkg, ObfSpec("Reflection", seed=1,
                                            reflection_fraction=1.0))
    assert all("Lcom/demo/app/" not in site for site in log.reflected_sites)


# --- string encryption -------------------------------------------------------


def test_encryption_rewrites_loaded_strings(demo_bytes):
    pkg = load_package(demo_bytes)
    out, log = apply_technique(pkg, ObfSpec("Encryption", seed=1))
    encrypted = dict(log.encrypted_strings)
    assert "hello world" in encrypted
    assert "com.demo.Plugin" in encrypted
    (dex,) = out.dex_models
    assert "hello world" not in dex.string_pool
    assert encrypted["hello world"] in dex.string_pool


def test_encryption_spares_structural_strings(demo_bytes):
    pkg = load_package(demo_bytes)
    out, _ = apply_technique(pkg, ObfSpec("Encryption", seed=1))
    (dex,) = out.dex_models
    assert "Lcom/demo/app/Main;" in dex.type_names
    assert "onCreate" in {r.method_name for r in dex.method_refs}


def test_encryption_plants_decoder_calls(demo_bytes):
    pkg = load_package(demo_bytes)
    (dex,) = pkg.dex_models
    loads_before = sum(op in STRING_OPS
                       for _c, m in dex.iter_bodies() for op in m.opcodes)
    out, _ = apply_technique(pkg, ObfSpec("Encryption", seed=1))
    (dex_out,) = out.dex_models
    all_ops = [op for _c, m in dex_out.iter_bodies() for op in m.opcodes]
    # every rewritten load is chased by invoke-static + move-result-object
    assert all_ops.count(0x71) >= loads_before
    assert all_ops.count(0x0C) >= loads_before


def test_cipher_families_differ(demo_bytes):
    pkg = load_package(demo_bytes)
    _, log_xor = apply_technique(
        pkg, ObfSpec("Encryption", tool_profile="alpha", seed=7))
    _, log_shift = apply_technique(
        pkg, ObfSpec("Encryption", tool_profile="beta", seed=7))
    xor_out = dict(log_xor.encrypted_strings)["hello world"]
    shift_out = dict(log_shift.encrypted_strings)["hello world"]
    assert xor_out != shift_out
    # the shift cipher is length-preserving, the xor+base64 one is not
    assert len(shift_out) == len("hello world")
    assert len(xor_out) != len("hello world")


def test_encrypted_package_extracts_differently(demo_bytes):
    base = extract_all(open_apk(demo_bytes))["Strings"].observations
    out, _ = obfuscate_apk_bytes(demo_bytes, ObfSpec("Encryption", seed=1))
    after = extract_all(open_apk(out))["Strings"].observations
    assert "str::hello world" in base
    assert "str::hello world" not in after
