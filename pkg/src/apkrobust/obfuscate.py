"""Five code transformations with per-tool behavioural profiles.

Each transform rewrites parsed models, never bytes, and returns a log
detailed enough to invert or audit the change. Profiles capture the ways
real tools differ on the same technique: naming alphabets, where helper
code lands, cipher style, and how far renaming reaches.
"""

from __future__ import annotations

import base64
import copy
import hashlib
import io
import random
import zipfile
from dataclasses import dataclass, field

from .apk import MANIFEST_PATH, _DEX_NAME, open_apk
from .axml import ManifestModel
from .dex import (DefinedClass, DefinedMethod, DexModel, INVOKE_OPS,
                  MethodRef, STRING_OPS)
from .errors import NotAZip
from .synth import serialize_min_apk

TECHNIQUES = ("Renaming", "JunkCodeInsertion", "CallIndirection",
              "Reflection", "Encryption")

NOP = 0x00
MOVE = 0x01
MOVE_RESULT_OBJECT = 0x0C
CONST4 = 0x12
CONST_STRING = 0x1A
GOTO = 0x28
INVOKE_VIRTUAL = 0x6E
INVOKE_STATIC = 0x71
ADD_INT = 0x90

LIFECYCLE_NAMES = frozenset({
    "onCreate", "onStart", "onResume", "onPause", "onStop", "onDestroy",
    "onReceive", "onBind", "onStartCommand", "<init>", "<clinit>", "main",
})
PROTECTED_PREFIXES = ("Landroid/", "Ljava/", "Ljavax/", "Ldalvik/")


@dataclass(frozen=True)
class ToolProfile:
    """How one emulated tool goes about its business."""

    name: str
    name_alphabet: str
    name_length: int
    junk_menu: tuple[int, ...]
    helper_placement: str            # "same-class" | "separate-helper"
    cipher: str                      # "aes-like" | "caesar-like"
    rename_scope: str                # "defined" | "aggressive"
    rename_manifest_classes: bool
    helper_defined: bool = True

    def __post_init__(self):
        if self.helper_placement not in ("same-class", "separate-helper"):
            raise ValueError(f"bad placement {self.helper_placement!r}")
        if self.cipher not in ("aes-like", "caesar-like"):
            raise ValueError(f"bad cipher {self.cipher!r}")
        if self.rename_scope not in ("defined", "aggressive"):
            raise ValueError(f"bad scope {self.rename_scope!r}")


TOOL_PROFILES = {
    "alpha": ToolProfile(
        name="alpha",
        name_alphabet="abcdefghijklmnopqrstuvwxyz",
        name_length=6,
        junk_menu=(NOP, MOVE, CONST4),
        helper_placement="same-class",
        cipher="aes-like",
        rename_scope="aggressive",
        rename_manifest_classes=True,
    ),
    "beta": ToolProfile(
        name="beta",
        name_alphabet="ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789",
        name_length=10,
        junk_menu=(NOP, GOTO, ADD_INT),
        helper_placement="separate-helper",
        cipher="caesar-like",
        rename_scope="defined",
        rename_manifest_classes=False,
    ),
    "gamma": ToolProfile(
        name="gamma",
        name_alphabet="abcdefABCDEF0123456789",
        name_length=8,
        junk_menu=(NOP, CONST4, MOVE, ADD_INT),
        helper_placement="separate-helper",
        cipher="aes-like",
        rename_scope="defined",
        rename_manifest_classes=True,
    ),
}


@dataclass(frozen=True)
class ObfSpec:
    technique: str
    tool_profile: str | ToolProfile = "alpha"
    seed: int = 0
    junk_density: float = 0.3
    reflection_fraction: float = 1.0
    chain_length: int = 1

    def profile(self) -> ToolProfile:
        if isinstance(self.tool_profile, ToolProfile):
            return self.tool_profile
        try:
            return TOOL_PROFILES[self.tool_profile]
        except KeyError:
            raise ValueError(f"unknown tool profile "
                             f"{self.tool_profile!r}") from None


@dataclass
class AppPackage:
    """Mutable transform target: the models plus untouched raw entries."""

    manifest: ManifestModel
    dex_models: list[DexModel]
    extra_entries: dict[str, bytes]
    cert_der: bytes | None = None

    def defined_class_names(self) -> frozenset:
        names = set()
        for dex in self.dex_models:
            names.update(dex.defined_class_names())
        return frozenset(names)


@dataclass
class TransformLog:
    technique: str
    tool: str
    seed: int
    renamed_classes: list[tuple[str, str]] = field(default_factory=list)
    renamed_methods: list[tuple[str, str]] = field(default_factory=list)
    junk_inserted: dict[str, int] = field(default_factory=dict)
    call_chains: list[tuple[str, int]] = field(default_factory=list)
    reflected_sites: list[str] = field(default_factory=list)
    encrypted_strings: list[tuple[str, str]] = field(default_factory=list)

    def to_json(self) -> str:
        import json
        return json.dumps({
            "technique": self.technique,
            "tool": self.tool,
            "seed": self.seed,
            "renamed_classes": self.renamed_classes,
            "renamed_methods": self.renamed_methods,
            "junk_inserted": self.junk_inserted,
            "call_chains": self.call_chains,
            "reflected_sites": self.reflected_sites,
            "encrypted_strings": self.encrypted_strings,
        }, indent=2)


def _rng_for(spec: ObfSpec, profile: ToolProfile) -> random.Random:
    # str hashing is salted per process, so mix identity through a digest
    key = hashlib.sha256(
        f"{spec.seed}:{profile.name}:{spec.technique}".encode()).digest()
    return random.Random(int.from_bytes(key[:8], "big"))


class _NameMaker:
    def __init__(self, profile: ToolProfile, rng: random.Random, taken):
        self._alphabet = profile.name_alphabet
        self._length = profile.name_length
        self._rng = rng
        self._taken = set(taken)

    def fresh(self) -> str:
        while True:
            name = "".join(self._rng.choice(self._alphabet)
                           for _ in range(self._length))
            if name not in self._taken and f"L{name};" not in self._taken:
                self._taken.add(name)
                self._taken.add(f"L{name};")
                return name


def _intern_string(dex: DexModel, text: str) -> int:
    try:
        return dex.string_pool.index(text)
    except ValueError:
        dex.string_pool.append(text)
        return len(dex.string_pool) - 1


def _intern_type(dex: DexModel, descriptor: str):
    _intern_string(dex, descriptor)
    if descriptor not in dex.type_names:
        dex.type_names.append(descriptor)


def _intern_ref(dex: DexModel, cls: str, name: str, shorty: str) -> int:
    ref = MethodRef(cls, name, shorty)
    for i, existing in enumerate(dex.method_refs):
        if existing == ref:
            return i
    _intern_type(dex, cls)
    _intern_string(dex, name)
    _intern_string(dex, shorty)
    dex.method_refs.append(ref)
    return len(dex.method_refs) - 1


def _java_name(descriptor: str) -> str:
    return descriptor[1:-1].replace("/", ".")


def _all_pool_strings(pkg: AppPackage) -> set:
    taken = set()
    for dex in pkg.dex_models:
        taken.update(dex.string_pool)
    return taken


# ---------------------------------------------------------------------------
# Renaming


def rename(pkg: AppPackage, spec: ObfSpec) -> tuple[AppPackage, TransformLog]:
    """Rewrite identifier names everywhere they occur.

    Defined classes and their non-lifecycle method names always change.
    The aggressive scope additionally renames referenced library classes
    outside the protected platform namespaces, the way flattening tools
    do when told to process dependencies.
    """
    pkg = copy.deepcopy(pkg)
    profile = spec.profile()
    rng = _rng_for(spec, profile)
    log = TransformLog(spec.technique, profile.name, spec.seed)
    maker = _NameMaker(profile, rng, _all_pool_strings(pkg))

    defined = pkg.defined_class_names()
    class_targets = []
    seen = set()
    for dex in pkg.dex_models:
        for cls in dex.defined_classes:
            if cls.name not in seen:
                seen.add(cls.name)
                class_targets.append(cls.name)
        if profile.rename_scope == "aggressive":
            for ref in dex.method_refs:
                cand = ref.defining_class
                if (cand not in seen and cand not in defined
                        and not cand.startswith(PROTECTED_PREFIXES)):
                    seen.add(cand)
                    class_targets.append(cand)

    class_map = {old: f"L{maker.fresh()};" for old in class_targets}
    log.renamed_classes = sorted(class_map.items())

    method_targets = []
    mseen = set()
    for dex in pkg.dex_models:
        for cls in dex.defined_classes:
            for method in cls.methods:
                name = dex.method_refs[method.method_idx].method_name
                if name not in LIFECYCLE_NAMES and name not in mseen:
                    mseen.add(name)
                    method_targets.append(name)
    method_map = {old: maker.fresh() for old in method_targets}
    log.renamed_methods = sorted(method_map.items())

    string_map = dict(class_map)
    for old, new in class_map.items():
        string_map[_java_name(old)] = _java_name(new)

    for dex in pkg.dex_models:
        dex.string_pool = [string_map.get(s, s) for s in dex.string_pool]
        dex.type_names = [class_map.get(t, t) for t in dex.type_names]
        new_refs = []
        for ref in dex.method_refs:
            cls = class_map.get(ref.defining_class, ref.defining_class)
            name = ref.method_name
            if ref.defining_class in defined and name in method_map:
                name = method_map[name]
            new_refs.append(MethodRef(cls, name, ref.prototype_shorty))
        dex.method_refs = new_refs
        for cls in dex.defined_classes:
            cls.name = class_map.get(cls.name, cls.name)
        for name in list(method_map.values()):
            _intern_string(dex, name)

    if profile.rename_manifest_classes:
        java_map = {_java_name(o): _java_name(n)
                    for o, n in class_map.items()}
        pkg.manifest.components = [
            (kind, java_map.get(name, name))
            for kind, name in pkg.manifest.components]
        pkg.manifest.intent_filters = [
            (java_map.get(owner, owner), actions, categories)
            for owner, actions, categories in pkg.manifest.intent_filters]
    return pkg, log


# ---------------------------------------------------------------------------
# Junk code insertion


def insert_junk(pkg: AppPackage, spec: ObfSpec,
                ) -> tuple[AppPackage, TransformLog]:
    """Pad every method body with do-nothing opcodes from the tool's menu.

    Inserted opcodes never load strings or invoke anything, so the operand
    bookkeeping of the surrounding code is untouched.
    """
    pkg = copy.deepcopy(pkg)
    profile = spec.profile()
    rng = _rng_for(spec, profile)
    log = TransformLog(spec.technique, profile.name, spec.seed)
    for dex in pkg.dex_models:
        for cls in dex.defined_classes:
            for method in cls.methods:
                n_insert = int(round(spec.junk_density
                                     * (len(method.opcodes) + 1)))
                for _ in range(n_insert):
                    op = rng.choice(profile.junk_menu)
                    pos = rng.randrange(len(method.opcodes) + 1)
                    method.opcodes.insert(pos, op)
                if n_insert:
                    ref = dex.method_refs[method.method_idx]
                    key = f"{ref.defining_class}->{ref.method_name}"
                    log.junk_inserted[key] = n_insert
    return pkg, log


# ---------------------------------------------------------------------------
# Call indirection


def indirect_calls(pkg: AppPackage, spec: ObfSpec,
                   ) -> tuple[AppPackage, TransformLog]:
    """Route every app-internal call through a chain of fresh wrappers.

    chain_length wrappers are created per site; the caller now invokes the
    first, each wrapper invokes the next, the last invokes the original
    target. Profiles place wrappers in the calling class or in a separate
    helper class, and a profile may emit wrapper references without bodies
    to mimic tools that park trampolines in code we never see.
    """
    pkg = copy.deepcopy(pkg)
    profile = spec.profile()
    rng = _rng_for(spec, profile)
    log = TransformLog(spec.technique, profile.name, spec.seed)
    maker = _NameMaker(profile, rng, _all_pool_strings(pkg))
    defined = pkg.defined_class_names()
    if spec.chain_length < 1:
        raise ValueError("chain_length must be at least 1")

    for dex in pkg.dex_models:
        sites = []
        for ci, cls in enumerate(dex.defined_classes):
            for mi, method in enumerate(cls.methods):
                k = -1
                for pos, op in enumerate(method.opcodes):
                    if op not in INVOKE_OPS:
                        continue
                    k += 1
                    target = dex.method_refs[method.invoke_uses[k]]
                    if target.defining_class in defined:
                        sites.append((ci, mi, k, pos))
        if not sites:
            continue

        helper_cls = None
        if profile.helper_placement == "separate-helper" \
                and profile.helper_defined:
            helper_cls = DefinedClass(f"L{maker.fresh()};", [])
            _intern_type(dex, helper_cls.name)
            dex.defined_classes.append(helper_cls)

        for ci, mi, k, pos in sites:
            cls = dex.defined_classes[ci]
            method = cls.methods[mi]
            target_idx = method.invoke_uses[k]
            target = dex.method_refs[target_idx]
            if profile.helper_defined:
                home = cls if profile.helper_placement == "same-class" \
                    else helper_cls
                home_name = home.name
            else:
                home_name = f"L{maker.fresh()};"
            chain_refs = []
            for _ in range(spec.chain_length):
                wname = maker.fresh()
                chain_refs.append(_intern_ref(dex, home_name, wname, "V"))
            for step, ref_idx in enumerate(chain_refs):
                callee = chain_refs[step + 1] \
                    if step + 1 < len(chain_refs) else target_idx
                if profile.helper_defined:
                    home.methods.append(DefinedMethod(
                        ref_idx, [INVOKE_STATIC, 0x0E], [], [callee]))
            method.invoke_uses[k] = chain_refs[0]
            method.opcodes[pos] = INVOKE_STATIC
            site = f"{target.defining_class}->{target.method_name}"
            log.call_chains.append((site, spec.chain_length))
    return pkg, log


# ---------------------------------------------------------------------------
# Reflection


_FORNAME = ("Ljava/lang/Class;", "forName", "LL")
_GETMETHOD = ("Ljava/lang/Class;", "getDeclaredMethod", "LLL")
_MINVOKE = ("Ljava/lang/reflect/Method;", "invoke", "LLL")


def reflectify(pkg: AppPackage, spec: ObfSpec,
               ) -> tuple[AppPackage, TransformLog]:
    """Replace direct library calls with a lookup-and-invoke sequence.

    Only calls whose target lives outside the app are candidates; the
    fraction taken is seeded. Class and method names become string
    constants, which is exactly the trace this trade leaves behind.
    """
    pkg = copy.deepcopy(pkg)
    profile = spec.profile()
    rng = _rng_for(spec, profile)
    log = TransformLog(spec.technique, profile.name, spec.seed)
    defined = pkg.defined_class_names()
    if not 0.0 <= spec.reflection_fraction <= 1.0:
        raise ValueError("reflection_fraction must be in [0, 1]")

    for dex in pkg.dex_models:
        external = []
        for cls in dex.defined_classes:
            for method in cls.methods:
                for k, ref_idx in enumerate(method.invoke_uses):
                    ref = dex.method_refs[ref_idx]
                    if ref.defining_class not in defined:
                        external.append((id(method), k))
        n_pick = int(round(spec.reflection_fraction * len(external)))
        chosen = set(rng.sample(range(len(external)), n_pick))
        picked = {external[i] for i in chosen}

        forname = _intern_ref(dex, *_FORNAME)
        getmethod = _intern_ref(dex, *_GETMETHOD)
        minvoke = _intern_ref(dex, *_MINVOKE)

        for cls in dex.defined_classes:
            for method in cls.methods:
                if not any((id(method), k) in picked
                           for k in range(len(method.invoke_uses))):
                    continue
                new_ops, new_strs, new_calls = [], [], []
                si = ki = 0
                for op in method.opcodes:
                    if op in STRING_OPS:
                        new_ops.append(op)
                        new_strs.append(method.const_string_uses[si])
                        si += 1
                    elif op in INVOKE_OPS:
                        ref_idx = method.invoke_uses[ki]
                        key = (id(method), ki)
                        ki += 1
                        if key in picked:
                            target = dex.method_refs[ref_idx]
                            cls_str = _intern_string(
                                dex, _java_name(target.defining_class))
                            name_str = _intern_string(
                                dex, target.method_name)
                            new_ops.extend([CONST_STRING, INVOKE_STATIC,
                                            MOVE_RESULT_OBJECT, CONST_STRING,
                                            INVOKE_VIRTUAL,
                                            MOVE_RESULT_OBJECT,
                                            INVOKE_VIRTUAL])
                            new_strs.extend([cls_str, name_str])
                            new_calls.extend([forname, getmethod, minvoke])
                            log.reflected_sites.append(
                                f"{target.defining_class}->"
                                f"{target.method_name}")
                        else:
                            new_ops.append(op)
                            new_calls.append(ref_idx)
                    else:
                        new_ops.append(op)
                method.opcodes = new_ops
                method.const_string_uses = new_strs
                method.invoke_uses = new_calls
    return pkg, log


# ---------------------------------------------------------------------------
# String encryption


def _xor_cipher(text: str, rng: random.Random) -> str:
    raw = text.encode("utf-8")
    keystream = bytes(rng.getrandbits(8) for _ in raw)
    mixed = bytes(a ^ b for a, b in zip(raw, keystream))
    return base64.b64encode(mixed).decode("ascii")


def _shift_cipher(text: str, shift: int) -> str:
    out = []
    for ch in text:
        code = ord(ch)
        if 0x20 <= code <= 0x7E:
            code = 0x20 + (code - 0x20 + shift) % 0x5F
        out.append(chr(code))
    return "".join(out)


def encrypt_strings(pkg: AppPackage, spec: ObfSpec,
                    ) -> tuple[AppPackage, TransformLog]:
    """Substitute every loaded string constant with its ciphertext.

    Pool entries doing structural duty (type descriptors, method names,
    prototype shorthand) are left alone. After each rewritten load a call
    to the tool's decode helper is planted, matching the runtime shape
    such tools produce.
    """
    pkg = copy.deepcopy(pkg)
    profile = spec.profile()
    rng = _rng_for(spec, profile)
    log = TransformLog(spec.technique, profile.name, spec.seed)
    maker = _NameMaker(profile, rng, _all_pool_strings(pkg))
    shift = spec.seed % 0x5E + 1

    for dex in pkg.dex_models:
        structural = set(dex.type_names)
        for ref in dex.method_refs:
            structural.add(ref.method_name)
            structural.add(ref.prototype_shorty)
        for cls in dex.defined_classes:
            structural.add(cls.name)

        used = set()
        for cls in dex.defined_classes:
            for method in cls.methods:
                used.update(method.const_string_uses)
        targets = {idx for idx in used
                   if dex.string_pool[idx] not in structural}
        if not targets:
            continue

        if profile.helper_placement == "same-class" and dex.defined_classes:
            helper_home = dex.defined_classes[0]
        elif profile.helper_defined:
            helper_home = DefinedClass(f"L{maker.fresh()};", [])
            _intern_type(dex, helper_home.name)
            dex.defined_classes.append(helper_home)
        else:
            helper_home = None
        helper_cls_name = helper_home.name if helper_home is not None \
            else f"L{maker.fresh()};"
        dec_ref = _intern_ref(dex, helper_cls_name, maker.fresh(), "LL")
        if helper_home is not None and profile.helper_defined:
            helper_home.methods.append(
                DefinedMethod(dec_ref, [CONST4, 0x0E], [], []))

        for idx in sorted(targets):
            plain = dex.string_pool[idx]
            if profile.cipher == "aes-like":
                cipher = _xor_cipher(plain, rng)
            else:
                cipher = _shift_cipher(plain, shift)
            dex.string_pool[idx] = cipher
            log.encrypted_strings.append((plain, cipher))

        for cls in dex.defined_classes:
            for method in cls.methods:
                if not any(i in targets for i in method.const_string_uses):
                    continue
                new_ops, new_strs, new_calls = [], [], []
                si = ki = 0
                for op in method.opcodes:
                    if op in STRING_OPS:
                        str_idx = method.const_string_uses[si]
                        si += 1
                        new_ops.append(op)
                        new_strs.append(str_idx)
                        if str_idx in targets:
                            new_ops.append(INVOKE_STATIC)
                            new_ops.append(MOVE_RESULT_OBJECT)
                            new_calls.append(dec_ref)
                    elif op in INVOKE_OPS:
                        new_ops.append(op)
                        new_calls.append(method.invoke_uses[ki])
                        ki += 1
                    else:
                        new_ops.append(op)
                method.opcodes = new_ops
                method.const_string_uses = new_strs
                method.invoke_uses = new_calls
    return pkg, log


# ---------------------------------------------------------------------------
# Dispatch and byte-level convenience


_TRANSFORMS = {
    "Renaming": rename,
    "JunkCodeInsertion": insert_junk,
    "CallIndirection": indirect_calls,
    "Reflection": reflectify,
    "Encryption": encrypt_strings,
}


def apply_technique(pkg: AppPackage, spec: ObfSpec,
                    ) -> tuple[AppPackage, TransformLog]:
    if spec.technique not in _TRANSFORMS:
        raise ValueError(f"unknown technique {spec.technique!r}")
    return _TRANSFORMS[spec.technique](pkg, spec)


def load_package(apk_bytes: bytes) -> AppPackage:
    """Parse bytes into a transform target, keeping unmodeled entries raw."""
    model = open_apk(apk_bytes)
    extras: dict[str, bytes] = {}
    cert_der = None
    try:
        zf = zipfile.ZipFile(io.BytesIO(apk_bytes))
    except Exception as exc:          # pragma: no cover - open_apk vetted it
        raise NotAZip(str(exc)) from exc
    with zf:
        for info in zf.infolist():
            if info.is_dir() or info.filename == MANIFEST_PATH \
                    or _DEX_NAME.match(info.filename):
                continue
            blob = zf.read(info.filename)
            lower = info.filename.lower()
            if cert_der is None and lower.startswith("meta-inf/") and \
                    lower.endswith((".rsa", ".dsa", ".ec")):
                cert_der = blob
                continue
            extras[info.filename] = blob
    return AppPackage(model.manifest, list(model.dex_models), extras,
                      cert_der)


def serialize_package(pkg: AppPackage) -> bytes:
    return serialize_min_apk(pkg.manifest, pkg.dex_models,
                             pkg.extra_entries, pkg.cert_der)


def obfuscate_apk_bytes(apk_bytes: bytes, spec: ObfSpec,
                        ) -> tuple[bytes, TransformLog]:
    """Parse, transform, and re-serialize in one step."""
    pkg = load_package(apk_bytes)
    transformed, log = apply_technique(pkg, spec)
    return serialize_package(transformed), log
