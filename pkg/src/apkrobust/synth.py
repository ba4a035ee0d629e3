"""Fixture synthesis: model builders, a minimal APK serializer, corpora.

Everything here exists to make desk-scale experiments possible. The
serialized packages parse back losslessly through the container module but
are not installable artifacts: no resource table, no real signature, and
code that only has to satisfy the decoder.
"""

from __future__ import annotations

import io
import random
import zipfile
from dataclasses import dataclass

from .axml import ManifestModel, feature_is_hardware, manifest_to_xml
from .corpus import AppRecord, CorpusManifest, GOODWARE, MALWARE
from .dex import DefinedClass, DefinedMethod, DexModel, MethodRef, write_dex
from .errors import EmptyModel, UnserializableModel

INVOKE_VIRTUAL = 0x6E
CONST_STRING = 0x1A
CONST4 = 0x12
RETURN_VOID = 0x0E


class DexBuilder:
    """Assembles a self-consistent DexModel from class/method descriptions.

    Method code is a list of atoms:
      int                               plain opcode byte
      ("str", text)                     const-string load of text
      ("call", cls, name, shorty)       invoke, default invoke-virtual
      ("call", cls, name, shorty, op)   invoke with an explicit opcode

    The builder interns strings, type names, and method references in first
    use order, which keeps output deterministic for a fixed description.
    """

    def __init__(self):
        self._pool: list[str] = []
        self._pool_idx: dict[str, int] = {}
        self._types: list[str] = []
        self._type_set: set[str] = set()
        self._refs: list[MethodRef] = []
        self._ref_idx: dict[MethodRef, int] = {}
        self._classes: list[tuple[str, list[tuple[str, list]]]] = []

    def string(self, text: str) -> int:
        if text not in self._pool_idx:
            self._pool_idx[text] = len(self._pool)
            self._pool.append(text)
        return self._pool_idx[text]

    def type_name(self, descriptor: str):
        self.string(descriptor)
        if descriptor not in self._type_set:
            self._type_set.add(descriptor)
            self._types.append(descriptor)

    def method_ref(self, cls: str, name: str, shorty: str = "V") -> int:
        ref = MethodRef(cls, name, shorty)
        if ref not in self._ref_idx:
            self.type_name(cls)
            self.string(name)
            self.string(shorty)
            self._ref_idx[ref] = len(self._refs)
            self._refs.append(ref)
        return self._ref_idx[ref]

    def add_class(self, name: str, methods: list[tuple[str, list]]):
        self._classes.append((name, methods))

    def build(self) -> DexModel:
        # defined methods claim the low method_ref slots, in declaration
        # order, so each class body list is ascending as the writer requires
        for cls_name, methods in self._classes:
            self.type_name(cls_name)
            for mname, _code in methods:
                self.method_ref(cls_name, mname, "V")

        classes = []
        for cls_name, methods in self._classes:
            bodies = []
            for mname, code in methods:
                midx = self.method_ref(cls_name, mname, "V")
                opcodes: list[int] = []
                strs: list[int] = []
                calls: list[int] = []
                for atom in code:
                    if isinstance(atom, int):
                        opcodes.append(atom)
                    elif atom[0] == "str":
                        opcodes.append(CONST_STRING)
                        strs.append(self.string(atom[1]))
                    elif atom[0] == "call":
                        op = atom[4] if len(atom) > 4 else INVOKE_VIRTUAL
                        opcodes.append(op)
                        calls.append(self.method_ref(atom[1], atom[2], atom[3]))
                    else:
                        raise UnserializableModel(f"unknown code atom {atom!r}")
                bodies.append(DefinedMethod(midx, opcodes, strs, calls))
            classes.append(DefinedClass(cls_name, bodies))
        return DexModel(list(self._pool), list(self._types), list(self._refs),
                        classes)


def build_manifest(package="", activities=(), services=(), receivers=(),
                   providers=(), used_permissions=(), declared_permissions=(),
                   intent_filters=(), uses_features=()) -> ManifestModel:
    components = [("activity", n) for n in activities]
    components += [("service", n) for n in services]
    components += [("receiver", n) for n in receivers]
    components += [("provider", n) for n in providers]
    return ManifestModel(
        package_name=package,
        used_permissions=set(used_permissions),
        declared_permissions=set(declared_permissions),
        components=components,
        intent_filters=[(owner, frozenset(a), frozenset(c))
                        for owner, a, c in intent_filters],
        uses_features={(n, feature_is_hardware(n)) for n in uses_features},
    )


def serialize_min_apk(manifest: ManifestModel, dex_models: list[DexModel],
                      extra_entries: dict[str, bytes] | None = None,
                      cert_der: bytes | None = None) -> bytes:
    """Pack models into deterministic APK bytes.

    Entry order: manifest, classes*.dex, extra entries in dict order, then
    the certificate blob when given. Timestamps are pinned so identical
    models serialize to identical bytes.
    """
    if not dex_models:
        raise EmptyModel("need at least one dex model")
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", zipfile.ZIP_DEFLATED) as zf:
        def put(path, blob):
            info = zipfile.ZipInfo(path, date_time=(1980, 1, 1, 0, 0, 0))
            info.compress_type = zipfile.ZIP_DEFLATED
            info.external_attr = 0o644 << 16
            zf.writestr(info, blob)

        put("AndroidManifest.xml", manifest_to_xml(manifest))
        for i, dexm in enumerate(dex_models):
            name = "classes.dex" if i == 0 else f"classes{i + 1}.dex"
            put(name, write_dex(dexm))
        for path, blob in (extra_entries or {}).items():
            put(path, blob)
        if cert_der is not None:
            put("META-INF/CERT.RSA", cert_der)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# synthetic corpora


@dataclass(frozen=True)
class CorpusRecipe:
    """Controls which families carry class signal in generated apps."""

    signal_families: frozenset = frozenset({"Permissions", "ApiFunctions"})
    decoy_strings: bool = True
    decoy_correlation: float = 0.9
    internal_call: bool = True


DEFAULT_RECIPE = CorpusRecipe()

BASE_PERMISSIONS = (
    "android.permission.INTERNET",
    "android.permission.ACCESS_NETWORK_STATE",
    "android.permission.WAKE_LOCK",
)
MALWARE_PERMISSIONS = (
    "android.permission.SEND_SMS",
    "android.permission.READ_SMS",
    "android.permission.RECEIVE_BOOT_COMPLETED",
)
GOODWARE_PERMISSIONS = (
    "android.permission.BLUETOOTH",
    "android.permission.NFC",
    "android.permission.VIBRATE",
)
BASE_APIS = (
    ("Landroid/util/Log;", "i", "ILL"),
    ("Landroid/content/Context;", "getString", "LI"),
)
MALWARE_APIS = (
    ("Landroid/telephony/SmsManager;", "sendTextMessage", "VLLLLL"),
    ("Landroid/telephony/TelephonyManager;", "getDeviceId", "L"),
    ("Ljava/net/URL;", "openConnection", "L"),
    ("Ljava/lang/Runtime;", "exec", "LL"),
)
GOODWARE_APIS = (
    ("Landroid/widget/Toast;", "show", "V"),
    ("Landroid/view/View;", "invalidate", "V"),
    ("Landroid/os/Handler;", "post", "ZL"),
    ("Ljavax/crypto/Cipher;", "getInstance", "LL"),
)
BASE_STRINGS = ("https://api.example.org/v1", "user_prefs")
MALWARE_DECOY_STRING = "http://collect.example.net/u"
GOODWARE_DECOY_STRING = "https://cdn.example.org/assets"

_PNG_STUB = b"\x89PNG\r\n\x1a\n" + b"\x00" * 8


def build_app(index: int, is_malware: bool, recipe: CorpusRecipe,
              rng: random.Random) -> bytes:
    """One synthetic app. Marker counts are balanced across classes so only
    the recipe's signal families separate them. The API markers include one
    watchlist hit per class (Runtime.exec vs Cipher.getInstance), so the
    ad-hoc family carries a behaviour tag on every app."""
    pkg = f"com.sample.a{index:04d}"
    pkg_path = pkg.replace(".", "/")
    main_cls = f"L{pkg_path}/Main;"
    util_cls = f"L{pkg_path}/Util;"

    perms = list(BASE_PERMISSIONS)
    if "Permissions" in recipe.signal_families:
        perms += MALWARE_PERMISSIONS if is_malware else GOODWARE_PERMISSIONS

    apis = list(BASE_APIS)
    if "ApiFunctions" in recipe.signal_families:
        apis += MALWARE_APIS if is_malware else GOODWARE_APIS

    strings = list(BASE_STRINGS)
    if recipe.decoy_strings:
        own = rng.random() < recipe.decoy_correlation
        decoy = (MALWARE_DECOY_STRING if is_malware == own
                 else GOODWARE_DECOY_STRING)
        strings.append(decoy)
    strings.append(f"cfg-{index:04d}-{rng.randrange(16 ** 6):06x}")

    atoms: list = [("str", s) for s in strings]
    atoms += [("call", c, n, s) for c, n, s in apis]
    rng.shuffle(atoms)
    if recipe.internal_call:
        atoms.append(("call", util_cls, "run", "V"))
    atoms.append(RETURN_VOID)

    builder = DexBuilder()
    builder.add_class(main_cls, [("onCreate", atoms)])
    builder.add_class(util_cls, [("run", [CONST4, RETURN_VOID])])

    manifest = build_manifest(
        package=pkg,
        activities=[f"{pkg}.Main"],
        services=[f"{pkg}.Util"],
        used_permissions=perms,
        intent_filters=[(f"{pkg}.Main",
                         ("android.intent.action.MAIN",),
                         ("android.intent.category.LAUNCHER",))],
    )
    extra = {
        "assets/blob.bin": bytes([0x80 | (index & 0x7F), 0x81,
                                  (index >> 8) & 0xFF, 0x00]),
        "res/drawable/mark.png": _PNG_STUB,
    }
    return serialize_min_apk(manifest, [builder.build()], extra)


def generate_corpus(n_apps: int, recipe: CorpusRecipe = DEFAULT_RECIPE,
                    seed: int = 0,
                    ) -> tuple[list[tuple[str, bytes]], CorpusManifest]:
    """Balanced two-class corpus with planted, recipe-controlled signal.

    Returns (apps, manifest) where apps is a list of (app_id, apk bytes) and
    the manifest's paths are relative "<app_id>.apk" names. Fully seeded:
    the same arguments always produce identical bytes.
    """
    if n_apps < 2:
        raise ValueError("a two-class corpus needs at least 2 apps")
    apps = []
    records = []
    for i in range(n_apps):
        is_malware = i % 2 == 1
        rng = random.Random(seed * 1_000_003 + i)
        blob = build_app(i, is_malware, recipe, rng)
        app_id = f"app{i:04d}"
        apps.append((app_id, blob))
        records.append(AppRecord(
            app_id=app_id,
            path=f"{app_id}.apk",
            vtd=(7 + i % 14) if is_malware else 0,
            label=MALWARE if is_malware else GOODWARE,
            origin="clean",
        ))
    return apps, CorpusManifest("synthetic", records)
