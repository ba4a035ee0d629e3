"""Seven feature families extracted from a parsed package model.

Families and their value kinds are fixed here; downstream vocabulary and
matrix code relies on this order:

    Permissions   binary     perm::
    Components    frequency  comp::
    ApiFunctions  binary     api::
    Opcodes       frequency  op2::
    Strings       binary     str::
    FileRelated   frequency  file::
    AdHoc         frequency  adhoc::
"""

from __future__ import annotations

import time
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources

from .apk import ApkModel
from .axml import ManifestModel
from .dex import code_events

FAMILIES = ("Permissions", "Components", "ApiFunctions", "Opcodes",
            "Strings", "FileRelated", "AdHoc")
BINARY_FAMILIES = frozenset({"Permissions", "ApiFunctions", "Strings"})

FAMILY_PREFIX = {
    "Permissions": "perm::",
    "Components": "comp::",
    "ApiFunctions": "api::",
    "Opcodes": "op2::",
    "Strings": "str::",
    "FileRelated": "file::",
    "AdHoc": "adhoc::",
}

_REFLECTIVE_RESOLVERS = frozenset({
    ("Ljava/lang/Class;", "forName"),
    ("Ljava/lang/Class;", "getMethod"),
    ("Ljava/lang/Class;", "getDeclaredMethod"),
})


def family_kind(family: str) -> str:
    return "binary" if family in BINARY_FAMILIES else "frequency"


@dataclass
class RawFeatureSet:
    """Named observations for one family of one app.

    Binary families store 1 for every present name; frequency families
    store positive counts. Absent names are implicit zeros.
    """

    family: str
    kind: str
    observations: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if self.kind != family_kind(self.family):
            raise ValueError(f"{self.family} is a {family_kind(self.family)} "
                             f"family, got kind {self.kind!r}")
        prefix = FAMILY_PREFIX[self.family]
        for name, value in self.observations.items():
            if not name.startswith(prefix):
                raise ValueError(f"{name!r} lacks the {prefix!r} prefix")
            if self.kind == "binary" and value != 1:
                raise ValueError(f"binary observation {name!r} has value "
                                 f"{value}")
            if value < 1:
                raise ValueError(f"observation {name!r} has value {value}")


def _binary(family: str, names) -> RawFeatureSet:
    return RawFeatureSet(family, "binary", {n: 1 for n in names})


def _frequency(family: str, counts: Counter) -> RawFeatureSet:
    return RawFeatureSet(family, "frequency",
                         {n: int(c) for n, c in counts.items() if c > 0})


_OFFICIAL_PERMISSIONS: frozenset | None = None


def load_official_permissions() -> frozenset:
    """The pinned platform permission snapshot shipped with the package."""
    global _OFFICIAL_PERMISSIONS
    if _OFFICIAL_PERMISSIONS is None:
        text = (resources.files("apkrobust.data")
                / "official_permissions.txt").read_text()
        _OFFICIAL_PERMISSIONS = frozenset(
            line.strip() for line in text.splitlines() if line.strip())
    return _OFFICIAL_PERMISSIONS


def _load_watchlist() -> list[tuple[str, str]]:
    text = (resources.files("apkrobust.data") / "watchlist.txt").read_text()
    pairs = []
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        tag, prefix = line.split(None, 1)
        pairs.append((tag, prefix))
    return pairs


def extract_permissions(manifest: ManifestModel,
                        official_list: frozenset | None = None,
                        ) -> RawFeatureSet:
    """Requested permissions, restricted to known vocabulary.

    A used permission counts when it is either in the official list or
    declared by the package itself; self-declared names additionally get a
    separate declared:: marker so custom permissions stay distinguishable
    from platform ones.
    """
    official = official_list if official_list is not None \
        else load_official_permissions()
    names = []
    for perm in manifest.used_permissions:
        if perm in official or perm in manifest.declared_permissions:
            names.append(f"perm::{perm}")
    for perm in manifest.declared_permissions:
        if perm not in official:
            names.append(f"perm::declared::{perm}")
    return _binary("Permissions", names)


def extract_components(manifest: ManifestModel) -> RawFeatureSet:
    counts: Counter = Counter()
    kind_totals: Counter = Counter()
    for kind, name in manifest.components:
        counts[f"comp::{kind}::{name}"] += 1
        kind_totals[kind] += 1
    for kind, total in kind_totals.items():
        counts[f"comp::#{kind}"] = total
    for _owner, actions, categories in manifest.intent_filters:
        counts["comp::#intentfilter"] += 1
        for action in actions:
            counts[f"comp::action::{action}"] += 1
        for category in categories:
            counts[f"comp::category::{category}"] += 1
    hw = sum(1 for _n, is_hw in manifest.uses_features if is_hw)
    sw = len(manifest.uses_features) - hw
    if hw:
        counts["comp::#feature.hw"] = hw
    if sw:
        counts["comp::#feature.sw"] = sw
    for name, _is_hw in manifest.uses_features:
        counts[f"comp::feature::{name}"] += 1
    return _frequency("Components", counts)


def extract_api_functions(apk: ApkModel) -> RawFeatureSet:
    """Externally defined methods the code actually invokes."""
    defined = apk.defined_class_names()
    names = set()
    for dex in apk.dex_models:
        for _cls, method in dex.iter_bodies():
            for event, idx in code_events(method):
                if event != "call":
                    continue
                ref = dex.method_refs[idx]
                if ref.defining_class in defined:
                    continue
                names.add(f"api::{ref.defining_class}->{ref.method_name}"
                          f"{ref.prototype_shorty}")
    return _binary("ApiFunctions", names)


def extract_opcode_bigrams(apk: ApkModel) -> RawFeatureSet:
    counts: Counter = Counter()
    for dex in apk.dex_models:
        for _cls, method in dex.iter_bodies():
            ops = method.opcodes
            for a, b in zip(ops, ops[1:]):
                counts[f"op2::{a}_{b}"] += 1
    return _frequency("Opcodes", counts)


def _printable_runs(blob: bytes, min_len: int = 4):
    run = bytearray()
    for byte in blob:
        if 0x20 <= byte <= 0x7E:
            run.append(byte)
        else:
            if len(run) >= min_len:
                yield run.decode("ascii")
            run.clear()
    if len(run) >= min_len:
        yield run.decode("ascii")


def extract_strings(apk: ApkModel) -> RawFeatureSet:
    """Code string constants plus printable runs found in text resources.

    Constants are taken as-is, whatever their length; the run length floor
    only gates what gets mined out of raw resource and asset bytes.
    """
    names = set()
    for dex in apk.dex_models:
        for _cls, method in dex.iter_bodies():
            for event, idx in code_events(method):
                if event == "str":
                    names.add(f"str::{dex.string_pool[idx]}")
    for blob in apk.text_blobs.values():
        for run in _printable_runs(blob):
            names.add(f"str::{run}")
    return _binary("Strings", names)


def extract_file_features(apk: ApkModel) -> RawFeatureSet:
    counts: Counter = Counter()
    dex_bytes = 0
    for entry in apk.entries:
        counts[f"file::{entry.extension}_{entry.magic_type}"] += 1
        if entry.magic_type == "dex":
            dex_bytes += entry.uncompressed_size
    counts["file::apk.size"] = apk.apk_size
    if dex_bytes:
        counts["file::dex.size"] = dex_bytes
    return _frequency("FileRelated", counts)


@dataclass(frozen=True)
class ExtractionBudget:
    """Wall-clock cap for the open-ended scans; the rest are linear."""

    adhoc_time_limit: float = 10.0


def extract_adhoc(apk: ApkModel,
                  budget: ExtractionBudget | None = None) -> RawFeatureSet:
    """Watchlist counters, certificate traits, reflective call targets.

    Reflective resolution is deliberately conservative: a resolver call is
    paired with the nearest preceding string constant in the same body, and
    any invoke in between voids the pairing. That misses indirect flows on
    purpose rather than guessing wrong.
    """
    budget = budget or ExtractionBudget()
    deadline = time.monotonic() + budget.adhoc_time_limit
    counts: Counter = Counter()

    cert = apk.cert
    if cert is not None:
        if cert.subject == cert.issuer:
            counts["adhoc::cert.self_signed"] = 1
        days = (cert.not_after - cert.not_before).total_seconds() / 86400.0
        if days < 365.0:
            bucket = "lt1y"
        elif days < 5 * 365.25:
            bucket = "1to5y"
        elif days < 25 * 365.25:
            bucket = "5to25y"
        else:
            bucket = "ge25y"
        counts[f"adhoc::cert.validity::{bucket}"] = 1
        counts[f"adhoc::cert.alg::{cert.algorithm}"] = 1

    watchlist = _load_watchlist()
    truncated = False
    for dex in apk.dex_models:
        for _cls, method in dex.iter_bodies():
            if time.monotonic() > deadline:
                truncated = True
                break
            last_string: int | None = None
            for event, idx in code_events(method):
                if event == "str":
                    last_string = idx
                    continue
                ref = dex.method_refs[idx]
                qualified = f"{ref.defining_class}->{ref.method_name}"
                for tag, prefix in watchlist:
                    if qualified.startswith(prefix):
                        counts[f"adhoc::{tag}"] += 1
                key = (ref.defining_class, ref.method_name)
                if key in _REFLECTIVE_RESOLVERS and last_string is not None:
                    target = dex.string_pool[last_string]
                    counts[f"adhoc::refl::{target}"] += 1
                last_string = None
        if truncated:
            break
    if truncated:
        counts["adhoc::truncated"] = 1
    return _frequency("AdHoc", counts)


def extract_all(apk: ApkModel,
                budget: ExtractionBudget | None = None,
                ) -> dict[str, RawFeatureSet]:
    """All seven families, keyed by family name in canonical order."""
    manifest = apk.manifest
    return {
        "Permissions": extract_permissions(manifest),
        "Components": extract_components(manifest),
        "ApiFunctions": extract_api_functions(apk),
        "Opcodes": extract_opcode_bigrams(apk),
        "Strings": extract_strings(apk),
        "FileRelated": extract_file_features(apk),
        "AdHoc": extract_adhoc(apk, budget),
    }
