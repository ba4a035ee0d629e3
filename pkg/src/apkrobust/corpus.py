"""Corpus manifests: app records, detection-count labeling, dataset splits.

Manifests are the only ingestion path; there is no network fetching. Each
record names an app id, an on-disk path, an optional positive-detection
count (vtd), and, for obfuscated records, the tool/technique tags plus a
link back to the clean original.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

from .errors import InvalidManifest, MissingVtd

GOODWARE = "goodware"
MALWARE = "malware"
UNLABELED = "unlabeled"
EXCLUDED = "excluded"

LABEL_TO_INT = {GOODWARE: 0, MALWARE: 1}


@dataclass(frozen=True)
class LabelRule:
    malware_min_vtd: int = 7
    goodware_vtd: int = 0

    def __post_init__(self):
        if self.malware_min_vtd <= self.goodware_vtd:
            raise InvalidManifest("malware_min_vtd must exceed goodware_vtd")


DEFAULT_RULE = LabelRule()


@dataclass
class AppRecord:
    app_id: str
    path: str
    vtd: int | None = None
    label: str = UNLABELED
    origin: str = "clean"            # clean | obfuscated
    tool: str | None = None
    technique: str | None = None
    clean_ref: str | None = None


@dataclass
class CorpusManifest:
    name: str
    records: list[AppRecord] = field(default_factory=list)

    def __post_init__(self):
        self.validate()

    def validate(self):
        ids = set()
        for rec in self.records:
            if rec.app_id in ids:
                raise InvalidManifest(f"duplicate app id {rec.app_id!r}")
            ids.add(rec.app_id)
        for rec in self.records:
            if rec.origin == "obfuscated":
                if not rec.tool or not rec.technique:
                    raise InvalidManifest(
                        f"obfuscated record {rec.app_id!r} lacks tool/technique")
                if rec.clean_ref not in ids:
                    raise InvalidManifest(
                        f"record {rec.app_id!r} has dangling clean_ref "
                        f"{rec.clean_ref!r}")
            elif rec.origin != "clean":
                raise InvalidManifest(
                    f"record {rec.app_id!r} has unknown origin {rec.origin!r}")
            if rec.vtd is not None and rec.label != UNLABELED:
                expected = label(rec, DEFAULT_RULE)
                if expected != EXCLUDED and rec.label != expected:
                    raise InvalidManifest(
                        f"record {rec.app_id!r} label {rec.label!r} "
                        f"contradicts vtd={rec.vtd}")

    def by_id(self) -> dict[str, AppRecord]:
        return {rec.app_id: rec for rec in self.records}

    def to_json(self) -> str:
        return json.dumps(
            {"name": self.name, "records": [asdict(r) for r in self.records]},
            indent=2)

    @classmethod
    def from_json(cls, text: str) -> "CorpusManifest":
        try:
            doc = json.loads(text)
            records = [AppRecord(**r) for r in doc["records"]]
            return cls(doc["name"], records)
        except InvalidManifest:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidManifest(f"bad manifest document: {exc}") from None


def label(record: AppRecord, rule: LabelRule = DEFAULT_RULE) -> str:
    """Apply the detection-count rule; intermediate counts are excluded."""
    if record.vtd is None:
        raise MissingVtd(f"record {record.app_id!r} has no vtd value")
    if record.vtd >= rule.malware_min_vtd:
        return MALWARE
    if record.vtd == rule.goodware_vtd:
        return GOODWARE
    return EXCLUDED


def derive_success_split(manifest: CorpusManifest,
                         flags: list[tuple[str, str, str, bool]],
                         ) -> dict[str, CorpusManifest]:
    """Split a clean corpus by per-(app, tool, technique) success flags.

    An app lands in the successfully-obfuscated subset when at least one
    technique worked under every tool that attempted it. Returns two
    manifests keyed "NonObf" (all clean labeled apps) and "CleanSuccObf".
    """
    outcome: dict[str, dict[str, list[bool]]] = {}
    for app_id, _tool, technique, ok in flags:
        outcome.setdefault(app_id, {}).setdefault(technique, []).append(ok)

    clean = [r for r in manifest.records if r.origin == "clean"]
    succ_ids = set()
    for rec in clean:
        per_technique = outcome.get(rec.app_id, {})
        if any(oks and all(oks) for oks in per_technique.values()):
            succ_ids.add(rec.app_id)

    return {
        "NonObf": CorpusManifest("NonObf", list(clean)),
        "CleanSuccObf": CorpusManifest(
            "CleanSuccObf", [r for r in clean if r.app_id in succ_ids]),
    }
