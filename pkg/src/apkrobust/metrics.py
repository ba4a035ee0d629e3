"""Quantifying how features survive transformation, and detector quality.

Persistence and overlap share one agreement measure: the fraction of
positions, among those active on either side, that hold identical values.
On binary vectors that is exactly the Jaccard similarity of the active
sets. Discrepancy ranks count-valued features by how hard transformation
moves them, averaged first within and then across tools so that a heavily
represented tool cannot dominate the ranking.
"""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field
from typing import NamedTuple

from .errors import (FamilyMismatch, LengthMismatch, MissingFamily,
                     SingleClassLabels)
from .features import BINARY_FAMILIES, FAMILIES
from .vectorize import FeatureVector, Vocabulary

FREQUENCY_FAMILIES = tuple(f for f in FAMILIES if f not in BINARY_FAMILIES)


def _agreement(a: FeatureVector, b: FeatureVector) -> float:
    if a.family != b.family:
        raise FamilyMismatch(f"cannot compare {a.family} with {b.family}")
    union = set(a.values) | set(b.values)
    if not union:
        return 1.0
    same = sum(1 for i in union if a.values.get(i) == b.values.get(i))
    return same / len(union)


def persistence(v_clean: FeatureVector, v_obf: FeatureVector) -> float:
    """Share of active positions unchanged between a clean/obfuscated pair."""
    return _agreement(v_clean, v_obf)


def tool_overlap(v_tool_a: FeatureVector, v_tool_b: FeatureVector) -> float:
    """Same agreement measure, applied across two tools' outputs."""
    return _agreement(v_tool_a, v_tool_b)


class Pair(NamedTuple):
    clean_id: str
    obf_id: str
    tool: str
    technique: str


@dataclass
class PairedCorpus:
    """Clean/obfuscated vector pairs plus the vocabulary that named them."""

    pairs: list[Pair]
    vectors: dict[str, dict[str, FeatureVector]]
    vocab: Vocabulary | None = None

    def __post_init__(self):
        for pair in self.pairs:
            for app_id in (pair.clean_id, pair.obf_id):
                if app_id not in self.vectors:
                    raise ValueError(f"pair references unknown app {app_id!r}")

    def vector(self, app_id: str, family: str) -> FeatureVector:
        per_family = self.vectors[app_id]
        if family not in per_family:
            raise MissingFamily(app_id, family)
        return per_family[family]


def family_persistence(paired: PairedCorpus, family: str,
                       ) -> dict[tuple[str, str], float]:
    """Mean persistence per (tool, technique) cell; empty cells absent."""
    sums: dict[tuple[str, str], float] = defaultdict(float)
    counts: dict[tuple[str, str], int] = defaultdict(int)
    for pair in paired.pairs:
        score = persistence(paired.vector(pair.clean_id, family),
                            paired.vector(pair.obf_id, family))
        key = (pair.tool, pair.technique)
        sums[key] += score
        counts[key] += 1
    return {key: sums[key] / counts[key] for key in sums}


def family_tool_overlap(paired: PairedCorpus, family: str,
                        ) -> dict[tuple[str, str, str], float]:
    """Mean pairwise cross-tool agreement, keyed (technique, toolA, toolB).

    Apps contribute whenever two tools both produced an output for the same
    clean app under the same technique.
    """
    by_source: dict[tuple[str, str], dict[str, str]] = defaultdict(dict)
    for pair in paired.pairs:
        by_source[(pair.clean_id, pair.technique)][pair.tool] = pair.obf_id
    sums: dict[tuple[str, str, str], float] = defaultdict(float)
    counts: dict[tuple[str, str, str], int] = defaultdict(int)
    for (clean_id, technique), by_tool in by_source.items():
        tools = sorted(by_tool)
        for i, tool_a in enumerate(tools):
            for tool_b in tools[i + 1:]:
                score = tool_overlap(
                    paired.vector(by_tool[tool_a], family),
                    paired.vector(by_tool[tool_b], family))
                key = (technique, tool_a, tool_b)
                sums[key] += score
                counts[key] += 1
    return {key: sums[key] / counts[key] for key in sums}


def discrepancy_topk(paired: PairedCorpus, k: int = 15,
                     families=FREQUENCY_FAMILIES,
                     ) -> dict[str, list[tuple[str, float]]]:
    """Per technique, the count features transformation moves the most.

    A feature's score under one tool is its mean absolute count change over
    that tool's pairs; the reported score averages the per-tool means. Only
    features that moved at all are listed, highest first, ties by name.
    """
    if paired.vocab is None:
        raise ValueError("discrepancy ranking needs the vocabulary for "
                         "feature names")
    by_cell: dict[tuple[str, str], list[Pair]] = defaultdict(list)
    for pair in paired.pairs:
        by_cell[(pair.technique, pair.tool)].append(pair)

    techniques = sorted({t for t, _tool in by_cell})
    out: dict[str, list[tuple[str, float]]] = {}
    for technique in techniques:
        tool_means: list[dict[tuple[str, int], float]] = []
        for (tech, _tool), cell_pairs in sorted(by_cell.items()):
            if tech != technique:
                continue
            acc: dict[tuple[str, int], float] = defaultdict(float)
            for pair in cell_pairs:
                for family in families:
                    vc = paired.vector(pair.clean_id, family)
                    vo = paired.vector(pair.obf_id, family)
                    for col in set(vc.values) | set(vo.values):
                        delta = abs(vc.values.get(col, 0.0)
                                    - vo.values.get(col, 0.0))
                        if delta:
                            acc[(family, col)] += delta
            n = len(cell_pairs)
            tool_means.append({key: total / n for key, total in acc.items()})
        merged: dict[tuple[str, int], float] = defaultdict(float)
        for means in tool_means:
            for key, mean in means.items():
                merged[key] += mean
        n_tools = len(tool_means)
        ranked = []
        for (family, col), total in merged.items():
            name = paired.vocab.families[family][col][0]
            ranked.append((name, total / n_tools))
        ranked.sort(key=lambda e: (-e[1], e[0]))
        out[technique] = ranked[:k]
    return out


class EvalResult(NamedTuple):
    tpr: float
    fpr: float
    a_mean: float


def eval_metrics(preds, labels) -> EvalResult:
    """Detection rates on a labeled set; labels use 1 for malware."""
    preds = list(preds)
    labels = list(labels)
    if len(preds) != len(labels):
        raise LengthMismatch(f"{len(preds)} predictions for "
                             f"{len(labels)} labels")
    positives = sum(1 for y in labels if y == 1)
    negatives = len(labels) - positives
    if positives == 0 or negatives == 0:
        raise SingleClassLabels("evaluation needs both classes present")
    tp = sum(1 for p, y in zip(preds, labels) if y == 1 and p == 1)
    fp = sum(1 for p, y in zip(preds, labels) if y == 0 and p == 1)
    tpr = tp / positives
    fpr = fp / negatives
    return EvalResult(tpr, fpr, (tpr + 1.0 - fpr) / 2.0)


class InsensitivityResult(NamedTuple):
    agreement: float
    positive_jaccard: float


def insensitivity(preds_clean, preds_obf) -> InsensitivityResult:
    """How little predictions move when the inputs are transformed.

    Agreement is the headline number. The positive-set Jaccard is a second
    view that ignores apps neither side flags; with no positives anywhere
    it is taken as 1.0 since nothing changed.
    """
    pc = list(preds_clean)
    po = list(preds_obf)
    if len(pc) != len(po):
        raise LengthMismatch(f"{len(pc)} clean predictions for "
                             f"{len(po)} transformed ones")
    if not pc:
        raise LengthMismatch("cannot compare empty prediction lists")
    agreement = sum(1 for a, b in zip(pc, po) if a == b) / len(pc)
    pos_c = {i for i, p in enumerate(pc) if p == 1}
    pos_o = {i for i, p in enumerate(po) if p == 1}
    union = pos_c | pos_o
    jaccard = 1.0 if not union else len(pos_c & pos_o) / len(union)
    return InsensitivityResult(agreement, jaccard)


@dataclass
class RobustnessReport:
    """Flat collection of every robustness surface, ready to serialize."""

    persistence: dict[str, dict[tuple[str, str], float]] = \
        field(default_factory=dict)
    overlap: dict[str, dict[tuple[str, str, str], float]] = \
        field(default_factory=dict)
    discrepancy: dict[str, list[tuple[str, float]]] = \
        field(default_factory=dict)
    insensitivity: dict[str, dict[tuple[str, str], InsensitivityResult]] = \
        field(default_factory=dict)

    def csv_rows(self):
        """(metric, family, tool, technique, feature, value) tuples."""
        for family, cells in sorted(self.persistence.items()):
            for (tool, technique), value in sorted(cells.items()):
                yield ("persistence", family, tool, technique, "", value)
        for family, cells in sorted(self.overlap.items()):
            for (technique, ta, tb), value in sorted(cells.items()):
                yield ("overlap", family, f"{ta}|{tb}", technique, "", value)
        for technique, entries in sorted(self.discrepancy.items()):
            for name, value in entries:
                yield ("discrepancy", "", "", technique, name, value)
        for family, cells in sorted(self.insensitivity.items()):
            for (tool, technique), res in sorted(cells.items()):
                yield ("insensitivity", family, tool, technique, "",
                       res.agreement)
                yield ("insensitivity_jaccard", family, tool, technique, "",
                       res.positive_jaccard)

    def to_json(self) -> str:
        doc = {
            "persistence": {
                family: {f"{tool}/{tech}": value
                         for (tool, tech), value in cells.items()}
                for family, cells in self.persistence.items()},
            "overlap": {
                family: {f"{tech}/{ta}|{tb}": value
                         for (tech, ta, tb), value in cells.items()}
                for family, cells in self.overlap.items()},
            "discrepancy": self.discrepancy,
            "insensitivity": {
                family: {f"{tool}/{tech}": {"agreement": r.agreement,
                                            "positive_jaccard":
                                                r.positive_jaccard}
                         for (tool, tech), r in cells.items()}
                for family, cells in self.insensitivity.items()},
        }
        return json.dumps(doc, indent=2)
