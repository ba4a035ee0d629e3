"""Threshold-gated family selection and the end-to-end robust detector.

A family earns its place by clearing the same bar twice: clean detection
quality (mean of TPR and TNR) and prediction stability under obfuscation.
Families that pass are truncated to their top-ranked columns and fused
into one matrix for the final model.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .errors import (EmptyCorpus, MissingFamilyMetric, NoFamilySelected)
from .features import FAMILIES
from .forest import (ForestModel, TrainConfig, predict_labels, rank_features,
                     train_forest)
from .metrics import (EvalResult, PairedCorpus, eval_metrics, insensitivity)
from .vectorize import FeatureVector, Vocabulary, assemble_matrix


@dataclass(frozen=True)
class SelectionConfig:
    threshold: float = 0.85
    per_family_cap: int = 2000


def select_families(ameans: dict[str, float], insens: dict[str, float],
                    threshold: float) -> list[str]:
    """Families whose clean quality and stability both reach the threshold.

    The two metric maps must rate exactly the same families. The result
    keeps canonical family order.
    """
    if set(ameans) != set(insens):
        missing = set(ameans) ^ set(insens)
        raise MissingFamilyMetric(f"metric maps disagree on {sorted(missing)}")
    for family in ameans:
        if family not in FAMILIES:
            raise MissingFamilyMetric(f"unknown family {family!r}")
    selected = [f for f in FAMILIES if f in ameans
                and ameans[f] >= threshold and insens[f] >= threshold]
    if not selected:
        raise NoFamilySelected(f"no family clears threshold {threshold}")
    return selected


def truncate_family(ranking, cap: int = 2000) -> list[int]:
    """Keep the first cap entries of an importance-ordered column list."""
    if cap < 1:
        raise ValueError("cap must be positive")
    ranking = list(ranking)
    return ranking[:min(cap, len(ranking))]


@dataclass
class RobustFeatureSet:
    """The surviving columns, per family, in ascending column order."""

    families: list[str]
    kept: dict[str, list[int]]

    @property
    def width(self) -> int:
        return sum(len(self.kept[f]) for f in self.families)


@dataclass
class SelectionReport:
    threshold: float
    per_family_cap: int
    family_ameans: dict[str, float]
    family_insens: dict[str, float]
    selected: list[str]
    kept_widths: dict[str, int]
    final_width: int
    evaluation: dict[str, EvalResult] = field(default_factory=dict)

    def to_json(self) -> str:
        doc = {
            "threshold": self.threshold,
            "per_family_cap": self.per_family_cap,
            "families": {
                f: {"a_mean": self.family_ameans[f],
                    "insensitivity": self.family_insens[f],
                    "selected": f in self.selected,
                    "kept": self.kept_widths.get(f, 0)}
                for f in self.family_ameans},
            "selected": self.selected,
            "final_width": self.final_width,
            "evaluation": {name: {"tpr": r.tpr, "fpr": r.fpr,
                                  "a_mean": r.a_mean}
                           for name, r in self.evaluation.items()},
        }
        return json.dumps(doc, indent=2)


@dataclass
class DetectorResult:
    model: ForestModel
    features: RobustFeatureSet
    family_models: dict[str, ForestModel]
    report: SelectionReport


def _predict_map(model: ForestModel, vectors, vocab, family):
    """Predictions for every app that has the family, keyed by app id."""
    app_ids = sorted(vectors)
    per_app = {a: {family: vectors[a][family]} for a in app_ids}
    matrix = assemble_matrix(per_app, vocab, families=[family])
    preds = predict_labels(model, matrix)
    return dict(zip(matrix.app_ids, (int(p) for p in preds)))


def build_detector(train_vectors: dict[str, dict[str, FeatureVector]],
                   train_labels: dict[str, int],
                   eval_vectors: dict[str, dict[str, FeatureVector]],
                   eval_labels: dict[str, int],
                   paired: PairedCorpus,
                   vocab: Vocabulary,
                   cfg: SelectionConfig = SelectionConfig(),
                   train_cfg: TrainConfig = TrainConfig()) -> DetectorResult:
    """Run the whole selection pipeline and train the fused model.

    The paired corpus supplies the obfuscated evaluation set; obfuscated
    apps inherit the label of the clean app they came from. Per-family
    insensitivity averages the per-(tool, technique) agreement cells with
    equal weight, so a technique with many pairs cannot drown out a rare
    one.
    """
    if not paired.pairs:
        raise EmptyCorpus("insensitivity needs at least one pair")

    cells: dict[tuple[str, str], list] = {}
    for pair in paired.pairs:
        cells.setdefault((pair.tool, pair.technique), []).append(pair)

    family_models: dict[str, ForestModel] = {}
    family_ameans: dict[str, float] = {}
    family_insens: dict[str, float] = {}
    for family in FAMILIES:
        if vocab.family_width(family) == 0:
            # Nothing to train on; score the family so it can never pass
            # the selection threshold.
            family_ameans[family] = 0.0
            family_insens[family] = 0.0
            continue
        matrix = assemble_matrix(train_vectors, vocab, families=[family],
                                 labels=train_labels)
        model = train_forest(matrix, matrix.labels, train_cfg)
        family_models[family] = model

        eval_matrix = assemble_matrix(eval_vectors, vocab, families=[family])
        preds = predict_labels(model, eval_matrix)
        truth = [eval_labels[a] for a in eval_matrix.app_ids]
        family_ameans[family] = eval_metrics(preds, truth).a_mean

        paired_preds = _predict_map(model, paired.vectors, vocab, family)
        agreements = []
        for _cell, cell_pairs in sorted(cells.items()):
            clean = [paired_preds[p.clean_id] for p in cell_pairs]
            obf = [paired_preds[p.obf_id] for p in cell_pairs]
            agreements.append(insensitivity(clean, obf).agreement)
        family_insens[family] = sum(agreements) / len(agreements)

    selected = select_families(family_ameans, family_insens, cfg.threshold)

    kept: dict[str, list[int]] = {}
    for family in selected:
        ranking = rank_features(family_models[family])
        kept[family] = sorted(truncate_family(ranking, cfg.per_family_cap))
    features = RobustFeatureSet(selected, kept)

    final_matrix = assemble_matrix(train_vectors, vocab, families=selected,
                                   column_filter=kept, labels=train_labels)
    final_model = train_forest(final_matrix, final_matrix.labels, train_cfg)

    evaluation: dict[str, EvalResult] = {}
    clean_matrix = assemble_matrix(eval_vectors, vocab, families=selected,
                                   column_filter=kept)
    clean_preds = predict_labels(final_model, clean_matrix)
    clean_truth = [eval_labels[a] for a in clean_matrix.app_ids]
    evaluation["clean"] = eval_metrics(clean_preds, clean_truth)

    obf_label = {p.obf_id: eval_labels[p.clean_id] for p in paired.pairs
                 if p.clean_id in eval_labels}
    by_technique: dict[str, list[str]] = {}
    for pair in paired.pairs:
        if pair.obf_id in obf_label:
            by_technique.setdefault(pair.technique, []).append(pair.obf_id)
    all_obf: list[str] = []
    for technique in sorted(by_technique):
        ids = by_technique[technique]
        all_obf.extend(ids)
        evaluation[technique] = _eval_ids(final_model, paired, vocab,
                                          selected, kept, ids, obf_label)
    if all_obf:
        evaluation["obfuscated"] = _eval_ids(final_model, paired, vocab,
                                             selected, kept, all_obf,
                                             obf_label)

    report = SelectionReport(
        threshold=cfg.threshold,
        per_family_cap=cfg.per_family_cap,
        family_ameans=family_ameans,
        family_insens=family_insens,
        selected=selected,
        kept_widths={f: len(cols) for f, cols in kept.items()},
        final_width=features.width,
        evaluation=evaluation,
    )
    return DetectorResult(final_model, features, family_models, report)


def _eval_ids(model, paired, vocab, families, kept, ids, labels):
    subset = {a: paired.vectors[a] for a in dict.fromkeys(ids)}
    matrix = assemble_matrix(subset, vocab, families=families,
                             column_filter=kept)
    preds = predict_labels(model, matrix)
    truth = [labels[a] for a in matrix.app_ids]
    return eval_metrics(preds, truth)
