"""Command line pipeline: generate, transform, extract, train, select.

Commands communicate through files so any stage can be rerun or swapped
out. Progress goes to stderr; data only ever goes to the paths you name.

Exit codes: 0 success, 2 usage error, 3 bad config file, 4 missing input,
5 a declared toolkit error (bad package, empty corpus, and so on).
"""

from __future__ import annotations

import argparse
import csv
import json
import random
import sys
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:          # 3.10 fallback
    import tomli as tomllib

from .apk import open_apk
from .corpus import (AppRecord, CorpusManifest, DEFAULT_RULE,
                     LABEL_TO_INT, derive_success_split, label)
from .errors import ToolkitError
from .features import FAMILIES, RawFeatureSet, extract_all, family_kind
from .forest import TrainConfig, predict_labels, train_forest
from .metrics import (Pair, PairedCorpus, RobustnessReport, discrepancy_topk,
                      eval_metrics, family_persistence, family_tool_overlap,
                      insensitivity)
from .obfuscate import (ObfSpec, TECHNIQUES, TOOL_PROFILES,
                        obfuscate_apk_bytes)
from .selection import SelectionConfig, build_detector
from .synth import CorpusRecipe, generate_corpus
from .vectorize import (FeatureMatrix, FeatureVector, Vocabulary,
                        assemble_matrix, build_vocabulary, vectorize)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_MISSING = 4
EXIT_TOOLKIT = 5


class ConfigError(Exception):
    pass


def _progress(message: str):
    print(message, file=sys.stderr)


def _load_config(path: str | None, command: str) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except FileNotFoundError:
        raise
    except (tomllib.TOMLDecodeError, OSError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    merged = dict(doc.get("common", {}))
    merged.update(doc.get(command, {}))
    return merged


def _opt(args, section: dict, name: str, default):
    value = getattr(args, name.replace("-", "_"), None)
    if value is not None:
        return value
    if name in section:
        return section[name]
    return default


def _load_manifest(path: Path) -> CorpusManifest:
    return CorpusManifest.from_json(path.read_text())


def _manifest_labels(manifest: CorpusManifest) -> dict[str, int]:
    out = {}
    for record in manifest.records:
        if record.vtd is not None:
            verdict = label(record, DEFAULT_RULE)
        else:
            verdict = record.label
        if verdict in LABEL_TO_INT:
            out[record.app_id] = LABEL_TO_INT[verdict]
    return out


def _load_features(path: Path) -> dict[str, dict[str, RawFeatureSet]]:
    doc = json.loads(path.read_text())
    if doc.get("version") != 1:
        raise ConfigError(f"{path} is not a version-1 feature file")
    out = {}
    for app_id, families in doc["apps"].items():
        out[app_id] = {
            family: RawFeatureSet(family, family_kind(family),
                                  {n: int(v) for n, v in obs.items()})
            for family, obs in families.items()}
    return out


def _dump_features(raw_by_app) -> str:
    return json.dumps({
        "version": 1,
        "apps": {app_id: {family: raw.observations
                          for family, raw in families.items()}
                 for app_id, families in raw_by_app.items()},
    }, indent=1)


def _load_vectors(path: Path) -> dict[str, dict[str, FeatureVector]]:
    doc = json.loads(path.read_text())
    if doc.get("version") != 1:
        raise ConfigError(f"{path} is not a version-1 vector file")
    out = {}
    for app_id, families in doc["apps"].items():
        out[app_id] = {
            family: FeatureVector(app_id, family, family_kind(family),
                                  {int(i): float(v)
                                   for i, v in values.items()})
            for family, values in families.items()}
    return out


def _dump_vectors(vectors_by_app) -> str:
    return json.dumps({
        "version": 1,
        "apps": {app_id: {family: {str(i): v
                                   for i, v in vec.values.items()}
                          for family, vec in families.items()}
                 for app_id, families in vectors_by_app.items()},
    }, indent=1)


def _read_apk(manifest_path: Path, record: AppRecord) -> bytes:
    return (manifest_path.parent / record.path).read_bytes()


def _split_ids(manifest: CorpusManifest, labels: dict[str, int],
               seed: int, train_frac: float):
    """Deterministic stratified split of the clean, labeled apps."""
    clean = [r.app_id for r in manifest.records
             if r.origin == "clean" and r.app_id in labels]
    rng = random.Random(seed)
    train, evaluation = [], []
    for wanted in (1, 0):
        group = sorted(a for a in clean if labels[a] == wanted)
        rng.shuffle(group)
        cut = int(round(train_frac * len(group)))
        train.extend(group[:cut])
        evaluation.extend(group[cut:])
    return sorted(train), sorted(evaluation)


def _pairs_from_manifest(manifest: CorpusManifest, vectors,
                         restrict_clean=None) -> list[Pair]:
    pairs = []
    for record in manifest.records:
        if record.origin != "obfuscated":
            continue
        if record.app_id not in vectors or record.clean_ref not in vectors:
            continue
        if restrict_clean is not None and \
                record.clean_ref not in restrict_clean:
            continue
        pairs.append(Pair(record.clean_ref, record.app_id,
                          record.tool, record.technique))
    return pairs


# ---------------------------------------------------------------------------
# commands


def cmd_gen(args, section):
    n = _opt(args, section, "n", 10)
    seed = _opt(args, section, "seed", 0)
    signal = section.get("signal_families", ["Permissions", "ApiFunctions"])
    recipe = CorpusRecipe(
        signal_families=frozenset(signal),
        decoy_strings=bool(section.get("decoy_strings", True)),
        decoy_correlation=float(section.get("decoy_correlation", 0.9)),
        internal_call=bool(section.get("internal_call", True)),
    )
    out = Path(_opt(args, section, "out", "corpus"))
    out.mkdir(parents=True, exist_ok=True)
    apps, manifest = generate_corpus(n, recipe, seed)
    for app_id, blob in apps:
        (out / f"{app_id}.apk").write_bytes(blob)
    (out / "manifest.json").write_text(manifest.to_json())
    _progress(f"gen: wrote {len(apps)} apps to {out}")
    return EXIT_OK


def cmd_obfuscate(args, section):
    corpus_dir = Path(args.corpus)
    manifest_path = corpus_dir / "manifest.json"
    manifest = _load_manifest(manifest_path)
    seed = _opt(args, section, "seed", 0)
    techniques = (args.techniques.split(",") if args.techniques
                  else section.get("techniques", list(TECHNIQUES)))
    tools = (args.tools.split(",") if args.tools
             else section.get("tools", sorted(TOOL_PROFILES)))
    for technique in techniques:
        if technique not in TECHNIQUES:
            raise ConfigError(f"unknown technique {technique!r}")
    for tool in tools:
        if tool not in TOOL_PROFILES:
            raise ConfigError(f"unknown tool profile {tool!r}")

    out = Path(_opt(args, section, "out", "obf_corpus"))
    (out / "logs").mkdir(parents=True, exist_ok=True)
    records = []
    done = 0
    clean_records = [r for r in manifest.records if r.origin == "clean"]
    for record in clean_records:
        blob = _read_apk(manifest_path, record)
        (out / f"{record.app_id}.apk").write_bytes(blob)
        records.append(record)
        for technique in techniques:
            for tool in tools:
                spec = ObfSpec(
                    technique=technique, tool_profile=tool, seed=seed,
                    junk_density=float(_opt(args, section,
                                            "junk_density", 0.3)),
                    reflection_fraction=float(
                        _opt(args, section, "reflection_fraction", 1.0)),
                    chain_length=int(_opt(args, section, "chain_length", 1)),
                )
                obf_bytes, tlog = obfuscate_apk_bytes(blob, spec)
                obf_id = f"{record.app_id}__{technique}__{tool}"
                (out / f"{obf_id}.apk").write_bytes(obf_bytes)
                (out / "logs" / f"{obf_id}.json").write_text(tlog.to_json())
                records.append(AppRecord(
                    app_id=obf_id, path=f"{obf_id}.apk", vtd=record.vtd,
                    label=record.label, origin="obfuscated", tool=tool,
                    technique=technique, clean_ref=record.app_id))
        done += 1
        if done % 25 == 0:
            _progress(f"obfuscate: {done}/{len(clean_records)} apps")
    (out / "manifest.json").write_text(
        CorpusManifest(manifest.name + "+obf", records).to_json())
    _progress(f"obfuscate: wrote {len(records)} records to {out}")
    return EXIT_OK


def cmd_extract(args, section):
    corpus_dir = Path(args.corpus)
    manifest_path = corpus_dir / "manifest.json"
    manifest = _load_manifest(manifest_path)
    missing = [r.path for r in manifest.records
               if not (manifest_path.parent / r.path).is_file()]
    if missing:
        raise FileNotFoundError(f"{len(missing)} package files missing, "
                                f"first: {missing[0]}")
    raw_by_app = {}
    for i, record in enumerate(manifest.records):
        model = open_apk(_read_apk(manifest_path, record))
        raw_by_app[record.app_id] = extract_all(model)
        if (i + 1) % 50 == 0:
            _progress(f"extract: {i + 1}/{len(manifest.records)} apps")
    out = Path(_opt(args, section, "out", "features.json"))
    out.write_text(_dump_features(raw_by_app))
    _progress(f"extract: wrote {len(raw_by_app)} apps to {out}")
    return EXIT_OK


def cmd_vocab(args, section):
    raw_by_app = _load_features(Path(args.features))
    floor = float(_opt(args, section, "min_string_prevalence", 0.01))
    vocab = build_vocabulary(raw_by_app, floor)
    out = Path(_opt(args, section, "out", "vocabulary.json"))
    out.write_text(vocab.to_json())
    widths = {f: vocab.family_width(f) for f in FAMILIES}
    _progress(f"vocab: widths {widths}")
    return EXIT_OK


def cmd_vectorize(args, section):
    raw_by_app = _load_features(Path(args.features))
    vocab = Vocabulary.from_json(Path(args.vocab).read_text())
    vectors = {app_id: vectorize(raw, vocab, app_id)
               for app_id, raw in raw_by_app.items()}
    out = Path(_opt(args, section, "out", "vectors.json"))
    out.write_text(_dump_vectors(vectors))
    _progress(f"vectorize: wrote {len(vectors)} apps to {out}")
    if args.matrix:
        labels = None
        rows = vectors
        if args.manifest:
            manifest = _load_manifest(Path(args.manifest))
            labels = _manifest_labels(manifest)
            rows = {a: v for a, v in vectors.items() if a in labels}
            dropped = len(vectors) - len(rows)
            if dropped:
                _progress(f"vectorize: dropped {dropped} unlabeled apps "
                          f"from the matrix")
        matrix = assemble_matrix(rows, vocab, labels=labels)
        matrix.save(args.matrix)
        _progress(f"vectorize: matrix {matrix.n_rows}x{matrix.n_cols} "
                  f"to {args.matrix}")
    return EXIT_OK


def cmd_metrics(args, section):
    vectors = _load_vectors(Path(args.vectors))
    vocab = Vocabulary.from_json(Path(args.vocab).read_text())
    manifest = _load_manifest(Path(args.manifest))
    pairs = _pairs_from_manifest(manifest, vectors)
    paired = PairedCorpus(pairs, vectors, vocab)
    report = RobustnessReport()
    for family in FAMILIES:
        report.persistence[family] = family_persistence(paired, family)
        report.overlap[family] = family_tool_overlap(paired, family)
    report.discrepancy = discrepancy_topk(
        paired, int(_opt(args, section, "topk", 15)))
    out = Path(_opt(args, section, "out", "robustness.json"))
    out.write_text(report.to_json())
    csv_path = out.with_suffix(".csv")
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "family", "tool", "technique",
                         "feature", "value"])
        writer.writerows(report.csv_rows())
    _progress(f"metrics: {len(pairs)} pairs -> {out}, {csv_path}")
    return EXIT_OK


def cmd_train(args, section):
    matrix = FeatureMatrix.load(args.matrix)
    if matrix.labels is None:
        raise ConfigError(f"{args.matrix} carries no labels")
    cfg = TrainConfig(
        n_trees=int(_opt(args, section, "trees", 100)),
        max_features=section.get("max_features"),
        min_samples_split=int(_opt(args, section, "min_samples_split", 2)),
        max_depth=section.get("max_depth"),
        bootstrap=bool(section.get("bootstrap", True)),
        seed=int(_opt(args, section, "seed", 0)),
    )
    model = train_forest(matrix, matrix.labels, cfg)
    out = Path(_opt(args, section, "out", "model.dlf1"))
    model.save(out)
    _progress(f"train: {matrix.n_rows}x{matrix.n_cols} -> {out}")
    return EXIT_OK


def _family_models(vectors, vocab, labels, train_ids, train_cfg):
    """One forest per family. Families the vocabulary gave no columns are
    skipped (and absent from the result)."""
    models = {}
    train_vecs = {a: vectors[a] for a in train_ids}
    for family in FAMILIES:
        if vocab.family_width(family) == 0:
            _progress(f"  skipped {family} (no columns)")
            continue
        matrix = assemble_matrix(train_vecs, vocab, families=[family],
                                 labels=labels)
        models[family] = train_forest(matrix, matrix.labels, train_cfg)
        _progress(f"  trained {family} "
                  f"({matrix.n_rows}x{matrix.n_cols})")
    return models


def _family_predictions(model, vectors, vocab, family, ids):
    rows = {a: {family: vectors[a][family]} for a in ids}
    matrix = assemble_matrix(rows, vocab, families=[family])
    preds = predict_labels(model, matrix)
    return dict(zip(matrix.app_ids, (int(p) for p in preds)))


def cmd_eval(args, section):
    vectors = _load_vectors(Path(args.vectors))
    vocab = Vocabulary.from_json(Path(args.vocab).read_text())
    manifest = _load_manifest(Path(args.manifest))
    labels = _manifest_labels(manifest)
    seed = int(_opt(args, section, "seed", 0))
    frac = float(_opt(args, section, "train_frac", 0.5))
    train_ids, eval_ids = _split_ids(manifest, labels, seed, frac)
    train_cfg = TrainConfig(n_trees=int(_opt(args, section, "trees", 100)),
                            seed=seed)
    models = _family_models(vectors, vocab, labels, train_ids, train_cfg)
    out = Path(_opt(args, section, "out", "family_eval.csv"))
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["family", "tpr", "fpr", "a_mean"])
        for family in FAMILIES:
            if family not in models:
                continue
            preds = _family_predictions(models[family], vectors, vocab,
                                        family, eval_ids)
            result = eval_metrics([preds[a] for a in eval_ids],
                                  [labels[a] for a in eval_ids])
            writer.writerow([family, f"{result.tpr:.6f}",
                             f"{result.fpr:.6f}", f"{result.a_mean:.6f}"])
    _progress(f"eval: {len(train_ids)} train / {len(eval_ids)} eval "
              f"-> {out}")
    return EXIT_OK


def cmd_insens(args, section):
    vectors = _load_vectors(Path(args.vectors))
    vocab = Vocabulary.from_json(Path(args.vocab).read_text())
    manifest = _load_manifest(Path(args.manifest))
    labels = _manifest_labels(manifest)
    seed = int(_opt(args, section, "seed", 0))
    frac = float(_opt(args, section, "train_frac", 0.5))
    train_ids, eval_ids = _split_ids(manifest, labels, seed, frac)
    pairs = _pairs_from_manifest(manifest, vectors,
                                 restrict_clean=set(eval_ids))
    if not pairs:
        raise ConfigError("manifest holds no usable clean/obfuscated pairs")
    train_cfg = TrainConfig(n_trees=int(_opt(args, section, "trees", 100)),
                            seed=seed)
    models = _family_models(vectors, vocab, labels, train_ids, train_cfg)

    cells: dict[tuple[str, str], list[Pair]] = {}
    for pair in pairs:
        cells.setdefault((pair.tool, pair.technique), []).append(pair)
    ids = sorted({a for p in pairs for a in (p.clean_id, p.obf_id)})
    out = Path(_opt(args, section, "out", "family_insens.csv"))
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["family", "tool", "technique", "agreement",
                         "positive_jaccard"])
        for family in FAMILIES:
            if family not in models:
                continue
            preds = _family_predictions(models[family], vectors, vocab,
                                        family, ids)
            scores = []
            for (tool, technique), cell in sorted(cells.items()):
                result = insensitivity(
                    [preds[p.clean_id] for p in cell],
                    [preds[p.obf_id] for p in cell])
                scores.append(result.agreement)
                writer.writerow([family, tool, technique,
                                 f"{result.agreement:.6f}",
                                 f"{result.positive_jaccard:.6f}"])
            writer.writerow([family, "*", "*",
                             f"{sum(scores) / len(scores):.6f}", ""])
    _progress(f"insens: {len(pairs)} pairs over {len(cells)} cells -> {out}")
    return EXIT_OK


def cmd_select(args, section):
    vectors = _load_vectors(Path(args.vectors))
    vocab = Vocabulary.from_json(Path(args.vocab).read_text())
    manifest = _load_manifest(Path(args.manifest))
    labels = _manifest_labels(manifest)
    seed = int(_opt(args, section, "seed", 0))
    frac = float(_opt(args, section, "train_frac", 0.5))
    train_ids, eval_ids = _split_ids(manifest, labels, seed, frac)
    pairs = _pairs_from_manifest(manifest, vectors,
                                 restrict_clean=set(eval_ids))
    if not pairs:
        raise ConfigError("manifest holds no usable clean/obfuscated pairs")
    paired = PairedCorpus(pairs, vectors, vocab)
    cfg = SelectionConfig(
        threshold=float(_opt(args, section, "threshold", 0.85)),
        per_family_cap=int(_opt(args, section, "cap", 2000)))
    train_cfg = TrainConfig(n_trees=int(_opt(args, section, "trees", 100)),
                            seed=seed)
    result = build_detector(
        {a: vectors[a] for a in train_ids},
        {a: labels[a] for a in train_ids},
        {a: vectors[a] for a in eval_ids},
        {a: labels[a] for a in eval_ids},
        paired, vocab, cfg, train_cfg)

    model_out = Path(_opt(args, section, "model_out", "detector.dlf1"))
    result.model.save(model_out)
    report_out = Path(_opt(args, section, "out", "selection.json"))
    report_out.write_text(result.report.to_json())
    _progress(f"select: families {result.report.selected}, width "
              f"{result.report.final_width} -> {model_out}, {report_out}")
    return EXIT_OK


def cmd_derive(args, section):
    manifest = _load_manifest(Path(args.manifest))
    flags_doc = json.loads(Path(args.flags).read_text())
    flags = [(str(a), str(t), str(q), bool(ok))
             for a, t, q, ok in flags_doc]
    split = derive_success_split(manifest, flags)
    out = Path(_opt(args, section, "out", "splits.json"))
    doc = {name: json.loads(part.to_json()) for name, part in split.items()}
    out.write_text(json.dumps(doc, indent=2))
    _progress(f"derive: NonObf={len(split['NonObf'].records)} "
              f"CleanSuccObf={len(split['CleanSuccObf'].records)} -> {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="apkrobust",
        description="Synthetic package corpora, feature robustness, and "
                    "threshold-selected detectors.",
        epilog="exit codes: 0 ok, 2 usage, 3 bad config, 4 missing input, "
               "5 toolkit error")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="TOML file with [common] and "
                                        "per-command sections")
        p.add_argument("--seed", type=int)
        p.add_argument("--out")

    p = sub.add_parser("gen", help="generate a synthetic corpus")
    common(p)
    p.add_argument("--n", type=int)

    p = sub.add_parser("obfuscate", help="apply techniques across tool "
                                         "profiles")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--techniques", help="comma list, default all")
    p.add_argument("--tools", help="comma list, default all profiles")
    p.add_argument("--junk-density", type=float, dest="junk_density")
    p.add_argument("--reflection-fraction", type=float,
                   dest="reflection_fraction")
    p.add_argument("--chain-length", type=int, dest="chain_length")

    p = sub.add_parser("extract", help="extract raw features per app")
    common(p)
    p.add_argument("--corpus", required=True)

    p = sub.add_parser("vocab", help="build the vocabulary")
    common(p)
    p.add_argument("--features", required=True)
    p.add_argument("--min-string-prevalence", type=float,
                   dest="min_string_prevalence")

    p = sub.add_parser("vectorize", help="map features onto the vocabulary")
    common(p)
    p.add_argument("--features", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--matrix", help="also write an assembled matrix here")
    p.add_argument("--manifest", help="labels for the matrix")

    p = sub.add_parser("metrics", help="persistence, overlap, discrepancy")
    common(p)
    p.add_argument("--vectors", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--topk", type=int)

    p = sub.add_parser("train", help="train a forest on a saved matrix")
    common(p)
    p.add_argument("--matrix", required=True)
    p.add_argument("--trees", type=int)

    p = sub.add_parser("eval", help="per-family clean detection quality")
    common(p)
    p.add_argument("--vectors", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--trees", type=int)
    p.add_argument("--train-frac", type=float, dest="train_frac")

    p = sub.add_parser("insens", help="per-family prediction stability")
    common(p)
    p.add_argument("--vectors", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--trees", type=int)
    p.add_argument("--train-frac", type=float, dest="train_frac")

    p = sub.add_parser("select", help="full robust-detector pipeline")
    common(p)
    p.add_argument("--vectors", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--trees", type=int)
    p.add_argument("--train-frac", type=float, dest="train_frac")
    p.add_argument("--threshold", type=float)
    p.add_argument("--cap", type=int)
    p.add_argument("--model-out", dest="model_out")

    p = sub.add_parser("derive", help="success-dependent corpus splits")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--flags", required=True,
                   help="JSON list of [app_id, tool, technique, ok]")
    return parser


_COMMANDS = {
    "gen": cmd_gen,
    "obfuscate": cmd_obfuscate,
    "extract": cmd_extract,
    "vocab": cmd_vocab,
    "vectorize": cmd_vectorize,
    "metrics": cmd_metrics,
    "train": cmd_train,
    "eval": cmd_eval,
    "insens": cmd_insens,
    "select": cmd_select,
    "derive": cmd_derive,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        section = _load_config(args.config, args.command)
        return _COMMANDS[args.command](args, section)
    except ConfigError as exc:
        _progress(f"config error: {exc}")
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        _progress(f"missing input: {exc}")
        return EXIT_MISSING
    except ToolkitError as exc:
        _progress(f"{type(exc).__name__}: {exc}")
        return EXIT_TOOLKIT


def run_pipeline(command: str, config: dict) -> int:
    """Programmatic entry: config keys become the command's flags."""
    argv = [command]
    for key, value in config.items():
        flag = "--" + key.replace("_", "-")
        if isinstance(value, bool):
            if value:
                argv.append(flag)
        elif isinstance(value, (list, tuple)):
            argv.extend([flag, ",".join(str(v) for v in value)])
        else:
            argv.extend([flag, str(value)])
    return main(argv)


if __name__ == "__main__":
    sys.exit(main())
