"""
Selecting families that survive obfuscation
===========================================

The full pipeline: train per-family forests on clean apps, score each family
on clean quality (balanced mean) and stability under transformation
(prediction agreement on clean/obfuscated pairs), keep only families that
clear the threshold on both, and fuse the survivors into one detector.

The corpus plants its class signal in Permissions and API calls, plus decoy
strings that encryption wipes out. The selection should keep the former and
drop the latter.
"""

from apkrobust import (
    ObfSpec,
    Pair,
    PairedCorpus,
    SelectionConfig,
    TrainConfig,
    build_detector,
    build_vocabulary,
    extract_all,
    generate_corpus,
    obfuscate_apk_bytes,
    open_apk,
    vectorize,
)

apps, manifest = generate_corpus(100, seed=17)
labels = {r.app_id: (1 if r.label == "malware" else 0)
          for r in manifest.records}
train_ids = [a for a, _ in apps[:50]]
eval_ids = [a for a, _ in apps[50:]]

raw = {a: extract_all(open_apk(b)) for a, b in apps}
pairs = []
for app_id, blob in apps[50:]:
    for technique in ("Encryption", "JunkCodeInsertion"):
        out, _ = obfuscate_apk_bytes(
            blob, ObfSpec(technique, "alpha", seed=3, junk_density=0.5))
        obf_id = f"{app_id}__{technique}"
        raw[obf_id] = extract_all(open_apk(out))
        pairs.append(Pair(app_id, obf_id, "alpha", technique))

vocab = build_vocabulary(raw)
vectors = {a: vectorize(s, vocab, a) for a, s in raw.items()}

result = build_detector(
    {a: vectors[a] for a in train_ids},
    {a: labels[a] for a in train_ids},
    {a: vectors[a] for a in eval_ids},
    {a: labels[a] for a in eval_ids},
    PairedCorpus(pairs, vectors, vocab),
    vocab,
    SelectionConfig(threshold=0.85),
    TrainConfig(n_trees=30, seed=0),
)

report = result.report
print("family scorecard (quality / stability):")
for family in report.family_ameans:
    mark = "kept" if family in report.selected else "    "
    print(f"  {family:14s} {report.family_ameans[family]:.3f} / "
          f"{report.family_insens[family]:.3f}  {mark}")

print(f"\nfused detector: {result.model.width} columns from "
      f"{report.selected}")
for split, res in report.evaluation.items():
    print(f"  {split:20s} tpr={res.tpr:.3f} fpr={res.fpr:.3f} "
          f"a_mean={res.a_mean:.3f}")
