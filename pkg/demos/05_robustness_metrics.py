"""
Measuring what a transform destroys
===================================

Persistence is the share of active vector positions a clean/obfuscated pair
agrees on (Jaccard for binary families). Cross-tool overlap applies the same
measure between two tools' outputs. Discrepancy ranks the frequency features
that moved the most. All of it hangs off a PairedCorpus.
"""

from apkrobust import (
    ObfSpec,
    Pair,
    PairedCorpus,
    build_vocabulary,
    extract_all,
    generate_corpus,
    obfuscate_apk_bytes,
    open_apk,
    vectorize,
)
from apkrobust.metrics import (
    discrepancy_topk,
    family_persistence,
    family_tool_overlap,
)
from apkrobust.features import FAMILIES

apps, _ = generate_corpus(30, seed=9)

raw, pairs = {}, []
for app_id, blob in apps:
    raw[app_id] = extract_all(open_apk(blob))
    for tool in ("alpha", "beta"):
        out, _ = obfuscate_apk_bytes(
            blob, ObfSpec("Encryption", tool, seed=2))
        obf_id = f"{app_id}__enc__{tool}"
        raw[obf_id] = extract_all(open_apk(out))
        pairs.append(Pair(app_id, obf_id, tool, "Encryption"))

vocab = build_vocabulary(raw)
vectors = {a: vectorize(s, vocab, a) for a, s in raw.items()}
paired = PairedCorpus(pairs, vectors, vocab)

print("persistence under Encryption (1.0 = untouched):")
for family in FAMILIES:
    cells = family_persistence(paired, family)
    row = "  ".join(f"{tool}={value:.3f}"
                    for (tool, _t), value in sorted(cells.items()))
    print(f"  {family:14s} {row}")

print("\ncross-tool overlap (do alpha and beta leave the same residue?):")
for family in ("Opcodes", "Strings", "Permissions"):
    cells = family_tool_overlap(paired, family)
    for (technique, ta, tb), value in sorted(cells.items()):
        print(f"  {family:14s} {ta}|{tb} {value:.3f}")

print("\nmost-moved frequency features:")
for name, score in discrepancy_topk(paired, k=5)["Encryption"]:
    print(f"  {name:18s} {score:.2f}")
