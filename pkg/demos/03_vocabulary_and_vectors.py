"""
Vocabulary, pruning, and sparse vectors
=======================================

The vocabulary freezes a name-to-column assignment per family, ordered by
prevalence. Rare strings (under 1% of apps) are pruned; everything else is
kept verbatim. Vectors map each app's observations onto those columns, and
the assembled matrix round-trips through a small binary format.
"""

from apkrobust import (
    assemble_matrix,
    build_vocabulary,
    extract_all,
    generate_corpus,
    open_apk,
    vectorize,
)

apps, manifest = generate_corpus(50, seed=21)
raw = {app_id: extract_all(open_apk(blob)) for app_id, blob in apps}

vocab = build_vocabulary(raw, min_string_prevalence=0.01)
print("family widths:")
for family in ("Permissions", "ApiFunctions", "Opcodes", "Strings"):
    print(f"  {family}: {vocab.family_width(family)} columns")

# Per-app decoy strings appear once each, 1/50 = 2% keeps them; bump the
# floor and they vanish.
strict = build_vocabulary(raw, min_string_prevalence=0.25)
print(f"\nStrings at 1% floor: {vocab.family_width('Strings')}, "
      f"at 25% floor: {strict.family_width('Strings')}")

vectors = {app_id: vectorize(sets, vocab, app_id)
           for app_id, sets in raw.items()}
first = next(iter(vectors))
print(f"\n{first} Permissions vector: {vectors[first]['Permissions'].values}")

labels = {r.app_id: (1 if r.label == "malware" else 0)
          for r in manifest.records}
matrix = assemble_matrix(vectors, vocab, labels=labels)
print(f"\nassembled matrix: {matrix.n_rows} x {matrix.n_cols}, "
      f"{len(matrix.values)} nonzeros")

blob = matrix.to_bytes()
print(f"serialized: {len(blob)} bytes, "
      f"round-trips: {type(matrix).from_bytes(blob).n_cols == matrix.n_cols}")
