"""
Five transforms, three emulated tools
=====================================

Each technique rewrites a package in a different dimension: names, opcode
streams, call graphs, resolution style, or the string pool. Tool profiles
vary the cosmetics (alphabets, junk menus, helper placement, ciphers) the
way different commercial products would.
"""

from apkrobust import (
    TECHNIQUES,
    TOOL_PROFILES,
    ObfSpec,
    extract_all,
    obfuscate_apk_bytes,
    open_apk,
    generate_corpus,
)

apps, _ = generate_corpus(2, seed=4)
app_id, blob = apps[0]
base = extract_all(open_apk(blob))
print(f"subject: {app_id}, {len(blob)} bytes")

for technique in TECHNIQUES:
    out, log = obfuscate_apk_bytes(
        blob, ObfSpec(technique, tool_profile="alpha", seed=1,
                      junk_density=0.4))
    after = extract_all(open_apk(out))
    print(f"\n{technique} (alpha):")
    for family in ("ApiFunctions", "Opcodes", "Strings"):
        b = set(base[family].observations)
        a = set(after[family].observations)
        print(f"  {family}: {len(b & a)} kept, {len(b - a)} gone, "
              f"{len(a - b)} new")
    if log.renamed_classes:
        old, new = log.renamed_classes[0]
        print(f"  e.g. {old} -> {new}")
    if log.encrypted_strings:
        plain, cipher = log.encrypted_strings[0]
        print(f"  e.g. {plain!r} -> {cipher!r}")
    if log.call_chains:
        site, n = log.call_chains[0]
        print(f"  e.g. {site} now behind {n} wrapper(s)")

# The same spec under another profile produces different cosmetics but the
# same kind of damage.
print(f"\nprofiles: {', '.join(sorted(TOOL_PROFILES))}")
for tool in sorted(TOOL_PROFILES):
    out, log = obfuscate_apk_bytes(blob, ObfSpec("Renaming", tool, seed=1))
    old, new = log.renamed_classes[0]
    print(f"  {tool}: {old} -> {new}")
