"""
Driving the pipeline from the command line
==========================================

Every stage is a subcommand reading and writing plain files, so the whole
flow scripts cleanly. run_pipeline() maps a config dict onto the same flags;
a TOML file with [common] and per-command sections works too.
"""

import json
import tempfile
from pathlib import Path

from apkrobust.cli import run_pipeline

work = Path(tempfile.mkdtemp(prefix="apkrobust_demo_"))
corpus = work / "corpus"
obf = work / "obf"

steps = [
    ("gen", {"n": 10, "seed": 3, "out": str(corpus)}),
    ("obfuscate", {"corpus": str(corpus), "techniques": "Encryption",
                   "tools": "alpha,beta", "out": str(obf)}),
    ("extract", {"corpus": str(obf), "out": str(work / "features.json")}),
    ("vocab", {"features": str(work / "features.json"),
               "out": str(work / "vocab.json")}),
    ("vectorize", {"features": str(work / "features.json"),
                   "vocab": str(work / "vocab.json"),
                   "out": str(work / "vectors.json")}),
    ("metrics", {"vectors": str(work / "vectors.json"),
                 "vocab": str(work / "vocab.json"),
                 "manifest": str(obf / "manifest.json"),
                 "out": str(work / "metrics.json")}),
    ("select", {"vectors": str(work / "vectors.json"),
                "vocab": str(work / "vocab.json"),
                "manifest": str(obf / "manifest.json"),
                "trees": 15, "threshold": 0.6, "seed": 1,
                "model_out": str(work / "detector.dlf1"),
                "out": str(work / "selection.json")}),
]

for command, config in steps:
    code = run_pipeline(command, config)
    print(f"{command}: exit {code}")
    assert code == 0

selection = json.loads((work / "selection.json").read_text())
kept = [f for f, row in selection["families"].items() if row["selected"]]
print(f"\nselected families: {kept}")
print(f"artifacts in {work}:")
for p in sorted(work.rglob("*")):
    if p.is_file() and p.parent == work:
        print(f"  {p.name} ({p.stat().st_size} bytes)")
