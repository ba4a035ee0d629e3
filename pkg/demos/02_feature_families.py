"""
The seven feature families
==========================

Extracts every family from one generated app and prints what each one sees.
Binary families record presence; frequency families record counts.
"""

import random

from apkrobust import CorpusRecipe, build_app, extract_all, open_apk

rng = random.Random(7)
blob = build_app(0, is_malware=True, recipe=CorpusRecipe(), rng=rng)
model = open_apk(blob)

for family, raw in extract_all(model).items():
    obs = raw.observations
    print(f"\n{family} ({raw.kind}, {len(obs)} features)")
    for name in sorted(obs)[:6]:
        print(f"  {name} = {obs[name]}")
    if len(obs) > 6:
        print(f"  ... {len(obs) - 6} more")
