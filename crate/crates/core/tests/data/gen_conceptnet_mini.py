# Generates conceptnet_mini.csv and prints the expected ingest counts.
# usage: python3 gen_conceptnet_mini.py conceptnet_mini.csv
import json, random, re, sys

random.seed(20240611)
RELS = ["RelatedTo", "FormOf", "IsA", "UsedFor", "AtLocation", "CapableOf",
        "HasProperty", "HasA", "InstanceOf", "MadeOf"]
OTHER = ["Synonym", "Antonym", "PartOf", "Desires", "ExternalURL"]
heads = [f"thing_{i}" for i in range(60)] + ["ice_cream", "fire_truck", "apple"]
tails = ["red", "kitchen", "fruit", "sweet", "metal", "run", "wheel", "sea", "tool",
         "animal", "wood", "loud", "fly", "home", "round"]
langs = ["en", "en", "en", "en", "fr", "de"]
lines = []
for n in range(1500):
    rel = random.choice(RELS + OTHER if random.random() < 0.3 else RELS)
    h = random.choice(heads)
    # skewed tail popularity so some tails fall below the threshold
    t = tails[min(int(random.expovariate(0.35)), len(tails) - 1)]
    hl, tl = random.choice(langs), random.choice(langs)
    hs = random.choice(["", "/n", "/v", "/n/wn/food"])
    ts = random.choice(["", "/n", "/a"])
    uri = f"/a/[/r/{rel}/,/c/{hl}/{h}{hs}/,/c/{tl}/{t}{ts}/]"
    meta = json.dumps({"dataset": "/d/test", "weight": 1.0})
    lines.append("\t".join([uri, f"/r/{rel}", f"/c/{hl}/{h}{hs}", f"/c/{tl}/{t}{ts}", meta]))
# malformed and short lines are skipped
lines.insert(10, "garbage line")
lines.insert(500, "/a/x\t/r/IsA")
lines.insert(700, "/a/y\t/r/IsA\t/c/en/\t/c/en/fruit\t{}")
with open(sys.argv[1], "w") as f:
    f.write("\n".join(lines) + "\n")

# independent count of the construction
def label(rel):
    return re.sub(r"(?<!^)([A-Z])", r" \1", rel).lower()

def term(uri):
    parts = uri.split("/")
    if len(parts) < 4 or parts[1] != "c" or parts[2] != "en" or not parts[3]:
        return None
    return parts[3].replace("_", " ")

kept = []
read = 0
for line in open(sys.argv[1]):
    line = line.rstrip("\n")
    cols = line.split("\t")
    if len(cols) < 4:
        if len(cols) == 3:
            raise SystemExit("unexpected 3-column line")
        continue
    if not cols[1].startswith("/r/"):
        continue
    h, t = term(cols[2]), term(cols[3])
    if h is None or t is None:
        continue
    read += 1
    rel = cols[1][3:]
    if rel in RELS:
        kept.append((h, rel, t))
from collections import Counter
tc = Counter(t for _, _, t in kept)
for thr in (1, 10, 40):
    rows = [(h, r, t) for h, r, t in kept if tc[t] >= thr]
    cp = {(h, f"{label(r)} {t}") for h, r, t in rows}
    pf = {(f"{label(r)} {t}", label(r)) for h, r, t in rows}
    out = dict(threshold=thr, triples_read=read, triples_after_relation_filter=len(kept),
               triples_after_tail_filter=len(rows), concepts=len({h for h, _ in cp}),
               properties=len({p for _, p in cp}), facets=len({f for _, f in pf}),
               cp_pairs=len(cp), pf_pairs=len(pf))
    print(json.dumps(out))
