"""Regenerate the metric fixtures. Output is deterministic."""
import json
import random

rng = random.Random(2021)

# relevancy: 24 relations, ranks 1-10 and 91-100; the last relation
# returned only 99 results. 180/240 top-10 and 166/239 tail relevant.
relations = [f"rel{i:02d}" for i in range(1, 25)]
results, labels = [], []
top_slots = [(r, k) for r in relations for k in range(1, 11)]
tail_slots = [(r, k) for r in relations for k in range(91, 101) if not (r == "rel24" and k == 100)]
top_rel = set(rng.sample(range(len(top_slots)), 180))
tail_rel = set(rng.sample(range(len(tail_slots)), 166))
sid = 0
for slots, rel in ((top_slots, top_rel), (tail_slots, tail_rel)):
    for i, (r, k) in enumerate(slots):
        results.append({"relation": r, "rank": k, "sid": sid})
        label = {"sid": sid, "relation": r, "relevant": i in rel}
        if i in rel:
            label["a1"] = [0, 1]
            label["a2"] = [2, 4]
        labels.append(label)
        sid += 1
results.sort(key=lambda x: (x["relation"], x["rank"]))

# alignment: 500 pairs, 738/1000 arguments and 290 pairs fully correct
def correct(n):
    s = rng.randrange(0, n - 3)
    e = s + rng.randint(1, 3)
    kind = rng.choice(["exact", "wider", "narrower"])
    if kind == "exact" or e - s == 1 and kind == "narrower":
        return [s, e], [s, e]
    if kind == "wider":
        return [s, e], [max(0, s - 1), min(n, e + 1)]
    return [s, e], [s, s + 1]

def wrong(n):
    s = rng.randrange(0, n - 4)
    e = s + rng.randint(1, 2)
    if rng.random() < 0.5:
        return [s, e], [e, min(n, e + 2)]  # disjoint
    return [s + 1, e + 2], [s, s + 2]  # partial overlap

kinds = ["both"] * 290 + ["one"] * 158 + ["none"] * 52
rng.shuffle(kinds)
records = []
for i, kind in enumerate(kinds):
    n = rng.randint(8, 30)
    args = {"both": [correct, correct], "one": rng.choice([[correct, wrong], [wrong, correct]]), "none": [wrong, wrong]}[kind]
    gold, pred = zip(*(f(n) for f in args))
    records.append({"sid": 10000 + i, "len": n, "gold": list(gold), "pred": list(pred)})

def dump(name, rows):
    with open(name, "w") as f:
        for r in rows:
            f.write(json.dumps(r, separators=(",", ":")) + "\n")

dump("relevancy_results.jsonl", results)
dump("relevancy_labels.jsonl", labels)
dump("alignment_records.jsonl", records)
with open("expected.json", "w") as f:
    json.dump({
        "relevancy": {"overall": "72.2", "top": "75.0", "tail": "69.5", "n": 479},
        "alignment": {"per_arg": "73.8", "both_args": "58.0", "pairs": 500, "args": 1000},
    }, f, indent=2)
    f.write("\n")
