"""Brute-force caption metrics for the 4-clip fixture.

Reads crates/core/tests/data/metrics_{predictions,references}.jsonl and writes
crates/core/tests/data/metrics_oracle.json. Every metric is computed the slow
way: explicit n-gram lists, LCS by memoized recursion, METEOR by enumerating
every alignment, CIDEr with dense vectors over the full n-gram inventory.
"""
import itertools
import json
import math
import sys
import unicodedata
from fractions import Fraction
from functools import lru_cache
from pathlib import Path

from nltk.stem.porter import PorterStemmer

sys.setrecursionlimit(10000)
DATA = Path(__file__).resolve().parent.parent / "crates/core/tests/data"
STEM = PorterStemmer(mode=PorterStemmer.ORIGINAL_ALGORITHM).stem


def words(s):
    s = "".join(c for c in s.lower() if not unicodedata.category(c).startswith("P"))
    return s.split()


def ngrams(ws, n):
    return [tuple(ws[i:i + n]) for i in range(len(ws) - n + 1)]


def bleu(pairs, n):
    num = [0] * n
    den = [0] * n
    c_len = 0
    r_len = 0
    for cand, refs in pairs:
        for k in range(1, n + 1):
            cg = ngrams(cand, k)
            for g in set(cg):
                best = max(ngrams(r, k).count(g) for r in refs)
                num[k - 1] += min(cg.count(g), best)
            den[k - 1] += len(cg)
        c_len += len(cand)
        lens = sorted(len(r) for r in refs)
        r_len += min(lens, key=lambda L: (abs(L - len(cand)), L))
    if c_len == 0 or any(x == 0 for x in num):
        return 0.0
    logp = sum(math.log(Fraction(num[k], den[k])) for k in range(n)) / n
    bp = 1.0 if c_len > r_len else math.exp(1 - r_len / c_len)
    return bp * math.exp(logp)


def lcs(a, b):
    @lru_cache(maxsize=None)
    def go(i, j):
        if i == len(a) or j == len(b):
            return 0
        if a[i] == b[j]:
            return 1 + go(i + 1, j + 1)
        return max(go(i + 1, j), go(i, j + 1))
    return go(0, 0)


def rouge_l(cand, refs, beta=1.2):
    best = 0.0
    for r in refs:
        l = lcs(tuple(cand), tuple(r))
        if l == 0:
            continue
        p = l / len(cand)
        rec = l / len(r)
        best = max(best, (1 + beta ** 2) * p * rec / (rec + beta ** 2 * p))
    return best


def alignments(cs, rs):
    """Every partial injective candidate->reference map between equal stems."""
    def go(i, used):
        if i == len(cs):
            yield []
            return
        for rest in go(i + 1, used):
            yield rest
        for j, r in enumerate(rs):
            if r == cs[i] and j not in used:
                for rest in go(i + 1, used | {j}):
                    yield [(i, j)] + rest
    return go(0, frozenset())


def chunks(al):
    al = sorted(al)
    return sum(1 for k, (i, j) in enumerate(al) if k == 0 or (i, j) != (al[k - 1][0] + 1, al[k - 1][1] + 1))


def meteor(cand, ref):
    cs = [STEM(w) for w in cand]
    rs = [STEM(w) for w in ref]
    m, ch = max(((len(a), -chunks(a)) for a in alignments(cs, rs)), default=(0, 0))
    ch = -ch
    if m == 0:
        return 0.0
    p = m / len(cand)
    r = m / len(ref)
    f = 10 * p * r / (r + 9 * p)
    return f * (1 - 0.5 * (ch / m) ** 3)


def cider(pairs):
    n_docs = len(pairs)
    per_clip = []
    for n in range(1, 5):
        inventory = sorted({g for c, refs in pairs for s in [c] + refs for g in ngrams(s, n)})
        df = {g: sum(1 for _, refs in pairs if any(g in ngrams(r, n) for r in refs)) for g in inventory}
        idf = {g: math.log(n_docs) - math.log(max(1, df[g])) for g in inventory}

        def vec(ws):
            gs = ngrams(ws, n)
            return [gs.count(g) * idf[g] for g in inventory]

        def cos(a, b):
            na = math.sqrt(sum(x * x for x in a))
            nb = math.sqrt(sum(x * x for x in b))
            if na == 0 or nb == 0:
                return 0.0
            return sum(x * y for x, y in zip(a, b)) / (na * nb)

        per_clip.append([sum(cos(vec(c), vec(r)) for r in refs) / len(refs) for c, refs in pairs])
    return [10 * sum(per_clip[n][k] for n in range(4)) / 4 for k in range(n_docs)]


def main():
    preds = {}
    for line in (DATA / "metrics_predictions.jsonl").read_text().splitlines():
        d = json.loads(line)
        preds[d["clip_id"]] = words(d["caption"])
    refs = {}
    for line in (DATA / "metrics_references.jsonl").read_text().splitlines():
        d = json.loads(line)
        refs[d["clip_id"]] = [words(c) for c in d["captions"]]
    spice = {}
    for line in (DATA / "metrics_spice.jsonl").read_text().splitlines():
        d = json.loads(line)
        spice[d["clip_id"]] = d["spice"]
    ids = sorted(preds)
    pairs = [(preds[i], refs[i]) for i in ids]
    ciders = cider(pairs)
    clips = []
    for i, (c, rs), cd in zip(ids, pairs, ciders):
        clips.append({
            "clip_id": i,
            "rouge_l": rouge_l(c, rs),
            "meteor": max(meteor(c, r) for r in rs),
            "cider": cd,
        })
    out = {f"bleu{n}": bleu(pairs, n) for n in range(1, 5)}
    out["meteor"] = sum(c["meteor"] for c in clips) / len(clips)
    out["rouge_l"] = sum(c["rouge_l"] for c in clips) / len(clips)
    out["cider"] = sum(ciders) / len(ciders)
    out["spice"] = sum(spice[i] for i in ids) / len(ids)
    out["spider"] = (out["cider"] + out["spice"]) / 2
    out["clips"] = clips
    # Hand examples.
    out["clip_the7"] = [bleu_counts(words("the the the the the the the"), [words("the cat is on the mat")])]
    (DATA / "metrics_oracle.json").write_text(json.dumps(out, indent=2) + "\n")
    print(json.dumps(out, indent=2))


def bleu_counts(cand, refs):
    cg = ngrams(cand, 1)
    num = sum(min(cg.count(g), max(r.count(g[0]) for r in refs)) for g in set(cg))
    return [num, len(cg)]


if __name__ == "__main__":
    main()
