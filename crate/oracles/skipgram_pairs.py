"""Brute-force (center, context) enumeration for the 5-sentence fixture.

Markers (ids 0, 1, 2) are removed first; every ordered pair of distinct
positions i, j with |i - j| <= window inside one sentence is emitted.
"""
from collections import Counter

FIXTURE = [
    [1, 4, 5, 6, 7, 2],
    [1, 5, 5, 8, 2],
    [1, 9, 2],
    [1, 4, 10, 11, 12, 13, 4, 2],
    [1, 3, 6, 4, 2],
]


def pairs(corpus, window):
    out = Counter()
    for s in corpus:
        ids = [t for t in s if t not in (0, 1, 2)]
        for i in range(len(ids)):
            for j in range(len(ids)):
                if i != j and abs(i - j) <= window:
                    out[(ids[i], ids[j])] += 1
    return out


if __name__ == "__main__":
    c = pairs(FIXTURE, 2)
    print(sum(c.values()))
    print(sorted(c.items()))
