"""Freeze (word, stem) pairs from nltk's PorterStemmer in ORIGINAL_ALGORITHM
mode. Words come from English prose shipped with the system (Python
docstrings) plus a list of suffix-heavy words, sampled deterministically.

Usage: python3 porter_words.py > crates/core/tests/data/porter_oracle.tsv
"""
import pathlib
import re
import sys

from nltk.stem.porter import PorterStemmer

SUFFIX_WORDS = """
relational conditional rational valenci hesitanci digitizer conformabli radicalli
differentli vileli analogousli vietnamization predication operator feudalism
decisiveness hopefulness callousness formaliti sensitiviti sensibiliti triplicate
formative formalize electriciti electrical hopeful goodness revival allowance
inference airliner gyroscopic adjustable defensible irritant replacement
adjustment dependent adoption homologou communism activate angulariti homologous
effective bowdlerize probate rate cease controll roll conflated troubled sized
hopping tanned falling hissing fizzed failing filing happy sky caresses ponies
ties caress cats feed agreed plastered bled motoring sing generalizations
oscillators yyyy y by toy syzygy enjoy spying flies tried skies dying lying
""".split()


def words():
    seen = set(SUFFIX_WORDS)
    root = pathlib.Path(sys.prefix) / "lib" / f"python{sys.version_info.major}.{sys.version_info.minor}"
    files = sorted(root.glob("*.py"))
    for f in files:
        for w in re.findall(r"\b[a-z]{1,20}\b", f.read_text(errors="ignore")):
            seen.add(w)
    return sorted(seen)


def main():
    ps = PorterStemmer(mode=PorterStemmer.ORIGINAL_ALGORITHM)
    ws = words()
    step = max(1, len(ws) // 4000)
    chosen = sorted(set(ws[::step]) | set(SUFFIX_WORDS))
    for w in chosen:
        print(f"{w}\t{ps.stem(w)}")


if __name__ == "__main__":
    main()
