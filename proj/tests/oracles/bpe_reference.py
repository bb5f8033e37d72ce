#!/usr/bin/env python3
"""Independent byte-pair merge counter for the committed reference vocab.

Implements the documented vocab-file contract from scratch (see
docs/vocab-format.md): per whitespace-separated word, segment into base
alphabet symbols by greedy longest match (unknown bytes stand alone and
never merge), then repeatedly apply the applicable merge rule with the
lowest index to all adjacent occurrences until none applies. The token
count for a text is the sum of surviving symbols over its words.

Run once; the printed counts are frozen in tests/test_tokenizer.cpp.
"""
import sys
from pathlib import Path

VOCAB = Path(__file__).resolve().parent.parent / "data" / "reference_vocab.txt"

FIXTURES = [
    "the antagonist needs to explain their method for avoiding detection.",
    "the the the",
    "zzz qqq",
    "explanation",
]


def load_vocab(path):
    alphabet, merges = [], []
    section = None
    for raw in path.read_text(encoding="utf-8").splitlines():
        line = raw.rstrip("\n")
        if line.startswith("#"):
            continue
        if line.strip() == "[alphabet]":
            section = "alphabet"
            continue
        if line.strip() == "[merges]":
            section = "merges"
            continue
        if not line.strip():
            continue
        if section == "alphabet":
            alphabet.append(line.strip())
        elif section == "merges":
            left, right = line.split()
            merges.append((left, right))
        else:
            raise ValueError(f"content before section header: {raw!r}")
    return alphabet, merges


def segment(word, alphabet):
    # Greedy longest match against the alphabet; unknown bytes become
    # standalone unmergeable symbols (tracked via the `known` flags).
    longest = max(len(s) for s in alphabet)
    alpha = set(alphabet)
    out, known, i = [], [], 0
    while i < len(word):
        for width in range(min(longest, len(word) - i), 0, -1):
            if word[i : i + width] in alpha:
                out.append(word[i : i + width])
                known.append(True)
                i += width
                break
        else:
            out.append(word[i])
            known.append(False)
            i += 1
    return out, known


def apply_merges(symbols, known, merges):
    while True:
        best = None
        for pos in range(len(symbols) - 1):
            if not (known[pos] and known[pos + 1]):
                continue
            pair = (symbols[pos], symbols[pos + 1])
            if pair in merges:
                rank = merges.index(pair)
                if best is None or rank < best:
                    best = rank
        if best is None:
            return symbols
        left, right = merges[best]
        merged_sym = left + right
        out_s, out_k, pos = [], [], 0
        while pos < len(symbols):
            if (
                pos + 1 < len(symbols)
                and known[pos]
                and known[pos + 1]
                and symbols[pos] == left
                and symbols[pos + 1] == right
            ):
                out_s.append(merged_sym)
                out_k.append(True)
                pos += 2
            else:
                out_s.append(symbols[pos])
                out_k.append(known[pos])
                pos += 1
        symbols, known = out_s, out_k


def count_tokens(text, alphabet, merges):
    total = 0
    for word in text.split():
        symbols, known = segment(word, alphabet)
        symbols = apply_merges(symbols, known, merges)
        total += len(symbols)
    return total


def main():
    alphabet, merges = load_vocab(VOCAB)
    for text in FIXTURES:
        n = count_tokens(text, alphabet, merges)
        print(f"{n}\t{text!r}")


if __name__ == "__main__":
    main()
