#!/usr/bin/env python3
"""Pins the golden corpus BLEU for tests/fixtures/bleu_fixture.json.

Tokenisation rule (shared with the C++ metric): lowercase ASCII, split on
whitespace, detach ASCII punctuation and the marks ¿ ¡. Scoring is delegated
to sacrebleu (no smoothing, pre-tokenised input, closest reference length).
"""
import json
import re
import sys
from pathlib import Path

import sacrebleu

PUNCT = re.compile(r"([!-/:-@\[-`{-~]|¿|¡)")


def tokenize(text):
    text = "".join(c.lower() if c.isascii() else c for c in text)
    return " ".join(PUNCT.sub(r" \1 ", text).split())


def main(path):
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    hyps = [tokenize(c) for c in data["candidates"]]
    n_refs = len(data["references"][0])
    streams = [[tokenize(refs[k]) for refs in data["references"]] for k in range(n_refs)]
    bleu = sacrebleu.corpus_bleu(hyps, streams, smooth_method="none", tokenize="none", force=True)
    print(f"{bleu.score:.12f}")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else Path(__file__).resolve().parent.parent / "fixtures" / "bleu_fixture.json")
