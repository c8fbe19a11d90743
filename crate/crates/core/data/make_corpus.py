#!/usr/bin/env python3
"""Regenerates corpus.txt and corpus.tags.

Every line is built from a template whose slots carry their tag, so the tag
file is the structural annotation of the corpus, independent of the tagger.
"""
import json
import random
from pathlib import Path

HERE = Path(__file__).parent
lex = json.loads((HERE / "lexicon.json").read_text())
WORLD_NOUNS = {"point", "cluster", "y-axis"}
nouns = [n for n in lex["nouns"] if n not in WORLD_NOUNS]
adjs = [a for a in lex["adjectives"] if a not in {"right", "left", "up", "down"}]

rng = random.Random(20230311)


def det():
    return rng.choice(["a", "the", "some", "this"])


def np_(with_det=True, adj_prob=0.4):
    words, tags = [], []
    if with_det:
        words.append(det())
        tags.append("DET")
    if rng.random() < adj_prob:
        words.append(rng.choice(adjs))
        tags.append("ADJ")
    words.append(rng.choice(nouns))
    tags.append("NOUN")
    return words, tags


def seq(*parts):
    words, tags = [], []
    for w, t in parts:
        words += w if isinstance(w, list) else [w]
        tags += t if isinstance(t, list) else [t]
    return words, tags


def two_nouns():
    a = rng.choice(nouns)
    b = rng.choice([n for n in nouns if n != a])
    return a, b


TEMPLATES = {
    "add": [
        lambda: seq(("add", "VERB"), np_()),
        lambda: seq(("add", "VERB"), np_(with_det=False)),
        lambda: seq(("add", "VERB"), np_(), ("to", "PREP"), np_(adj_prob=0.0)),
        lambda: seq(("add", "VERB"), np_(), ("in", "PREP"), (["the", "background"], ["DET", "NOUN"])),
        lambda: seq(("add", "VERB"), np_(), (["next", "to"], ["OTHER", "PREP"]), np_(adj_prob=0.0)),
    ],
    "remove": [
        lambda: seq(("remove", "VERB"), np_()),
        lambda: seq(("remove", "VERB"), np_(), ("from", "PREP"), np_(adj_prob=0.0)),
        lambda: seq(("remove", "VERB"), (["all", "the"], ["OTHER", "DET"]), np_(with_det=False)),
        lambda: seq(("remove", "VERB"), np_(), ("in", "PREP"), np_(adj_prob=0.0)),
    ],
    "put": [
        lambda: seq(("put", "VERB"), np_(), ("on", "PREP"), np_(adj_prob=0.0)),
        lambda: seq(("put", "VERB"), np_(), ("in", "PREP"), np_(adj_prob=0.0)),
        lambda: seq(("put", "VERB"), np_(), (["on", "it"], ["PREP", "OTHER"])),
        lambda: seq(("put", "VERB"), np_(), ("under", "PREP"), np_(adj_prob=0.0)),
    ],
    "change": [
        lambda: (lambda a, b: seq(("change", "VERB"), ([det(), a], ["DET", "NOUN"]), ("to", "PREP"), ([det(), b], ["DET", "NOUN"])))(*two_nouns()),
        lambda: (lambda a, b: seq(("change", "VERB"), ([det(), a], ["DET", "NOUN"]), ("into", "PREP"), ([det(), b], ["DET", "NOUN"])))(*two_nouns()),
        lambda: seq(("change", "VERB"), np_(adj_prob=0.0), ("to", "PREP"), (rng.choice(adjs), "ADJ")),
        lambda: seq(("change", "VERB"), (["the", "color", "of"], ["DET", "OTHER", "PREP"]), np_(adj_prob=0.0), ("to", "PREP"), (rng.choice(adjs), "ADJ")),
    ],
    "make": [
        lambda: seq(("make", "VERB"), ("it", "OTHER"), (rng.choice(adjs), "ADJ")),
        lambda: seq(("make", "VERB"), np_(adj_prob=0.0), (rng.choice(adjs), "ADJ")),
        lambda: seq(("make", "VERB"), np_(adj_prob=0.0), (["look", "like"], ["OTHER", "PREP"]), np_(adj_prob=0.0)),
        lambda: seq(("make", "VERB"), ("it", "OTHER"), (["look", "like"], ["OTHER", "PREP"]), (rng.choice(["a", "the"]), "DET"), (rng.choice(adjs), "ADJ"), (rng.choice(["painting", "picture"]), "NOUN")),
    ],
}

lines, tag_lines = [], []
seen = set()
for verb in ["add", "change", "make", "remove", "put"]:
    count = 0
    while count < 100:
        words, tags = rng.choice(TEMPLATES[verb])()
        text = " ".join(words)
        if text in seen:
            continue
        seen.add(text)
        lines.append(text)
        tag_lines.append(" ".join(tags))
        count += 1

order = list(range(len(lines)))
rng.shuffle(order)
(HERE / "corpus.txt").write_text("".join(lines[i] + "\n" for i in order))
(HERE / "corpus.tags").write_text("".join(tag_lines[i] + "\n" for i in order))
