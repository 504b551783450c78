"""Deterministic synthetic mini knowledge base.

A small template grammar over activity verbs and household nouns produces
a few thousand (subject, relation, object) tuples for the 9-relation
social-events schema, plus a matched plain-text sentence corpus for
language-model pretraining. Object phrases are composed from per-verb and
per-noun lexical atoms, so a model can generalize to held-out
verb x noun subjects while a unigram baseline cannot.

Dev/test subjects are held out entirely (novel nodes by construction); in
addition one object variant per training subject is held out into dev so
that dev shares (s, r) prefixes with train.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import BLANK, DatasetSplit, KnowledgeTuple

# verb, intent, attr, react, effect, oreact
_VERBS = [
    ("bakes", "enjoy", "skilled", "proud", "tired", "grateful"),
    ("builds", "finish", "patient", "satisfied", "sore", "impressed"),
    ("paints", "decorate", "creative", "cheerful", "messy", "delighted"),
    ("cleans", "tidy", "careful", "relieved", "dusty", "thankful"),
    ("fixes", "repair", "handy", "confident", "greasy", "glad"),
    ("buys", "own", "generous", "excited", "broke", "surprised"),
    ("sells", "trade", "clever", "hopeful", "busy", "curious"),
    ("finds", "keep", "lucky", "glad", "surprised", "amused"),
    ("makes", "create", "crafty", "happy", "worn", "joyful"),
    (f"puts {BLANK} in", "arrange", "orderly", "calm", "organized", "content"),
]

# noun, material, place, use, quality
_NOUNS = [
    ("bread", "flour", "kitchen", "eat", "warm"),
    ("cake", "sugar", "bakery", "share", "sweet"),
    ("soup", "broth", "kitchen", "eat", "hot"),
    ("chair", "wood", "workshop", "sell", "sturdy"),
    ("fence", "boards", "yard", "paint", "tall"),
    ("bike", "tools", "garage", "ride", "fast"),
    ("kite", "paper", "park", "fly", "light"),
    ("boat", "planks", "harbor", "sail", "steady"),
    ("scarf", "yarn", "market", "wear", "soft"),
    ("basket", "straw", "market", "carry", "neat"),
    ("book", "paper", "library", "read", "long"),
    ("garden", "seeds", "yard", "water", "green"),
    ("drum", "leather", "studio", "play", "loud"),
]


def _object_variants(v, n):
    verb, intent, attr, react, effect, oreact = v
    noun, material, place, use, quality = n
    return {
        "xIntent": [
            f"to {intent} the {noun}",
            f"to be {attr}",
            f"to make a {quality} {noun}",
            "to have a good day",
            f"to {intent} something {quality}",
        ],
        "xNeed": [
            f"to get the {material}",
            f"to go to the {place}",
            f"to find the {material} first",
            f"to bring the {material} to the {place}",
            "to make a plan",
        ],
        "xAttr": [
            attr,
            f"very {attr}",
            f"{attr} and careful",
            "hardworking",
            f"quite {attr}",
        ],
        "xEffect": [
            f"gets {effect}",
            f"becomes {effect}",
            f"feels a bit {effect}",
            f"gets {effect} at the {place}",
            "needs a break",
        ],
        "xReact": [
            react,
            f"very {react}",
            f"{react} and pleased",
            f"quite {react}",
            "good",
        ],
        "xWant": [
            f"to {use} the {noun}",
            f"to show the {noun} to others",
            "to rest for a while",
            f"to {use} the {noun} at the {place}",
            f"to make another {noun}",
        ],
        "oEffect": [
            f"others get the {noun}",
            f"others see the {noun}",
            f"others enjoy the {noun}",
            f"others go to the {place}",
            "others smile",
        ],
        "oReact": [
            oreact,
            f"quite {oreact}",
            f"{oreact} and happy",
            f"very {oreact}",
            "pleased",
        ],
        "oWant": [
            f"to try the {noun}",
            "to thank personx",
            f"to visit the {place}",
            f"to ask for the {noun}",
            "to help next time",
        ],
    }


def _sentences(v, n):
    verb, intent, attr, react, effect, oreact = v
    noun, material, place, use, quality = n
    return [
        f"personx {verb} the {noun} at the {place}",
        f"after personx {verb} the {noun} personx feels {react}",
        f"personx needs the {material} from the {place}",
        f"others feel {oreact} when personx {verb} the {noun}",
        f"the {noun} is {quality} and personx is {attr}",
        f"personx wants to {use} the {noun}",
        f"when personx {verb} the {noun} personx gets {effect}",
    ]


def _subject(v, n):
    return f"personx {v[0]} the {n[0]}"


@dataclass
class MiniKb:
    split: DatasetSplit
    text_corpus: list[str]
    train_subjects: list[str]
    dev_subjects: list[str]
    test_subjects: list[str]


def generate_mini_kb(
    seed: int = 0,
    n_train_subjects: int = 32,
    n_dev_subjects: int = 6,
    n_test_subjects: int = 6,
) -> MiniKb:
    """Build the seeded mini-KB. Same seed, same output, always."""
    total = n_train_subjects + n_dev_subjects + n_test_subjects
    grid = [(v, n) for v in _VERBS for n in _NOUNS]
    if total > len(grid):
        raise ValueError(f"requested {total} subjects but grammar has {len(grid)} combos")
    rng = np.random.default_rng([seed, 0xC0])
    order = rng.permutation(len(grid))

    # Train combos must cover every verb and noun so held-out combos are
    # recombinations of seen atoms.
    train_combos, rest = [], []
    seen_v, seen_n = set(), set()
    for gi in order:
        v, n = grid[gi]
        need = v[0] not in seen_v or n[0] not in seen_n
        if need and len(train_combos) < n_train_subjects:
            train_combos.append((v, n))
            seen_v.add(v[0])
            seen_n.add(n[0])
        else:
            rest.append((v, n))
    for combo in rest[:]:
        if len(train_combos) >= n_train_subjects:
            break
        train_combos.append(combo)
        rest.remove(combo)
    dev_combos = rest[:n_dev_subjects]
    test_combos = rest[n_dev_subjects : n_dev_subjects + n_test_subjects]

    train, dev, test = [], [], []
    for v, n in train_combos:
        s = _subject(v, n)
        variants = _object_variants(v, n)
        flat = [(r, o) for r in sorted(variants) for o in variants[r]]
        held = rng.integers(0, len(flat))
        for i, (r, o) in enumerate(flat):
            part = dev if i == held else train
            part.append(KnowledgeTuple(s, r, o, "dev" if i == held else "train"))
    for combos, part, name in ((dev_combos, dev, "dev"), (test_combos, test, "test")):
        for v, n in combos:
            s = _subject(v, n)
            variants = _object_variants(v, n)
            for r in sorted(variants):
                for o in variants[r]:
                    part.append(KnowledgeTuple(s, r, o, name))

    text = []
    for v, n in train_combos:
        text.extend(_sentences(v, n))

    return MiniKb(
        split=DatasetSplit(train=train, dev=dev, test=test),
        text_corpus=text,
        train_subjects=[_subject(v, n) for v, n in train_combos],
        dev_subjects=[_subject(v, n) for v, n in dev_combos],
        test_subjects=[_subject(v, n) for v, n in test_combos],
    )
