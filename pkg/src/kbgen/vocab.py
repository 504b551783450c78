"""Word-level vocabulary and fixed-layout tuple encoding.

Encoded tuples occupy a fixed grid: max_s subject slots, then max_r
relation slots, then max_o + 1 object slots (object words plus an END
terminator). Unused slots hold the MASK padding token, which is embedded
and attended like any other token but is never a loss target. The loss
mask marks the positions whose *next-token prediction target* is an
object word or END, so it always has exactly |o| + 1 true entries.
"""

from __future__ import annotations

import hashlib
import json
from collections import Counter
from dataclasses import dataclass

import numpy as np

from . import KbgenError
from .corpus import (
    BLANK,
    KnowledgeTuple,
    SchemaSet,
    apply_meta_tokens,
    normalize_phrase,
    render_relation,
)

PAD_TOKEN = "<mask>"
END_TOKEN = "<end>"
UNK_TOKEN = "<unk>"


class VocabError(KbgenError):
    pass


class SegmentOverflowError(VocabError):
    def __init__(self, segment, length, limit):
        super().__init__(f"{segment} segment has {length} tokens, layout allows {limit}")
        self.segment = segment
        self.length = length
        self.limit = limit


class Vocabulary:
    """Bijective token/id map: special tokens first, then word tokens."""

    def __init__(self, specials: list[str], words: list[str]):
        self.specials = list(specials)
        self.words = list(words)
        self.id_to_token = self.specials + self.words
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise VocabError("duplicate tokens in vocabulary")
        self.pad_id = self.token_to_id[PAD_TOKEN]
        self.end_id = self.token_to_id[END_TOKEN]
        self.unk_id = self.token_to_id[UNK_TOKEN]
        self.blank_id = self.token_to_id[BLANK]

    def __len__(self) -> int:
        return len(self.id_to_token)

    @property
    def n_specials(self) -> int:
        return len(self.specials)

    def relation_id(self, relation: str) -> int:
        try:
            return self.token_to_id[f"<{relation}>"]
        except KeyError:
            raise VocabError(f"relation token <{relation}> not in vocabulary") from None

    def special_token_ids(self) -> list[int]:
        return list(range(self.n_specials))

    def encode(self, text: str) -> list[int]:
        """Normalize, split on whitespace, and map words to ids (UNK for
        out-of-vocabulary words)."""
        ids = []
        for w in normalize_phrase(text).split():
            ids.append(self.token_to_id.get(w, self.unk_id))
        return ids

    def decode(self, ids) -> str:
        """Inverse of encode; drops PAD and END, joins with single spaces."""
        words = []
        for i in ids:
            i = int(i)
            if not 0 <= i < len(self.id_to_token):
                raise VocabError(f"token id {i} out of range (vocab size {len(self)})")
            if i == self.pad_id or i == self.end_id:
                continue
            words.append(self.id_to_token[i])
        return " ".join(words)

    def to_json(self) -> str:
        return json.dumps({"specials": self.specials, "words": self.words})

    @classmethod
    def from_json(cls, text: str) -> "Vocabulary":
        raw = json.loads(text)
        return cls(raw["specials"], raw["words"])

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())

    def sha256(self) -> str:
        return hashlib.sha256(self.to_json().encode("utf-8")).hexdigest()


def build_vocab(
    tuples: list[KnowledgeTuple],
    schemas: SchemaSet,
    min_count: int = 1,
    extra_texts: list[str] | None = None,
    include_surface_forms: bool = False,
) -> Vocabulary:
    """Build a vocabulary from a tuple corpus.

    Specials (always included): PAD/MASK, END, UNK, the blank token, one
    symbol per relation, and the schema set's meta tokens. Word ids go by
    descending corpus frequency, ties broken lexicographically; words
    below min_count map to UNK at encode time. For language-mode
    rendering, pass include_surface_forms so relation surface words are
    always encodable.
    """
    if not tuples and not extra_texts:
        raise VocabError("cannot build a vocabulary from an empty corpus")
    counts = Counter()
    for t in tuples:
        counts.update(normalize_phrase(t.subject).split())
        counts.update(normalize_phrase(t.object).split())
    for text in extra_texts or []:
        counts.update(normalize_phrase(text).split())

    forced = set()
    if include_surface_forms:
        for schema in schemas:
            forced.update(schema.surface_form)

    specials = [PAD_TOKEN, END_TOKEN, UNK_TOKEN, BLANK]
    specials += [f"<{s.id}>" for s in schemas]
    specials += schemas.meta_token_inventory

    words = sorted(
        (w for w, c in counts.items() if (c >= min_count or w in forced) and w != BLANK),
        key=lambda w: (-counts[w], w),
    )
    for w in sorted(forced):
        if w not in counts and w != BLANK:
            words.append(w)
    return Vocabulary(specials, words)


@dataclass(frozen=True)
class TupleLayout:
    """Fixed segment widths of the encoded grid."""

    max_s: int = 17
    max_r: int = 5
    max_o: int = 15

    @property
    def total(self) -> int:
        return self.max_s + self.max_r + self.max_o + 1

    @property
    def object_start(self) -> int:
        return self.max_s + self.max_r


def default_layout(mode: str = "symbol", meta_tokens: bool = False, max_s: int = 17, max_o: int = 15) -> TupleLayout:
    """Layout defaults: 1 relation slot in symbol mode (+3 with meta
    tokens), 5 in language mode."""
    if mode == "language":
        max_r = 5
    else:
        max_r = 4 if meta_tokens else 1
    return TupleLayout(max_s=max_s, max_r=max_r, max_o=max_o)


@dataclass
class EncodedSequence:
    """One tuple on the fixed grid; positions are implicitly 0..len-1."""

    ids: np.ndarray  # (total,) int32
    loss_mask: np.ndarray  # (total,) bool
    n_subject: int
    n_relation: int
    n_object: int


def render_relation_ids(
    vocab: Vocabulary,
    schemas: SchemaSet,
    relation: str,
    mode: str,
    meta_tokens: bool,
) -> list[int]:
    schema = schemas.get(relation)
    tokens = render_relation(schema, mode)
    tokens += apply_meta_tokens(schema, meta_tokens)
    ids = []
    for tok in tokens:
        if tok.startswith("<") and tok.endswith(">"):
            if tok not in vocab.token_to_id:
                raise VocabError(f"special token {tok} not in vocabulary")
            ids.append(vocab.token_to_id[tok])
        else:
            ids.extend(vocab.encode(tok))
    return ids


def encode_tuple(
    vocab: Vocabulary,
    tpl: KnowledgeTuple,
    layout: TupleLayout,
    schemas: SchemaSet,
    mode: str = "symbol",
    meta_tokens: bool = False,
) -> EncodedSequence:
    """Place a tuple on the fixed grid and compute its loss mask.

    Grid: [s words, MASK pad][relation tokens, MASK pad][o words, END,
    MASK pad]. The mask is true on position t exactly when the token at
    t + 1 is an object word or END.
    """
    s_ids = vocab.encode(tpl.subject)
    r_ids = render_relation_ids(vocab, schemas, tpl.relation, mode, meta_tokens)
    o_ids = vocab.encode(tpl.object)
    if len(s_ids) > layout.max_s:
        raise SegmentOverflowError("subject", len(s_ids), layout.max_s)
    if len(r_ids) > layout.max_r:
        raise SegmentOverflowError("relation", len(r_ids), layout.max_r)
    if len(o_ids) > layout.max_o:
        raise SegmentOverflowError("object", len(o_ids), layout.max_o)

    ids = np.full(layout.total, vocab.pad_id, dtype=np.int32)
    ids[: len(s_ids)] = s_ids
    ids[layout.max_s : layout.max_s + len(r_ids)] = r_ids
    obj_start = layout.object_start
    ids[obj_start : obj_start + len(o_ids)] = o_ids
    ids[obj_start + len(o_ids)] = vocab.end_id

    mask = np.zeros(layout.total, dtype=bool)
    mask[obj_start - 1 : obj_start + len(o_ids)] = True

    return EncodedSequence(
        ids=ids,
        loss_mask=mask,
        n_subject=len(s_ids),
        n_relation=len(r_ids),
        n_object=len(o_ids),
    )


def encode_sentence(vocab: Vocabulary, sentence: str, total_len: int) -> EncodedSequence:
    """Encode a plain sentence for language-model training: every real
    next-token target (words after the first, plus END) is masked in."""
    w_ids = vocab.encode(sentence)
    if len(w_ids) + 1 > total_len:
        raise SegmentOverflowError("sentence", len(w_ids) + 1, total_len)
    ids = np.full(total_len, vocab.pad_id, dtype=np.int32)
    ids[: len(w_ids)] = w_ids
    ids[len(w_ids)] = vocab.end_id
    mask = np.zeros(total_len, dtype=bool)
    mask[: len(w_ids)] = True
    return EncodedSequence(ids=ids, loss_mask=mask, n_subject=0, n_relation=0, n_object=len(w_ids))


def stack_sequences(seqs: list[EncodedSequence]) -> tuple[np.ndarray, np.ndarray]:
    """Stack encoded sequences into (N, L) ids and loss-mask arrays."""
    if not seqs:
        raise VocabError("cannot stack an empty sequence list")
    ids = np.stack([s.ids for s in seqs])
    mask = np.stack([s.loss_mask for s in seqs])
    return ids, mask


def encode_tuples(
    vocab: Vocabulary,
    tuples: list[KnowledgeTuple],
    layout: TupleLayout,
    schemas: SchemaSet,
    mode: str = "symbol",
    meta_tokens: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """Encode and stack a tuple list into (N, L) ids/mask arrays."""
    return stack_sequences(
        [encode_tuple(vocab, t, layout, schemas, mode, meta_tokens) for t in tuples]
    )
