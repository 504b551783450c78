"""Knowledge tuples, relation schemas, and dataset splits.

A knowledge base is a list of (subject, relation, object) tuples with free
text subjects and objects. Relations come from a schema set; two schema
sets ship with the package (a 9-relation social-events set and a
34-relation general-concepts set). All text is normalized to lowercase
single-spaced form so that set membership (dedup, novelty) is well defined.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from importlib import resources

import numpy as np

from . import KbgenError

VALID_SPLITS = ("train", "dev", "test")

# The literal blank placeholder used inside event phrases. It survives
# normalization and gets a dedicated vocabulary entry.
BLANK = "___"


class CorpusError(KbgenError):
    pass


class TupleFormatError(CorpusError):
    def __init__(self, path, line_no, message):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = str(path)
        self.line_no = line_no


class UnknownRelationError(CorpusError):
    def __init__(self, relation, where=""):
        suffix = f" ({where})" if where else ""
        super().__init__(f"unknown relation id {relation!r}{suffix}")
        self.relation = relation


def normalize_phrase(text: str) -> str:
    """Lowercase, trim, and collapse internal whitespace."""
    return " ".join(text.lower().split())


@dataclass(frozen=True)
class KnowledgeTuple:
    """One (subject, relation, object) knowledge record."""

    subject: str
    relation: str
    object: str
    split: str = "train"

    def normalized(self) -> "KnowledgeTuple":
        return KnowledgeTuple(
            subject=normalize_phrase(self.subject),
            relation=self.relation,
            object=normalize_phrase(self.object),
            split=self.split,
        )

    def key(self) -> tuple[str, str, str]:
        """Normalized (s, r, o) identity used for dedup and novelty."""
        return (
            normalize_phrase(self.subject),
            self.relation,
            normalize_phrase(self.object),
        )


@dataclass(frozen=True)
class RelationSchema:
    """A relation id plus its natural-language surface form and the
    hierarchy meta-tokens appended to it (empty for most schemas)."""

    id: str
    surface_form: tuple[str, ...]
    meta_tokens: tuple[str, ...] = ()


class SchemaSet:
    """Ordered collection of relation schemas with lookup by id."""

    def __init__(self, name: str, schemas: list[RelationSchema]):
        self.name = name
        self.schemas = list(schemas)
        self._by_id = {s.id: s for s in self.schemas}
        if len(self._by_id) != len(self.schemas):
            raise CorpusError(f"duplicate relation ids in schema set {name!r}")

    def __contains__(self, relation_id: str) -> bool:
        return relation_id in self._by_id

    def __iter__(self):
        return iter(self.schemas)

    def __len__(self) -> int:
        return len(self.schemas)

    @property
    def ids(self) -> list[str]:
        return [s.id for s in self.schemas]

    def get(self, relation_id: str) -> RelationSchema:
        try:
            return self._by_id[relation_id]
        except KeyError:
            raise UnknownRelationError(relation_id, f"schema set {self.name!r}") from None

    @property
    def meta_token_inventory(self) -> list[str]:
        """All meta tokens used by any schema, in canonical order."""
        seen = []
        for s in self.schemas:
            for t in s.meta_tokens:
                if t not in seen:
                    seen.append(t)
        return sorted(seen, key=_META_ORDER.index)

    @classmethod
    def from_file(cls, path, name=None) -> "SchemaSet":
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        return cls._from_records(name or str(path), raw)

    @classmethod
    def _from_records(cls, name, records) -> "SchemaSet":
        schemas = [
            RelationSchema(
                id=r["id"],
                surface_form=tuple(r.get("surface_form", [])),
                meta_tokens=tuple(r.get("meta_tokens", [])),
            )
            for r in records
        ]
        return cls(name, schemas)


_META_ORDER = ["<X>", "<Y>", "<Pre>", "<Post>", "<Voluntary>", "<Involuntary>"]


def _load_builtin(name: str) -> SchemaSet:
    raw = resources.files("kbgen.data").joinpath(f"{name}_relations.json").read_text("utf-8")
    return SchemaSet._from_records(name, json.loads(raw))


def atomic_schemas() -> SchemaSet:
    """The 9-relation social-events schema set, with meta-token table."""
    return _load_builtin("atomic")


def conceptnet_schemas() -> SchemaSet:
    """The 34-relation general-concepts schema set."""
    return _load_builtin("conceptnet")


def builtin_schemas(name: str) -> SchemaSet:
    if name == "atomic":
        return atomic_schemas()
    if name == "conceptnet":
        return conceptnet_schemas()
    raise CorpusError(f"no builtin schema set named {name!r}")


# Multi-relation training subsets for the social-events schema. T1/T2 pairs
# partition relations by which participant or time frame they describe;
# "pre-post" deliberately leaves out xAttr.
RELATION_GROUPS = {
    "personxy-t1": frozenset({"xAttr", "xEffect", "xIntent", "xNeed", "xReact", "xWant"}),
    "personxy-t2": frozenset({"oEffect", "oReact", "oWant"}),
    "prepost-t1": frozenset({"xIntent", "xNeed"}),
    "prepost-t2": frozenset({"oEffect", "oReact", "oWant", "xEffect", "xReact", "xWant"}),
    "involun-t1": frozenset({"oWant", "xIntent", "xNeed", "xWant"}),
    "involun-t2": frozenset({"oEffect", "oReact", "xAttr", "xEffect", "xReact"}),
    "full": frozenset(
        {"oEffect", "oReact", "oWant", "xAttr", "xEffect", "xIntent", "xNeed", "xReact", "xWant"}
    ),
}


@dataclass
class DatasetSplit:
    """Train/dev/test partitions of a tuple corpus.

    Partitions must be disjoint under normalized (s, r, o) identity.
    """

    train: list[KnowledgeTuple] = field(default_factory=list)
    dev: list[KnowledgeTuple] = field(default_factory=list)
    test: list[KnowledgeTuple] = field(default_factory=list)
    relation_subset: frozenset[str] | None = None

    def __post_init__(self):
        self._check_disjoint()

    def _check_disjoint(self):
        keys = {}
        for part in VALID_SPLITS:
            for t in getattr(self, part):
                k = t.key()
                prev = keys.get(k)
                if prev is not None and prev != part:
                    raise CorpusError(
                        f"tuple {k} appears in both {prev!r} and {part!r} partitions"
                    )
                keys[k] = part

    def part(self, name: str) -> list[KnowledgeTuple]:
        if name not in VALID_SPLITS:
            raise CorpusError(f"unknown partition {name!r}")
        return getattr(self, name)

    def sizes(self) -> dict[str, int]:
        return {p: len(getattr(self, p)) for p in VALID_SPLITS}


def make_split(tuples: list[KnowledgeTuple]) -> DatasetSplit:
    """Group tuples into a DatasetSplit by their split field."""
    parts = {p: [] for p in VALID_SPLITS}
    for t in tuples:
        parts[t.split].append(t)
    return DatasetSplit(train=parts["train"], dev=parts["dev"], test=parts["test"])


def load_tuples(path, fmt: str, schemas: SchemaSet, default_split: str = "train"):
    """Load knowledge tuples from a JSONL or TSV file.

    JSONL: one object per line with keys subject/relation/object and an
    optional split. TSV: relation<TAB>subject<TAB>object, split taken from
    default_split. Text fields are normalized; the relation must exist in
    the schema set. Errors carry the 1-based line number.
    """
    if fmt not in ("jsonl", "tsv"):
        raise CorpusError(f"unknown tuple format {fmt!r} (expected jsonl or tsv)")
    out = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            if fmt == "jsonl":
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise TupleFormatError(path, line_no, f"invalid JSON: {exc.msg}") from None
                if not isinstance(rec, dict):
                    raise TupleFormatError(path, line_no, "expected a JSON object")
                missing = [k for k in ("subject", "relation", "object") if k not in rec]
                if missing:
                    raise TupleFormatError(path, line_no, f"missing keys: {', '.join(missing)}")
                subject, relation, obj = rec["subject"], rec["relation"], rec["object"]
                split = rec.get("split", default_split)
            else:
                cols = line.rstrip("\n").split("\t")
                if len(cols) != 3:
                    raise TupleFormatError(path, line_no, f"expected 3 columns, got {len(cols)}")
                relation, subject, obj = cols
                split = default_split
            if split not in VALID_SPLITS:
                raise TupleFormatError(path, line_no, f"invalid split {split!r}")
            t = KnowledgeTuple(subject, relation, obj, split).normalized()
            if not t.subject:
                raise TupleFormatError(path, line_no, "empty subject")
            if not t.relation:
                raise TupleFormatError(path, line_no, "empty relation")
            if t.relation not in schemas:
                raise TupleFormatError(
                    path, line_no, f"unknown relation id {t.relation!r}"
                )
            out.append(t)
    return out


def save_tuples(tuples, path):
    """Write tuples as JSONL (one object per line, stable key order)."""
    with open(path, "w", encoding="utf-8") as fh:
        for t in tuples:
            fh.write(
                json.dumps(
                    {"subject": t.subject, "relation": t.relation, "object": t.object, "split": t.split},
                    sort_keys=True,
                )
                + "\n"
            )


def render_relation(schema: RelationSchema, mode: str) -> list[str]:
    """Render a relation either as its dedicated symbol token or as its
    natural-language surface form."""
    if mode == "symbol":
        return [f"<{schema.id}>"]
    if mode == "language":
        if not schema.surface_form:
            raise CorpusError(
                f"relation {schema.id!r} has no surface form; language rendering unavailable"
            )
        return list(schema.surface_form)
    raise CorpusError(f"unknown rendering mode {mode!r} (expected symbol or language)")


def apply_meta_tokens(schema: RelationSchema, enabled: bool) -> list[str]:
    """The ordered hierarchy meta-tokens appended after the relation tokens."""
    if not enabled:
        return []
    if not schema.meta_tokens:
        raise CorpusError(f"relation {schema.id!r} has no meta-token table entry")
    return list(schema.meta_tokens)


def subsample_training(split: DatasetSplit, fraction: float, seed: int) -> DatasetSplit:
    """Replace the train partition by a uniform sample without replacement
    of size round(fraction * len(train)), keeping original order."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    if not split.train:
        raise CorpusError("train partition is empty")
    if fraction == 1.0:
        return replace(split, train=list(split.train))
    n = len(split.train)
    k = int(n * fraction + 0.5)
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(n, size=k, replace=False))
    return replace(split, train=[split.train[i] for i in idx])


def filter_relations(split: DatasetSplit, subset, schemas: SchemaSet) -> DatasetSplit:
    """Restrict all three partitions to tuples whose relation is in subset."""
    subset = frozenset(subset)
    if not subset:
        raise CorpusError("relation subset must be non-empty")
    for rid in sorted(subset):
        if rid not in schemas:
            raise UnknownRelationError(rid, "filter_relations subset")
    return DatasetSplit(
        train=[t for t in split.train if t.relation in subset],
        dev=[t for t in split.dev if t.relation in subset],
        test=[t for t in split.test if t.relation in subset],
        relation_subset=subset,
    )
