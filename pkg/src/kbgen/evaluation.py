"""Automatic metrics for generated knowledge tuples.

Covers gold perplexity (exp of mean masked NLL), corpus-level BLEU-2
with multi-reference clipping, the three novelty proportions (novel full
triples, novel objects, and novel objects among unique objects), the
normalized word-level minimum-edit-distance profile of novel dev tuples
against training objects with the same (s, r), and an add-one unigram
baseline perplexity used as a sanity floor for trained models.
"""

from __future__ import annotations

import hashlib
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from . import KbgenError
from .corpus import KnowledgeTuple, normalize_phrase
from .model import ModelConfig
from .training import evaluate_loss

BLEU_EPS = 1e-9
N_BUCKETS = 10


class EvaluationError(KbgenError):
    pass


def load_stopwords() -> list[str]:
    text = resources.files("kbgen.data").joinpath("stopwords.txt").read_text("utf-8")
    return [w for w in text.split() if w]


def stopwords_sha256() -> str:
    words = load_stopwords()
    return hashlib.sha256("\n".join(words).encode("utf-8")).hexdigest()


def perplexity(params, config: ModelConfig, ids: np.ndarray, mask: np.ndarray,
               batch_size: int = 64) -> float:
    """exp(mean NLL per masked target token) over encoded tuples."""
    if ids.shape[0] == 0:
        raise EvaluationError("perplexity of an empty tuple set")
    return math.exp(evaluate_loss(params, config, ids, mask, batch_size))


def _ngram_counts(tokens, n):
    c = Counter()
    for i in range(len(tokens) - n + 1):
        c[tuple(tokens[i : i + n])] += 1
    return c


def bleu2(candidates: list[list[str]], references: list[list[list[str]]]) -> float:
    """Corpus-level BLEU with 1- and 2-gram precisions, equal weights,
    clipped counts against the per-item reference maxima, a brevity
    penalty using closest reference lengths, and epsilon smoothing when
    a precision has zero matches."""
    if not candidates:
        raise EvaluationError("bleu2 needs at least one candidate")
    if len(candidates) != len(references):
        raise EvaluationError(
            f"bleu2 got {len(candidates)} candidates but {len(references)} reference sets"
        )
    match = {1: 0, 2: 0}
    total = {1: 0, 2: 0}
    cand_len = 0
    ref_len = 0
    for cand, refs in zip(candidates, references):
        if not refs:
            raise EvaluationError("bleu2 reference set is empty for a candidate")
        cand_len += len(cand)
        ref_len += min((abs(len(r) - len(cand)), len(r)) for r in refs)[1]
        for n in (1, 2):
            counts = _ngram_counts(cand, n)
            if not counts:
                continue
            best = Counter()
            for r in refs:
                rc = _ngram_counts(r, n)
                for g, c in rc.items():
                    if c > best[g]:
                        best[g] = c
            total[n] += sum(counts.values())
            match[n] += sum(min(c, best[g]) for g, c in counts.items())
    if cand_len == 0:
        return 0.0
    log_p = 0.0
    for n in (1, 2):
        p = match[n] / total[n] if match[n] > 0 and total[n] > 0 else BLEU_EPS
        log_p += 0.5 * math.log(p)
    bp = 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / cand_len)
    return bp * math.exp(log_p)


def novelty_metrics(
    generated: list[KnowledgeTuple], train: list[KnowledgeTuple]
) -> tuple[float, float, float]:
    """(N/T sro, N/T o, N/U o) as percentages.

    N/T sro: share of generated tuples whose full normalized triple is
    absent from train. N/T o: share whose object string is absent from
    the train objects. N/U o: novel objects as a share of the unique
    generated objects.
    """
    if not generated:
        raise EvaluationError("novelty_metrics needs at least one generated tuple")
    train_triples = {t.key() for t in train}
    train_objects = {normalize_phrase(t.object) for t in train}
    novel_sro = sum(1 for g in generated if g.key() not in train_triples)
    novel_o = sum(1 for g in generated if normalize_phrase(g.object) not in train_objects)
    unique_objects = {normalize_phrase(g.object) for g in generated}
    novel_unique = sum(1 for o in unique_objects if o not in train_objects)
    n = len(generated)
    return (
        100.0 * novel_sro / n,
        100.0 * novel_o / n,
        100.0 * novel_unique / len(unique_objects),
    )


def word_edit_distance(a: list[str], b: list[str]) -> int:
    """Word-level Levenshtein distance."""
    if not a:
        return len(b)
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, wa in enumerate(a, start=1):
        cur = [i] + [0] * len(b)
        for j, wb in enumerate(b, start=1):
            cur[j] = min(
                prev[j] + 1,
                cur[j - 1] + 1,
                prev[j - 1] + (wa != wb),
            )
        prev = cur
    return prev[-1]


def normalized_object_distance(o_a: str, o_b: str, stopwords) -> float:
    """Levenshtein over stopword-filtered word tokens, divided by the
    longer filtered length. Zero iff the filtered sequences are equal."""
    sw = set(stopwords)
    ta = [w for w in normalize_phrase(o_a).split() if w not in sw]
    tb = [w for w in normalize_phrase(o_b).split() if w not in sw]
    longest = max(len(ta), len(tb))
    if longest == 0:
        return 0.0
    return word_edit_distance(ta, tb) / longest


@dataclass
class EditDistanceProfile:
    """Histogram of normalized minimum edit distances in 10 buckets over
    [0, 1]; distances of exactly 1.0 land in the last bucket. The
    accuracy slots stay None unless an external tuple scorer fills them."""

    counts: list[int] = field(default_factory=lambda: [0] * N_BUCKETS)
    bucket_accuracy: list = field(default_factory=lambda: [None] * N_BUCKETS)
    skipped: int = 0
    distances: list[float] = field(default_factory=list)

    @property
    def n_scored(self) -> int:
        return len(self.distances)

    def bucket_rows(self):
        for i, c in enumerate(self.counts):
            yield (i / N_BUCKETS, (i + 1) / N_BUCKETS, c)

    def write_csv(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("bucket_low,bucket_high,count\n")
            for lo, hi, c in self.bucket_rows():
                fh.write(f"{lo:.1f},{hi:.1f},{c}\n")


def edit_distance_profile(
    novel_dev: list[KnowledgeTuple],
    train: list[KnowledgeTuple],
    stopwords=None,
) -> EditDistanceProfile:
    """For each novel dev tuple sharing (s, r) with training data, the
    minimum normalized edit distance between its object and any training
    object under the same (s, r). Tuples with no (s, r) match in train
    are skipped and counted."""
    if stopwords is None:
        stopwords = load_stopwords()
    by_prefix: dict[tuple[str, str], list[str]] = {}
    for t in train:
        by_prefix.setdefault((normalize_phrase(t.subject), t.relation), []).append(t.object)
    profile = EditDistanceProfile()
    for t in novel_dev:
        pool = by_prefix.get((normalize_phrase(t.subject), t.relation))
        if not pool:
            profile.skipped += 1
            continue
        d = min(normalized_object_distance(t.object, o, stopwords) for o in pool)
        profile.distances.append(d)
        profile.counts[min(int(d * N_BUCKETS), N_BUCKETS - 1)] += 1
    return profile


def unigram_baseline_ppl(
    train: list[KnowledgeTuple],
    eval_tuples: list[KnowledgeTuple],
    vocab_size: int | None = None,
) -> float:
    """Perplexity of an add-one-smoothed unigram model fit on training
    object tokens (plus one END per object), evaluated on eval object
    tokens plus END. vocab_size defaults to the number of distinct types
    seen across both sides, END included."""
    if not train or not eval_tuples:
        raise EvaluationError("unigram baseline needs non-empty train and eval sets")
    counts = Counter()
    for t in train:
        counts.update(normalize_phrase(t.object).split())
    n_end = len(train)
    total = sum(counts.values()) + n_end
    if vocab_size is None:
        types = set(counts)
        for t in eval_tuples:
            types.update(normalize_phrase(t.object).split())
        vocab_size = len(types) + 1  # END
    log_sum = 0.0
    n_tokens = 0
    denom = total + vocab_size
    for t in eval_tuples:
        toks = normalize_phrase(t.object).split()
        for tok in toks:
            log_sum += math.log((counts[tok] + 1) / denom)
        log_sum += math.log((n_end + 1) / denom)
        n_tokens += len(toks) + 1
    return math.exp(-log_sum / n_tokens)


@dataclass
class EvalReport:
    """All metrics for one evaluation run."""

    n_generated: int
    ppl: float | None = None
    bleu2: float | None = None
    n_t_sro: float | None = None
    n_t_o: float | None = None
    n_u_o: float | None = None
    edit_profile: EditDistanceProfile | None = None
    unigram_ppl: float | None = None
    stopwords_sha256: str | None = None
    novelty_pooling: str = "pooled across all test events"

    def to_dict(self) -> dict:
        d = {
            "n_generated": self.n_generated,
            "ppl": self.ppl,
            "bleu2": self.bleu2,
            "n_t_sro": self.n_t_sro,
            "n_t_o": self.n_t_o,
            "n_u_o": self.n_u_o,
            "unigram_ppl": self.unigram_ppl,
            "stopwords_sha256": self.stopwords_sha256,
            "novelty_pooling": self.novelty_pooling,
        }
        if self.edit_profile is not None:
            d["edit_profile"] = {
                "counts": self.edit_profile.counts,
                "bucket_accuracy": self.edit_profile.bucket_accuracy,
                "skipped": self.edit_profile.skipped,
                "n_scored": self.edit_profile.n_scored,
            }
        else:
            d["edit_profile"] = None
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)
