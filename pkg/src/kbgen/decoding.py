"""Object-phrase generation for a (subject, relation) prefix.

All decoders share the fixed grid: the prompt occupies the subject and
relation segments (with MASK padding) and generated tokens are written
into the object segment only. Padding, relation-symbol, and meta tokens
are never legal object words, so their logits are masked out before the
per-step log-softmax; candidate log-probabilities are sums of these
masked log-softmax values and can be reproduced by re-scoring the
finished candidate through a single forward pass.

Beam scoring uses raw cumulative log-probability (no length
normalization). Ties break toward the hypothesis that terminated
earlier, then lexicographically by token ids.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import KbgenError
from .corpus import KnowledgeTuple, SchemaSet
from .model import ModelConfig, forward
from .vocab import TupleLayout, Vocabulary, encode_tuple


class DecodingError(KbgenError):
    pass


@dataclass(frozen=True)
class GenerationCandidate:
    """Generated object tokens (prefix excluded) with their cumulative
    log-probability, which includes the END step when terminated."""

    tokens: tuple[int, ...]
    log_prob: float
    terminated: bool

    def text(self, vocab: Vocabulary) -> str:
        return vocab.decode(self.tokens)


def build_prefix(
    vocab: Vocabulary,
    subject: str,
    relation: str,
    layout: TupleLayout,
    schemas: SchemaSet,
    mode: str = "symbol",
    meta_tokens: bool = False,
) -> np.ndarray:
    """Encoded subject+relation segments (length max_s + max_r)."""
    seq = encode_tuple(
        vocab,
        KnowledgeTuple(subject, relation, ""),
        layout,
        schemas,
        mode=mode,
        meta_tokens=meta_tokens,
    )
    if seq.n_subject == 0:
        raise DecodingError("prompt subject is empty")
    return seq.ids[: layout.object_start].copy()


def blocked_token_ids(vocab: Vocabulary) -> np.ndarray:
    """Specials that can never be object words: PAD/MASK plus all
    relation-symbol and meta tokens. END/UNK/blank stay allowed."""
    allowed = {vocab.end_id, vocab.unk_id, vocab.blank_id}
    return np.array(
        [i for i in vocab.special_token_ids() if i not in allowed], dtype=np.int64
    )


def _step_log_probs(params, config: ModelConfig, rows: np.ndarray, blocked: np.ndarray) -> np.ndarray:
    """Masked log-softmax over the next token for each row. float64."""
    logits = forward(params, config, rows, training=False).data[:, -1, :].astype(np.float64)
    if blocked.size:
        logits[:, blocked] = -np.inf
    m = np.max(logits, axis=-1, keepdims=True)
    lse = m + np.log(np.sum(np.exp(logits - m), axis=-1, keepdims=True))
    return logits - lse


def _extend(rows_prefix: np.ndarray, hyps: list[tuple[tuple[int, ...], float]]) -> np.ndarray:
    n = len(hyps)
    width = rows_prefix.shape[0] + len(hyps[0][0])
    rows = np.empty((n, width), dtype=np.int32)
    rows[:, : rows_prefix.shape[0]] = rows_prefix
    for i, (toks, _) in enumerate(hyps):
        if toks:
            rows[i, rows_prefix.shape[0] :] = toks
    return rows


def greedy(params, config: ModelConfig, vocab: Vocabulary, prefix: np.ndarray,
           max_len: int) -> GenerationCandidate:
    """Argmax decoding; ties go to the lowest token id; stops at END or
    after max_len object tokens."""
    blocked = blocked_token_ids(vocab)
    tokens: list[int] = []
    log_prob = 0.0
    for _ in range(max_len):
        rows = np.concatenate([prefix, np.asarray(tokens, dtype=np.int32)])[None, :]
        lp = _step_log_probs(params, config, rows, blocked)[0]
        nxt = int(np.argmax(lp))
        log_prob += float(lp[nxt])
        if nxt == vocab.end_id:
            return GenerationCandidate(tuple(tokens), log_prob, True)
        tokens.append(nxt)
    return GenerationCandidate(tuple(tokens), log_prob, False)


def beam_search(params, config: ModelConfig, vocab: Vocabulary, prefix: np.ndarray,
                beam_width: int, max_len: int) -> list[GenerationCandidate]:
    """Width-limited best-first search over object sequences.

    Each step expands every live hypothesis over the full (unblocked)
    vocabulary and keeps the top beam_width expansions; hypotheses that
    emit END retire to the finished pool and stop competing. Returns up
    to beam_width candidates, finished first, sorted by log-probability.
    """
    if beam_width < 1:
        raise DecodingError(f"beam width must be >= 1, got {beam_width}")
    blocked = blocked_token_ids(vocab)
    live: list[tuple[tuple[int, ...], float]] = [((), 0.0)]
    finished: list[GenerationCandidate] = []
    for _ in range(max_len):
        if not live:
            break
        rows = _extend(prefix, live)
        lps = _step_log_probs(params, config, rows, blocked)
        expansions = []
        for (toks, acc), lp in zip(live, lps):
            for tok in range(lp.shape[0]):
                s = lp[tok]
                if s == -np.inf:
                    continue
                expansions.append((acc + s, tok == vocab.end_id, toks + (tok,)))
        expansions.sort(key=lambda e: (-e[0], not e[1], e[2]))
        live = []
        for score, is_end, toks in expansions[:beam_width]:
            if is_end:
                finished.append(GenerationCandidate(toks[:-1], score, True))
            else:
                live.append((toks, score))
    finished.sort(key=lambda c: (-c.log_prob, len(c.tokens), c.tokens))
    leftovers = [GenerationCandidate(t, s, False) for t, s in live]
    leftovers.sort(key=lambda c: (-c.log_prob, c.tokens))
    return (finished + leftovers)[:beam_width]


def top_k_sample(params, config: ModelConfig, vocab: Vocabulary, prefix: np.ndarray,
                 k: int, n_samples: int, seed: int, max_len: int) -> list[GenerationCandidate]:
    """n_samples independent rollouts; each step samples from the
    renormalized k most-probable tokens (ties at the boundary go to
    lower ids). Reported log-probabilities are model log-softmax values,
    not the renormalized ones."""
    if k < 1:
        raise DecodingError(f"k must be >= 1, got {k}")
    if n_samples < 1:
        raise DecodingError(f"n_samples must be >= 1, got {n_samples}")
    blocked = blocked_token_ids(vocab)
    rng = np.random.default_rng([seed, 0x70])
    tokens: list[list[int]] = [[] for _ in range(n_samples)]
    log_probs = np.zeros(n_samples)
    alive = np.ones(n_samples, dtype=bool)
    terminated = np.zeros(n_samples, dtype=bool)
    for _ in range(max_len):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        hyps = [(tuple(tokens[i]), 0.0) for i in idx]
        lps = _step_log_probs(params, config, _extend(prefix, hyps), blocked)
        top = np.argsort(-lps, axis=1, kind="stable")[:, :k]
        top_lp = np.take_along_axis(lps, top, axis=1)
        probs = np.exp(top_lp - top_lp.max(axis=1, keepdims=True))
        cum = np.cumsum(probs, axis=1)
        cum /= cum[:, -1:]
        u = rng.random(idx.size)
        choice = np.argmax(u[:, None] < cum, axis=1)
        for row, i in enumerate(idx):
            tok = int(top[row, choice[row]])
            log_probs[i] += float(lps[row, tok])
            if tok == vocab.end_id:
                alive[i] = False
                terminated[i] = True
            else:
                tokens[i].append(tok)
    return [
        GenerationCandidate(tuple(tokens[i]), float(log_probs[i]), bool(terminated[i]))
        for i in range(n_samples)
    ]


def rescore(params, config: ModelConfig, vocab: Vocabulary, prefix: np.ndarray,
            candidate: GenerationCandidate) -> float:
    """Recompute a candidate's log-probability with one forward pass."""
    blocked = blocked_token_ids(vocab)
    targets = list(candidate.tokens) + ([vocab.end_id] if candidate.terminated else [])
    if not targets:
        return 0.0
    row = np.asarray(list(prefix) + targets, dtype=np.int32)[None, :]
    logits = forward(params, config, row, training=False).data[0].astype(np.float64)
    if blocked.size:
        logits[:, blocked] = -np.inf
    m = np.max(logits, axis=-1, keepdims=True)
    lse = m + np.log(np.sum(np.exp(logits - m), axis=-1, keepdims=True))
    lp = logits - lse
    start = len(prefix) - 1
    total = 0.0
    for j, tok in enumerate(targets):
        total += float(lp[start + j, tok])
    return total


def decode_prompt(
    params,
    config: ModelConfig,
    vocab: Vocabulary,
    layout: TupleLayout,
    schemas: SchemaSet,
    subject: str,
    relation: str,
    decoder: str,
    mode: str = "symbol",
    meta_tokens: bool = False,
    beam_width: int = 10,
    k: int = 5,
    n_samples: int = 5,
    seed: int = 0,
) -> list[GenerationCandidate]:
    """Run the selected decoder for one (subject, relation) prompt."""
    prefix = build_prefix(vocab, subject, relation, layout, schemas, mode, meta_tokens)
    if decoder == "greedy":
        return [greedy(params, config, vocab, prefix, layout.max_o)]
    if decoder == "beam":
        return beam_search(params, config, vocab, prefix, beam_width, layout.max_o)
    if decoder == "topk":
        return top_k_sample(params, config, vocab, prefix, k, n_samples, seed, layout.max_o)
    raise DecodingError(f"unknown decoder {decoder!r} (expected greedy, beam, or topk)")
