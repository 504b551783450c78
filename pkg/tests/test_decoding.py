import itertools

import numpy as np
import pytest

from conftest import tiny_model
from kbgen.corpus import KnowledgeTuple
from kbgen.decoding import (
    DecodingError,
    GenerationCandidate,
    beam_search,
    blocked_token_ids,
    build_prefix,
    decode_prompt,
    greedy,
    rescore,
    top_k_sample,
    _step_log_probs,
)
from kbgen.vocab import TupleLayout, build_vocab


@pytest.fixture(scope="module")
def setup(request):
    from kbgen.corpus import atomic_schemas

    schemas = atomic_schemas()
    tuples = [
        KnowledgeTuple("personx bakes the bread", "xReact", "proud", "train"),
        KnowledgeTuple("personx fixes the bike", "xNeed", "to get the tools", "train"),
        KnowledgeTuple("personx buys the cake", "xWant", "to share the cake", "train"),
    ]
    vocab = build_vocab(tuples, schemas)
    layout = TupleLayout(max_s=6, max_r=1, max_o=5)
    cfg, params = tiny_model(len(vocab), vocab.n_specials, seed=11,
                             max_seq_len=layout.total)
    return schemas, vocab, layout, cfg, params


def test_build_prefix_layout(setup):
    schemas, vocab, layout, cfg, params = setup
    prefix = build_prefix(vocab, "personx bakes the bread", "xReact", layout, schemas)
    assert len(prefix) == layout.object_start
    assert prefix[layout.max_s] == vocab.relation_id("xReact")


def test_build_prefix_empty_subject(setup):
    schemas, vocab, layout, cfg, params = setup
    with pytest.raises(DecodingError):
        build_prefix(vocab, "   ", "xReact", layout, schemas)


def test_blocked_ids_exclude_structural_specials(setup):
    schemas, vocab, layout, cfg, params = setup
    blocked = set(blocked_token_ids(vocab).tolist())
    assert vocab.pad_id in blocked
    assert vocab.relation_id("xNeed") in blocked
    assert vocab.token_to_id["<X>"] in blocked
    assert vocab.end_id not in blocked
    assert vocab.unk_id not in blocked
    assert vocab.blank_id not in blocked


def test_greedy_deterministic_and_clean(setup):
    schemas, vocab, layout, cfg, params = setup
    prefix = build_prefix(vocab, "personx bakes the bread", "xReact", layout, schemas)
    a = greedy(params, cfg, vocab, prefix, layout.max_o)
    b = greedy(params, cfg, vocab, prefix, layout.max_o)
    assert a == b
    blocked = set(blocked_token_ids(vocab).tolist())
    assert not (set(a.tokens) & blocked)
    assert len(a.tokens) <= layout.max_o


def test_greedy_equals_beam_width_one(setup):
    schemas, vocab, layout, cfg, params = setup
    for subject, relation in [
        ("personx bakes the bread", "xReact"),
        ("personx fixes the bike", "xNeed"),
        ("personx buys the cake", "xWant"),
    ]:
        prefix = build_prefix(vocab, subject, relation, layout, schemas)
        g = greedy(params, cfg, vocab, prefix, layout.max_o)
        b = beam_search(params, cfg, vocab, prefix, 1, layout.max_o)[0]
        assert g.tokens == b.tokens
        assert g.terminated == b.terminated
        assert g.log_prob == pytest.approx(b.log_prob, abs=1e-9)


def test_beam_returns_sorted_distinct(setup):
    schemas, vocab, layout, cfg, params = setup
    prefix = build_prefix(vocab, "personx bakes the bread", "xReact", layout, schemas)
    cands = beam_search(params, cfg, vocab, prefix, 10, layout.max_o)
    assert len(cands) == 10
    finished = [c for c in cands if c.terminated]
    unfinished = [c for c in cands if not c.terminated]
    assert cands[: len(finished)] == finished  # finished ranked first
    for group in (finished, unfinished):
        lps = [c.log_prob for c in group]
        assert lps == sorted(lps, reverse=True)
    assert len({c.tokens for c in cands}) == len(cands)


def test_beam_bad_width(setup):
    schemas, vocab, layout, cfg, params = setup
    prefix = build_prefix(vocab, "personx bakes the bread", "xReact", layout, schemas)
    with pytest.raises(DecodingError):
        beam_search(params, cfg, vocab, prefix, 0, layout.max_o)


def _five_word_setup(seed):
    """Vocab with exactly five object words for exhaustive enumeration."""
    from kbgen.corpus import atomic_schemas

    schemas = atomic_schemas()
    tuples = [KnowledgeTuple("ash bird cat", "xNeed", "dog elm", "train")]
    vocab = build_vocab(tuples, schemas)
    assert len(vocab.words) == 5
    layout = TupleLayout(max_s=3, max_r=1, max_o=3)
    cfg, params = tiny_model(len(vocab), vocab.n_specials, seed=seed,
                             max_seq_len=layout.total)
    prefix = build_prefix(vocab, "ash bird cat", "xNeed", layout, schemas)
    return schemas, vocab, layout, cfg, params, prefix


def _enumerate_best(params, cfg, vocab, prefix, layout):
    word_ids = [vocab.token_to_id[w] for w in vocab.words] + [vocab.unk_id, vocab.blank_id]
    ranked = []
    for n_tokens in range(layout.max_o):
        for tokens in itertools.product(sorted(word_ids), repeat=n_tokens):
            cand = GenerationCandidate(tokens, 0.0, True)
            score = rescore(params, cfg, vocab, prefix, cand)
            ranked.append(GenerationCandidate(tokens, score, True))
    ranked.sort(key=lambda c: (-c.log_prob, len(c.tokens), c.tokens))
    return ranked[0]


def test_beam_matches_exhaustive_enumeration():
    hits = 0
    for trial in range(10):
        schemas, vocab, layout, cfg, params, prefix = _five_word_setup(seed=trial)
        best = _enumerate_best(params, cfg, vocab, prefix, layout)
        cands = beam_search(params, cfg, vocab, prefix, 200, layout.max_o)
        assert cands[0].terminated
        assert cands[0].tokens == best.tokens
        assert cands[0].log_prob == pytest.approx(best.log_prob, abs=1e-5)
        hits += 1
    assert hits == 10


def test_topk_k1_equals_greedy(setup):
    schemas, vocab, layout, cfg, params = setup
    prefix = build_prefix(vocab, "personx fixes the bike", "xNeed", layout, schemas)
    g = greedy(params, cfg, vocab, prefix, layout.max_o)
    samples = top_k_sample(params, cfg, vocab, prefix, k=1, n_samples=3, seed=5,
                           max_len=layout.max_o)
    for s in samples:
        assert s.tokens == g.tokens
        assert s.log_prob == pytest.approx(g.log_prob, abs=1e-9)


def test_topk_samples_stay_in_topk_set(setup):
    schemas, vocab, layout, cfg, params = setup
    k = 4
    prefix = build_prefix(vocab, "personx buys the cake", "xWant", layout, schemas)
    blocked = blocked_token_ids(vocab)
    samples = top_k_sample(params, cfg, vocab, prefix, k=k, n_samples=20, seed=2,
                           max_len=layout.max_o)
    for cand in samples:
        seq = list(cand.tokens) + ([vocab.end_id] if cand.terminated else [])
        row = list(prefix)
        for tok in seq:
            lp = _step_log_probs(params, cfg, np.asarray(row, dtype=np.int32)[None, :],
                                 blocked)[0]
            top = np.argsort(-lp, kind="stable")[:k]
            assert tok in top
            row.append(tok)


def test_topk_deterministic_per_seed(setup):
    schemas, vocab, layout, cfg, params = setup
    prefix = build_prefix(vocab, "personx buys the cake", "xWant", layout, schemas)
    a = top_k_sample(params, cfg, vocab, prefix, 5, 8, seed=9, max_len=layout.max_o)
    b = top_k_sample(params, cfg, vocab, prefix, 5, 8, seed=9, max_len=layout.max_o)
    c = top_k_sample(params, cfg, vocab, prefix, 5, 8, seed=10, max_len=layout.max_o)
    assert a == b
    assert a != c
    assert len(a) == 8


def test_topk_first_step_frequencies_within_3_sigma():
    schemas, vocab, layout, cfg, params, prefix = _five_word_setup(seed=3)
    k = 3
    n = 10_000
    blocked = blocked_token_ids(vocab)
    lp = _step_log_probs(params, cfg, prefix[None, :], blocked)[0]
    top = np.argsort(-lp, kind="stable")[:k]
    p = np.exp(lp[top] - lp[top].max())
    p /= p.sum()
    one_step = TupleLayout(layout.max_s, layout.max_r, 1)
    samples = top_k_sample(params, cfg, vocab, prefix, k, n, seed=0, max_len=1)
    counts = {int(t): 0 for t in top}
    for cand in samples:
        first = vocab.end_id if (cand.terminated and not cand.tokens) else cand.tokens[0]
        counts[first] += 1
    for tok, prob in zip(top, p):
        sigma = np.sqrt(n * prob * (1 - prob))
        assert abs(counts[int(tok)] - n * prob) <= 3 * sigma + 1


def test_bad_k_and_n(setup):
    schemas, vocab, layout, cfg, params = setup
    prefix = build_prefix(vocab, "personx buys the cake", "xWant", layout, schemas)
    with pytest.raises(DecodingError):
        top_k_sample(params, cfg, vocab, prefix, 0, 1, 0, layout.max_o)
    with pytest.raises(DecodingError):
        top_k_sample(params, cfg, vocab, prefix, 2, 0, 0, layout.max_o)


def test_rescore_reproduces_log_probs(setup):
    schemas, vocab, layout, cfg, params = setup
    prefix = build_prefix(vocab, "personx fixes the bike", "xNeed", layout, schemas)
    cands = beam_search(params, cfg, vocab, prefix, 6, layout.max_o)
    cands += top_k_sample(params, cfg, vocab, prefix, 5, 4, seed=1, max_len=layout.max_o)
    cands.append(greedy(params, cfg, vocab, prefix, layout.max_o))
    for cand in cands:
        again = rescore(params, cfg, vocab, prefix, cand)
        assert again == pytest.approx(cand.log_prob, abs=1e-5)


def test_decode_prompt_dispatch(setup):
    schemas, vocab, layout, cfg, params = setup
    kw = dict(subject="personx bakes the bread", relation="xReact")
    one = decode_prompt(params, cfg, vocab, layout, schemas, decoder="greedy", **kw)
    assert len(one) == 1
    ten = decode_prompt(params, cfg, vocab, layout, schemas, decoder="beam",
                        beam_width=10, **kw)
    assert len(ten) == 10
    five = decode_prompt(params, cfg, vocab, layout, schemas, decoder="topk",
                         k=5, n_samples=5, seed=1, **kw)
    assert len(five) == 5
    with pytest.raises(DecodingError):
        decode_prompt(params, cfg, vocab, layout, schemas, decoder="nucleus", **kw)


def test_candidate_text_roundtrip(setup):
    schemas, vocab, layout, cfg, params = setup
    prefix = build_prefix(vocab, "personx bakes the bread", "xReact", layout, schemas)
    cand = greedy(params, cfg, vocab, prefix, layout.max_o)
    text = cand.text(vocab)
    assert vocab.encode(text) == list(cand.tokens)
