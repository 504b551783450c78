import os

# Single-threaded BLAS: faster at these matrix sizes and keeps every run
# bit-reproducible. Must be set before numpy loads.
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")

import numpy as np
import pytest

from kbgen.corpus import KnowledgeTuple, atomic_schemas
from kbgen.model import ModelConfig, init_parameters
from kbgen.vocab import TupleLayout, build_vocab


@pytest.fixture(scope="session")
def schemas():
    return atomic_schemas()


@pytest.fixture(scope="session")
def toy_tuples():
    rows = [
        ("personx bakes the bread", "xReact", "proud"),
        ("personx bakes the bread", "xIntent", "to enjoy the bread"),
        ("personx bakes the bread", "xNeed", "to get the flour"),
        ("personx fixes the bike", "xReact", "confident"),
        ("personx fixes the bike", "xEffect", "gets greasy"),
        ("personx fixes the bike", "oWant", "to thank personx"),
        ("personx makes ___ at work", "xReact", "proud"),
        ("personx buys the cake", "xWant", "to share the cake"),
    ]
    return [KnowledgeTuple(s, r, o, "train") for s, r, o in rows]


@pytest.fixture(scope="session")
def toy_vocab(toy_tuples, schemas):
    return build_vocab(toy_tuples, schemas, min_count=1)


@pytest.fixture(scope="session")
def toy_layout():
    return TupleLayout(max_s=8, max_r=1, max_o=6)


def tiny_model(vocab_size, n_specials, seed=0, dtype=np.float32, **overrides):
    """1-layer, d=8 model used across gradient and behaviour tests."""
    kwargs = dict(
        vocab_size=vocab_size, n_layers=1, d_model=8, n_heads=2, d_ff=16,
        max_seq_len=16, dropout=0.0,
    )
    kwargs.update(overrides)
    config = ModelConfig(**kwargs)
    params = init_parameters(config, n_specials, seed, dtype=dtype)
    return config, params


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
