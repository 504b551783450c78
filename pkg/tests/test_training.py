import io
import math

import numpy as np
import pytest

from conftest import tiny_model
from kbgen.autodiff import Tape, Tensor, backward
from kbgen.corpus import KnowledgeTuple
from kbgen.model import ModelConfig, forward, init_parameters, save_checkpoint
from kbgen.synthetic import generate_mini_kb
from kbgen.training import (
    PRESETS,
    OptimizerState,
    TrainConfig,
    TrainingDiverged,
    TrainingError,
    adam_step,
    clip_gradients,
    evaluate_loss,
    gradient_norm,
    lr_at,
    pretrain_lm,
    train,
    tuple_loss,
    write_loss_csv,
)
from kbgen.vocab import build_vocab, default_layout, encode_tuples


def small_cfg(**kw):
    base = dict(max_lr=5e-3, warmup_steps=5, total_steps=60, batch_size=8,
                eval_every=20, patience=50, seed=0)
    base.update(kw)
    return TrainConfig(**base)


class TestTupleLoss:
    def test_perfect_logits_zero_loss(self):
        ids = np.array([[1, 2, 3, 4]], dtype=np.int32)
        mask = np.array([[False, True, True, False]])
        logits = np.full((1, 4, 6), -1e9, dtype=np.float32)
        logits[0, 1, 3] = 0.0  # predicts ids[2]
        logits[0, 2, 4] = 0.0  # predicts ids[3]
        loss = tuple_loss(Tensor(logits), ids, mask)
        assert float(loss.data) < 1e-6
        assert math.exp(float(loss.data)) == pytest.approx(1.0)

    def test_uniform_logits(self):
        v = 100
        ids = np.zeros((2, 5), dtype=np.int32)
        mask = np.ones((2, 5), dtype=bool)
        loss = tuple_loss(Tensor(np.zeros((2, 5, v), dtype=np.float32)), ids, mask)
        assert float(loss.data) == pytest.approx(math.log(v), rel=1e-5)

    def test_final_position_never_contributes(self):
        ids = np.array([[1, 2]], dtype=np.int32)
        mask = np.array([[True, True]])  # the trailing True must be dropped
        logits = np.zeros((1, 2, 4), dtype=np.float32)
        loss = tuple_loss(Tensor(logits), ids, mask)
        assert float(loss.data) == pytest.approx(math.log(4), rel=1e-5)


class TestSchedule:
    def test_peak_at_warmup(self):
        cfg = TrainConfig(max_lr=6.25e-5, warmup_steps=100, total_steps=50_000)
        assert lr_at(100, cfg) == pytest.approx(6.25e-5)
        assert lr_at(50, cfg) == pytest.approx(6.25e-5 / 2)
        assert lr_at(0, cfg) == 0.0
        assert lr_at(50_000, cfg) == 0.0

    def test_piecewise_linear_continuous(self):
        cfg = TrainConfig(max_lr=1.0, warmup_steps=10, total_steps=100)
        xs = np.arange(0, 101)
        ys = np.array([lr_at(int(s), cfg) for s in xs])
        assert ys.argmax() == 10
        d1 = np.diff(ys[:11])
        d2 = np.diff(ys[10:])
        np.testing.assert_allclose(d1, d1[0], rtol=1e-9)
        np.testing.assert_allclose(d2, d2[0], rtol=1e-9)

    def test_negative_step_rejected(self):
        with pytest.raises(TrainingError):
            lr_at(-1, TrainConfig())


class TestClip:
    def _params_with_grads(self, values):
        params = {}
        for i, v in enumerate(values):
            t = Tensor(np.zeros_like(v))
            t.grad = np.asarray(v, dtype=np.float32)
            params[f"p{i}"] = t
        return params

    def test_below_threshold_unchanged(self):
        params = self._params_with_grads([np.array([0.3, 0.4])])  # norm 0.5
        before = params["p0"].grad.copy()
        norm = clip_gradients(params, 1.0)
        assert norm == pytest.approx(0.5)
        np.testing.assert_array_equal(params["p0"].grad, before)

    def test_scaled_to_norm(self):
        params = self._params_with_grads([np.full(16, 1.0)])  # norm 4
        norm = clip_gradients(params, 1.0)
        assert norm == pytest.approx(4.0)
        assert gradient_norm(params) == pytest.approx(1.0, abs=1e-6)

    def test_direction_preserved(self):
        g = np.array([3.0, 0.0, 4.0]) * 10
        params = self._params_with_grads([g])
        clip_gradients(params, 1.0)
        got = params["p0"].grad
        cos = float(np.dot(got, g) / (np.linalg.norm(got) * np.linalg.norm(g)))
        assert cos == pytest.approx(1.0, abs=1e-6)


class TestAdam:
    def test_zero_gradient_no_motion(self):
        p = {"w": Tensor(np.array([1.0, 2.0], dtype=np.float32))}
        p["w"].grad = np.zeros(2, dtype=np.float32)
        state = OptimizerState(p)
        adam_step(p, state, lr=0.1, cfg=TrainConfig(weight_decay=0.0))
        np.testing.assert_array_equal(p["w"].data, [1.0, 2.0])

    def test_hand_computed_first_step(self):
        # g=1, lr=0.1: bias-corrected mhat=1, vhat=1 -> delta ~ -0.1
        p = {"w": Tensor(np.array([0.0], dtype=np.float32))}
        p["w"].grad = np.ones(1, dtype=np.float32)
        state = OptimizerState(p)
        adam_step(p, state, lr=0.1, cfg=TrainConfig(weight_decay=0.0))
        assert float(p["w"].data[0]) == pytest.approx(-0.1, rel=1e-5)

    def test_weight_decay_only_on_matrices(self):
        cfg = TrainConfig(weight_decay=0.5)
        p = {
            "blocks.0.attn.w_q": Tensor(np.full((2, 2), 2.0, dtype=np.float32)),
            "blocks.0.ln1.gain": Tensor(np.full(2, 2.0, dtype=np.float32)),
        }
        for t in p.values():
            t.grad = np.zeros_like(t.data)
        adam_step(p, OptimizerState(p), lr=0.1, cfg=cfg)
        assert np.all(p["blocks.0.attn.w_q"].data < 2.0)
        np.testing.assert_array_equal(p["blocks.0.ln1.gain"].data, 2.0)


@pytest.fixture(scope="module")
def encoded_toy():
    kb = generate_mini_kb(0)
    from kbgen.corpus import atomic_schemas

    schemas = atomic_schemas()
    tuples = kb.split.train[:48]
    dev = kb.split.dev[:16]
    vocab = build_vocab(tuples + dev, schemas)
    layout = default_layout("symbol", max_s=8, max_o=8)
    tr = encode_tuples(vocab, tuples, layout, schemas)
    dv = encode_tuples(vocab, dev, layout, schemas)
    return vocab, layout, tr, dv


class TestTrainLoop:
    def test_loss_decreases_and_best_tracked(self, encoded_toy):
        vocab, layout, (tr_ids, tr_mask), (dv_ids, dv_mask) = encoded_toy
        cfg = ModelConfig(vocab_size=len(vocab), n_layers=1, d_model=32, n_heads=4,
                          d_ff=64, max_seq_len=layout.total, dropout=0.0)
        params = init_parameters(cfg, vocab.n_specials, 0)
        res = train(params, cfg, tr_ids, tr_mask, dv_ids, dv_mask, small_cfg())
        assert res.curve[0].dev_loss > res.best_dev_loss
        assert res.steps_run == 60
        first_train = next(p.train_loss for p in res.curve if p.train_loss is not None)
        assert res.curve[-1].train_loss < first_train

    def test_determinism_byte_identical(self, encoded_toy, tmp_path):
        vocab, layout, (tr_ids, tr_mask), (dv_ids, dv_mask) = encoded_toy
        cfg = ModelConfig(vocab_size=len(vocab), n_layers=1, d_model=16, n_heads=2,
                          d_ff=32, max_seq_len=layout.total, dropout=0.1)
        outs = []
        for run in range(2):
            params = init_parameters(cfg, vocab.n_specials, 0)
            res = train(params, cfg, tr_ids, tr_mask, dv_ids, dv_mask,
                        small_cfg(total_steps=30, eval_every=10))
            path = tmp_path / f"run{run}.kbc"
            save_checkpoint(res.params, cfg, "h", path)
            outs.append(path.read_bytes())
        assert outs[0] == outs[1]

    def test_patience_zero_stops_at_first_flat_eval(self, encoded_toy):
        vocab, layout, (tr_ids, tr_mask), (dv_ids, dv_mask) = encoded_toy
        cfg = ModelConfig(vocab_size=len(vocab), n_layers=1, d_model=16, n_heads=2,
                          d_ff=32, max_seq_len=layout.total, dropout=0.0)
        params = init_parameters(cfg, vocab.n_specials, 0)
        # max_lr=0 -> no parameter motion -> dev never improves
        res = train(params, cfg, tr_ids, tr_mask, dv_ids, dv_mask,
                    small_cfg(max_lr=0.0, patience=0, eval_every=10, total_steps=50))
        assert res.stopped_early
        assert res.steps_run == 10

    @pytest.mark.filterwarnings("ignore:overflow")
    def test_divergence_raises_with_step(self, encoded_toy):
        vocab, layout, (tr_ids, tr_mask), (dv_ids, dv_mask) = encoded_toy
        cfg = ModelConfig(vocab_size=len(vocab), n_layers=1, d_model=16, n_heads=2,
                          d_ff=32, max_seq_len=layout.total, dropout=0.0)
        params = init_parameters(cfg, vocab.n_specials, 0)
        with pytest.raises(TrainingDiverged) as exc:
            train(params, cfg, tr_ids, tr_mask, dv_ids, dv_mask,
                  small_cfg(max_lr=1e9, warmup_steps=1, clip_norm=1e12, total_steps=40,
                            eval_every=40))
        assert exc.value.step > 0

    def test_loss_csv_roundtrip(self, encoded_toy, tmp_path):
        vocab, layout, (tr_ids, tr_mask), (dv_ids, dv_mask) = encoded_toy
        cfg = ModelConfig(vocab_size=len(vocab), n_layers=1, d_model=16, n_heads=2,
                          d_ff=32, max_seq_len=layout.total, dropout=0.0)
        params = init_parameters(cfg, vocab.n_specials, 0)
        res = train(params, cfg, tr_ids, tr_mask, dv_ids, dv_mask,
                    small_cfg(total_steps=20, eval_every=10))
        path = tmp_path / "loss.csv"
        write_loss_csv(path, res.curve)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "step,lr,train_loss,dev_loss"
        assert len(lines) == len(res.curve) + 1

    def test_evaluate_loss_matches_tuple_loss_on_single_batch(self, encoded_toy):
        vocab, layout, (tr_ids, tr_mask), _ = encoded_toy
        cfg = ModelConfig(vocab_size=len(vocab), n_layers=1, d_model=16, n_heads=2,
                          d_ff=32, max_seq_len=layout.total, dropout=0.0)
        params = init_parameters(cfg, vocab.n_specials, 0)
        whole = evaluate_loss(params, cfg, tr_ids, tr_mask, batch_size=len(tr_ids))
        logits = forward(params, cfg, tr_ids)
        direct = float(tuple_loss(logits, tr_ids, tr_mask).data)
        assert whole == pytest.approx(direct, abs=1e-6)


class TestPresets:
    def test_paper_constants(self):
        at = PRESETS["atomic-paper"]
        assert at["train"]["max_lr"] == 6.25e-5
        assert at["train"]["warmup_steps"] == 100
        assert at["train"]["total_steps"] == 50_000
        assert at["train"]["batch_size"] == 64
        assert at["train"]["clip_norm"] == 1.0
        assert at["model"]["dropout"] == 0.1
        assert (at["model"]["n_layers"], at["model"]["d_model"], at["model"]["n_heads"]) \
            == (12, 768, 12)
        cn = PRESETS["conceptnet-paper"]
        assert cn["train"]["max_lr"] == 1e-5
        assert cn["train"]["warmup_steps"] == 200
        assert cn["train"]["total_steps"] == 100_000
        assert cn["rendering"] == "language"


class TestPretrainLm:
    def test_pipeline_and_warm_start(self, tmp_path):
        kb = generate_mini_kb(0)
        from kbgen.corpus import atomic_schemas

        schemas = atomic_schemas()
        tuples = kb.split.train[:48]
        dev = kb.split.dev[:16]
        sentences = kb.text_corpus[:60]
        vocab = build_vocab(tuples + dev, schemas, extra_texts=sentences)
        layout = default_layout("symbol", max_s=8, max_o=8)
        cfg = ModelConfig(vocab_size=len(vocab), n_layers=1, d_model=16, n_heads=2,
                          d_ff=32, max_seq_len=max(layout.total, 14), dropout=0.0)
        params = init_parameters(cfg, vocab.n_specials, 0)
        pre = pretrain_lm(params, cfg, vocab, sentences, small_cfg(total_steps=30, eval_every=15))
        assert pre.best_dev_loss < pre.curve[0].dev_loss

        tr = encode_tuples(vocab, tuples, layout, schemas)
        dv = encode_tuples(vocab, dev, layout, schemas)
        ft_cfg = small_cfg(total_steps=10, eval_every=5)
        dev0 = evaluate_loss(pre.params, cfg, dv[0], dv[1], ft_cfg.batch_size)
        res = train(pre.params, cfg, tr[0], tr[1], dv[0], dv[1], ft_cfg)
        # fine-tuning starts exactly from the pretrained weights
        assert res.curve[0].dev_loss == pytest.approx(dev0, abs=1e-12)

    def test_empty_corpus_rejected(self):
        cfg, params = tiny_model(16, 4)
        from kbgen.vocab import Vocabulary

        with pytest.raises(TrainingError):
            pretrain_lm(params, cfg, None, [], small_cfg())
