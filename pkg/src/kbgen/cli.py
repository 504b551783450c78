"""Command-line pipeline: prepare | train | generate | evaluate | build-kb.

Every subcommand takes --config (flat `key = value` file), --out,
--seed, and --no-timestamp. Explicit flags beat config-file values,
which beat preset values, which beat built-in defaults; the fully
resolved configuration is echoed to <out>/config.json so a run is
reproducible from its output directory alone.

Exit codes: 0 success, 1 internal error, 2 usage or data error,
3 training divergence.
"""

from __future__ import annotations

import argparse
import json
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import KbgenError, __version__
from .corpus import (
    DatasetSplit,
    KnowledgeTuple,
    SchemaSet,
    builtin_schemas,
    filter_relations,
    load_tuples,
    make_split,
    save_tuples,
    subsample_training,
)
from .decoding import decode_prompt
from .evaluation import (
    EvalReport,
    edit_distance_profile,
    bleu2,
    load_stopwords,
    novelty_metrics,
    perplexity,
    stopwords_sha256,
    unigram_baseline_ppl,
)
from .model import (
    ModelConfig,
    init_parameters,
    load_checkpoint,
    save_checkpoint,
)
from .synthetic import generate_mini_kb
from .training import (
    PRESETS,
    TrainConfig,
    TrainingDiverged,
    pretrain_lm,
    train,
    write_loss_csv,
)
from .vocab import (
    TupleLayout,
    Vocabulary,
    build_vocab,
    default_layout,
    encode_tuples,
)

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2
EXIT_DIVERGED = 3


class UsageError(KbgenError):
    pass


def read_config_file(path) -> dict[str, str]:
    """Flat `key = value` lines; `#` starts a comment; blank lines ok."""
    values = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{line_no}: expected `key = value`")
            key, _, value = line.partition("=")
            values[key.strip().replace("-", "_")] = value.strip()
    return values


def _coerce(value: str, like):
    if isinstance(like, bool):
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise UsageError(f"expected a boolean, got {value!r}")
    if isinstance(like, int):
        return int(value)
    if isinstance(like, float):
        return float(value)
    return value


def resolve(defaults: dict, preset: dict, file_cfg: dict[str, str], flags: dict) -> dict:
    """Merge config layers; unknown config-file keys are ignored here and
    validated by the caller where relevant."""
    out = dict(defaults)
    out.update({k: v for k, v in preset.items() if k in out})
    for k, v in file_cfg.items():
        if k in out:
            out[k] = _coerce(v, defaults[k])
    out.update({k: v for k, v in flags.items() if k in out and v is not None})
    return out


def write_effective_config(out_dir: Path, command: str, cfg: dict, no_timestamp: bool):
    payload = {"command": command, "version": __version__, **cfg}
    if not no_timestamp:
        payload["created_at"] = datetime.now(timezone.utc).isoformat()
    with open(out_dir / "config.json", "w", encoding="utf-8") as fh:
        fh.write(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_schemas(spec: str) -> SchemaSet:
    if spec in ("atomic", "conceptnet"):
        return builtin_schemas(spec)
    return SchemaSet.from_file(spec, name=Path(spec).stem)


def _schema_records(schemas: SchemaSet) -> list[dict]:
    return [
        {"id": s.id, "surface_form": list(s.surface_form), "meta_tokens": list(s.meta_tokens)}
        for s in schemas
    ]


# ---------------------------------------------------------------- prepare

def cmd_prepare(args) -> int:
    out = _out_dir(args)
    file_cfg = read_config_file(args.config) if args.config else {}
    if args.synthetic and args.tuples:
        raise UsageError("--synthetic and --tuples are mutually exclusive")
    if not args.synthetic and not args.tuples:
        raise UsageError("one of --synthetic or --tuples is required")

    schemas = _load_schemas(args.schema)
    rendering = args.rendering
    meta = bool(args.meta_tokens)
    seed = args.seed if args.seed is not None else 0

    text_corpus: list[str] = []
    if args.synthetic:
        kb = generate_mini_kb(seed=seed)
        split = kb.split
        text_corpus = kb.text_corpus
        for name, subjects in (
            ("subjects_train.txt", kb.train_subjects),
            ("subjects_dev.txt", kb.dev_subjects),
            ("subjects_test.txt", kb.test_subjects),
        ):
            (out / name).write_text("\n".join(subjects) + "\n", encoding="utf-8")
        (out / "pretrain_text.txt").write_text("\n".join(text_corpus) + "\n", encoding="utf-8")
    else:
        tuples = load_tuples(args.tuples, args.format, schemas)
        split = make_split(tuples)

    if args.relations:
        subset = {r.strip() for r in args.relations.split(",") if r.strip()}
        split = filter_relations(split, subset, schemas)

    layout = default_layout(rendering, meta, max_s=args.max_s, max_o=args.max_o)
    vocab = build_vocab(
        split.train,
        schemas,
        min_count=args.min_count,
        extra_texts=text_corpus,
        include_surface_forms=(rendering == "language"),
    )

    for name, part in (("train", split.train), ("dev", split.dev), ("test", split.test)):
        save_tuples(part, out / f"{name}.jsonl")
    vocab.save(out / "vocab.json")
    with open(out / "relations.json", "w", encoding="utf-8") as fh:
        json.dump(_schema_records(schemas), fh, indent=2, sort_keys=True)

    manifest = {
        "schema_name": schemas.name,
        "rendering": rendering,
        "meta_tokens": meta,
        "layout": {"max_s": layout.max_s, "max_r": layout.max_r, "max_o": layout.max_o},
        "sizes": split.sizes(),
        "relation_subset": sorted(split.relation_subset) if split.relation_subset else None,
        "min_count": args.min_count,
        "seed": seed,
        "synthetic": bool(args.synthetic),
        "vocab_sha256": vocab.sha256(),
    }
    with open(out / "dataset.json", "w", encoding="utf-8") as fh:
        fh.write(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    write_effective_config(
        out, "prepare",
        {**manifest, "source": args.tuples or "synthetic", "config_file": args.config,
         "file_config": file_cfg},
        args.no_timestamp,
    )
    print(f"prepared {sum(split.sizes().values())} tuples "
          f"(train={len(split.train)}, dev={len(split.dev)}, test={len(split.test)}), "
          f"vocab={len(vocab)}")
    return EXIT_OK


class PreparedData:
    def __init__(self, data_dir: Path):
        data_dir = Path(data_dir)
        if not (data_dir / "dataset.json").exists():
            raise UsageError(f"{data_dir} is not a prepared data directory (no dataset.json)")
        with open(data_dir / "dataset.json", encoding="utf-8") as fh:
            self.manifest = json.load(fh)
        self.dir = data_dir
        self.vocab = Vocabulary.load(data_dir / "vocab.json")
        self.schemas = SchemaSet.from_file(
            data_dir / "relations.json", name=self.manifest["schema_name"]
        )
        lay = self.manifest["layout"]
        self.layout = TupleLayout(lay["max_s"], lay["max_r"], lay["max_o"])
        self.rendering = self.manifest["rendering"]
        self.meta_tokens = self.manifest["meta_tokens"]

    def tuples(self, part: str) -> list[KnowledgeTuple]:
        return load_tuples(self.dir / f"{part}.jsonl", "jsonl", self.schemas, default_split=part)

    def split(self) -> DatasetSplit:
        return DatasetSplit(
            train=self.tuples("train"), dev=self.tuples("dev"), test=self.tuples("test")
        )

    def encode(self, tuples):
        return encode_tuples(
            self.vocab, tuples, self.layout, self.schemas, self.rendering, self.meta_tokens
        )


# ------------------------------------------------------------------ train

_TRAIN_DEFAULTS = dict(
    max_lr=1e-3, warmup_steps=100, total_steps=1500, batch_size=64, clip_norm=1.0,
    weight_decay=0.01, patience=10, eval_every=250, fraction=1.0,
    n_layers=2, d_model=64, n_heads=4, d_ff=256, dropout=0.1,
)


def _resolved_train_config(args) -> dict:
    file_cfg = read_config_file(args.config) if args.config else {}
    preset: dict = {}
    if args.preset:
        if args.preset not in PRESETS:
            raise UsageError(f"unknown preset {args.preset!r}; available: {sorted(PRESETS)}")
        p = PRESETS[args.preset]
        preset = {**p["train"], **p["model"]}
    flags = dict(
        max_lr=args.max_lr, warmup_steps=args.warmup_steps, total_steps=args.steps,
        batch_size=args.batch_size, clip_norm=args.clip_norm,
        weight_decay=args.weight_decay, patience=args.patience,
        eval_every=args.eval_every, fraction=args.fraction,
        n_layers=args.layers, d_model=args.d_model, n_heads=args.heads,
        d_ff=args.d_ff, dropout=args.dropout,
    )
    return resolve(_TRAIN_DEFAULTS, preset, file_cfg, flags)


def cmd_train(args) -> int:
    out = _out_dir(args)
    data = PreparedData(args.data)
    cfg = _resolved_train_config(args)
    seed = args.seed if args.seed is not None else 0

    tcfg = TrainConfig(
        max_lr=cfg["max_lr"], warmup_steps=cfg["warmup_steps"], total_steps=cfg["total_steps"],
        batch_size=cfg["batch_size"], clip_norm=cfg["clip_norm"],
        weight_decay=cfg["weight_decay"], patience=cfg["patience"],
        eval_every=cfg["eval_every"], seed=seed, fraction=cfg["fraction"],
        rendering=data.rendering, meta_tokens=data.meta_tokens,
    )
    lm_sentences = None
    if args.lm_text:
        lm_sentences = [
            line.strip() for line in Path(args.lm_text).read_text("utf-8").splitlines()
            if line.strip()
        ]

    mcfg = ModelConfig(
        vocab_size=len(data.vocab),
        n_layers=cfg["n_layers"], d_model=cfg["d_model"], n_heads=cfg["n_heads"],
        d_ff=cfg["d_ff"], dropout=cfg["dropout"], max_seq_len=data.layout.total,
    )
    if args.init:
        params, init_cfg, _ = load_checkpoint(args.init, expected_vocab_sha256=data.vocab.sha256())
        if init_cfg.max_seq_len < data.layout.total:
            raise UsageError(
                "init checkpoint was trained with a shorter sequence than this layout"
            )
        mcfg = init_cfg
    else:
        params = init_parameters(mcfg, data.vocab.n_specials, seed)

    write_effective_config(
        out, "train",
        {**cfg, "seed": seed, "data": str(args.data), "preset": args.preset,
         "init": args.init, "lm_text": args.lm_text, "model": mcfg.to_dict(),
         "rendering": data.rendering, "meta_tokens": data.meta_tokens},
        args.no_timestamp,
    )

    if lm_sentences is not None:
        result = pretrain_lm(params, mcfg, data.vocab, lm_sentences, tcfg,
                             seq_len=data.layout.total)
    else:
        split = data.split()
        if tcfg.fraction < 1.0:
            split = subsample_training(split, tcfg.fraction, seed)
        tr_ids, tr_mask = data.encode(split.train)
        dv_ids, dv_mask = data.encode(split.dev)
        result = train(params, mcfg, tr_ids, tr_mask, dv_ids, dv_mask, tcfg)

    save_checkpoint(result.params, mcfg, data.vocab.sha256(), out / "checkpoint.kbc")
    write_loss_csv(out / "loss.csv", result.curve)
    with open(out / "train_result.json", "w", encoding="utf-8") as fh:
        fh.write(json.dumps(
            {"best_dev_loss": result.best_dev_loss, "best_step": result.best_step,
             "steps_run": result.steps_run, "stopped_early": result.stopped_early},
            sort_keys=True, indent=2) + "\n")
    print(f"trained {result.steps_run} steps; best dev loss {result.best_dev_loss:.4f} "
          f"at step {result.best_step}")
    return EXIT_OK


# --------------------------------------------------------------- generate

def _decoder_param(args) -> tuple[str, int | None]:
    if args.decoder == "beam":
        return "beam", args.b
    if args.decoder == "topk":
        return "topk", args.k
    return "greedy", None


def cmd_generate(args) -> int:
    out = _out_dir(args)
    data = PreparedData(args.data)
    params, mcfg, _ = load_checkpoint(args.checkpoint, expected_vocab_sha256=data.vocab.sha256())
    seed = args.seed if args.seed is not None else 0

    prompts = []
    with open(args.prompts, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if line.strip():
                rec = json.loads(line)
                prompts.append((line_no, rec.get("subject", ""), rec.get("relation", "")))
    if not prompts:
        raise UsageError(f"{args.prompts}: no prompts")

    decoder, param = _decoder_param(args)
    n_failed = 0
    rows = []
    for line_no, subject, relation in prompts:
        if relation not in data.schemas:
            rows.append({"subject": subject, "relation": relation,
                         "error": f"unknown relation id {relation!r} (line {line_no})"})
            n_failed += 1
            continue
        cands = decode_prompt(
            params, mcfg, data.vocab, data.layout, data.schemas, subject, relation,
            decoder=decoder, mode=data.rendering, meta_tokens=data.meta_tokens,
            beam_width=args.b, k=args.k, n_samples=args.n, seed=seed,
        )
        for rank, c in enumerate(cands, start=1):
            rows.append({
                "subject": subject, "relation": relation, "object": c.text(data.vocab),
                "log_prob": c.log_prob, "decoder": decoder, "param": param,
                "rank": rank, "terminated": c.terminated,
            })
    with open(out / "generations.jsonl", "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    write_effective_config(
        out, "generate",
        {"checkpoint": args.checkpoint, "data": str(args.data), "decoder": decoder,
         "b": args.b, "k": args.k, "n": args.n, "seed": seed, "prompts": args.prompts,
         "n_prompts": len(prompts), "n_failed": n_failed},
        args.no_timestamp,
    )
    print(f"decoded {len(prompts) - n_failed}/{len(prompts)} prompts with {decoder}")
    if n_failed == len(prompts):
        raise UsageError("all prompts failed (unknown relations)")
    return EXIT_OK


# --------------------------------------------------------------- evaluate

def _tuples_from_jsonl(path, schemas, split="train") -> list[KnowledgeTuple]:
    return load_tuples(path, "jsonl", schemas, default_split=split)


def _generated_tuples(path, schemas) -> list[KnowledgeTuple]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            if "error" in rec:
                continue
            out.append(
                KnowledgeTuple(rec["subject"], rec["relation"], rec["object"]).normalized()
            )
    return out


def cmd_evaluate(args) -> int:
    out = _out_dir(args)
    data = PreparedData(args.data)
    generated = _generated_tuples(args.generations, data.schemas)
    if not generated:
        raise UsageError(f"{args.generations}: no usable generation rows")
    gold = _tuples_from_jsonl(args.gold, data.schemas, "test")
    train_tuples = _tuples_from_jsonl(args.train, data.schemas, "train")

    refs_by_prefix: dict[tuple[str, str], list[list[str]]] = {}
    for t in gold:
        refs_by_prefix.setdefault((t.subject, t.relation), []).append(t.object.split())
    cands, refs = [], []
    for g in generated:
        key = (g.subject, g.relation)
        if key not in refs_by_prefix:
            raise UsageError(
                f"no gold reference for generated prompt (subject={g.subject!r}, "
                f"relation={g.relation!r})"
            )
        cands.append(g.object.split())
        refs.append(refs_by_prefix[key])

    n_t_sro, n_t_o, n_u_o = novelty_metrics(generated, train_tuples)
    report = EvalReport(
        n_generated=len(generated),
        bleu2=bleu2(cands, refs),
        n_t_sro=n_t_sro, n_t_o=n_t_o, n_u_o=n_u_o,
        unigram_ppl=unigram_baseline_ppl(train_tuples, gold),
        stopwords_sha256=stopwords_sha256(),
    )
    if args.checkpoint:
        params, mcfg, _ = load_checkpoint(
            args.checkpoint, expected_vocab_sha256=data.vocab.sha256()
        )
        ids, mask = data.encode(gold)
        report.ppl = perplexity(params, mcfg, ids, mask)
    if args.edit_profile:
        train_triples = {t.key() for t in train_tuples}
        novel_gold = [t for t in gold if t.key() not in train_triples]
        profile = edit_distance_profile(novel_gold, train_tuples, load_stopwords())
        report.edit_profile = profile
        profile.write_csv(out / "edit_hist.csv")

    with open(out / "report.json", "w", encoding="utf-8") as fh:
        fh.write(report.to_json() + "\n")
    write_effective_config(
        out, "evaluate",
        {"generations": args.generations, "gold": args.gold, "train": args.train,
         "checkpoint": args.checkpoint, "edit_profile": bool(args.edit_profile),
         "data": str(args.data)},
        args.no_timestamp,
    )
    print(f"bleu2={report.bleu2:.4f} n_t_sro={n_t_sro:.2f} n_t_o={n_t_o:.2f} "
          f"n_u_o={n_u_o:.2f}" + (f" ppl={report.ppl:.3f}" if report.ppl else ""))
    return EXIT_OK


# --------------------------------------------------------------- build-kb

def cmd_build_kb(args) -> int:
    out = _out_dir(args)
    data = PreparedData(args.data)
    params, mcfg, _ = load_checkpoint(args.checkpoint, expected_vocab_sha256=data.vocab.sha256())
    seed = args.seed if args.seed is not None else 0

    subjects = [
        s.strip() for s in Path(args.subjects).read_text("utf-8").splitlines() if s.strip()
    ]
    if not subjects:
        raise UsageError(f"{args.subjects}: empty subject file")
    if args.relations == "all":
        relation_ids = data.schemas.ids
    else:
        relation_ids = [r.strip() for r in args.relations.split(",") if r.strip()]
        for rid in relation_ids:
            if rid not in data.schemas:
                raise UsageError(f"unknown relation id {rid!r}")

    train_path = args.train or (data.dir / "train.jsonl")
    train_tuples = _tuples_from_jsonl(train_path, data.schemas, "train")
    train_triples = {t.key() for t in train_tuples}
    train_objects = {t.key()[2] for t in train_tuples}

    decoder, param = _decoder_param(args)
    records = []
    generated = []
    for subject in subjects:
        for relation in relation_ids:
            cands = decode_prompt(
                params, mcfg, data.vocab, data.layout, data.schemas, subject, relation,
                decoder=decoder, mode=data.rendering, meta_tokens=data.meta_tokens,
                beam_width=args.b, k=args.k, n_samples=args.n, seed=seed,
            )
            for rank, c in enumerate(cands, start=1):
                obj = c.text(data.vocab)
                tpl = KnowledgeTuple(subject, relation, obj).normalized()
                generated.append(tpl)
                records.append({
                    "subject": tpl.subject, "relation": relation, "object": tpl.object,
                    "score": c.log_prob,
                    "novel_edge": tpl.key() not in train_triples,
                    "novel_node": tpl.key()[2] not in train_objects,
                    "decoder": decoder, "param": param, "rank": rank,
                })
    with open(out / "kb.jsonl", "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")

    n_t_sro, n_t_o, n_u_o = novelty_metrics(generated, train_tuples)
    summary = {
        "n_records": len(records),
        "n_subjects": len(subjects),
        "n_relations": len(relation_ids),
        "n_t_sro": n_t_sro, "n_t_o": n_t_o, "n_u_o": n_u_o,
        "novel_edges": sum(1 for r in records if r["novel_edge"]),
        "novel_nodes": sum(1 for r in records if r["novel_node"]),
    }
    with open(out / "summary.json", "w", encoding="utf-8") as fh:
        fh.write(json.dumps(summary, sort_keys=True, indent=2) + "\n")
    write_effective_config(
        out, "build-kb",
        {"checkpoint": args.checkpoint, "data": str(args.data), "subjects": args.subjects,
         "relations": args.relations, "decoder": decoder, "b": args.b, "k": args.k,
         "n": args.n, "seed": seed, "train": str(train_path)},
        args.no_timestamp,
    )
    print(f"built {len(records)} edges: N/T sro={n_t_sro:.2f}% "
          f"N/T o={n_t_o:.2f}% N/U o={n_u_o:.2f}%")
    return EXIT_OK


# ------------------------------------------------------------------ main

def _add_common(p):
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--no-timestamp", action="store_true",
                   help="omit the timestamp from config.json for byte-stable outputs")


def _add_decoder_flags(p):
    p.add_argument("--decoder", choices=["greedy", "beam", "topk"], default="greedy")
    p.add_argument("--b", type=int, default=10, help="beam width")
    p.add_argument("--k", type=int, default=5, help="top-k cutoff")
    p.add_argument("--n", type=int, default=5, help="samples per prompt (topk)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="kbgen", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="build vocab + split files (or the synthetic mini-KB)")
    p.add_argument("--synthetic", action="store_true", help="emit the bundled synthetic mini-KB")
    p.add_argument("--tuples", help="input tuple file")
    p.add_argument("--format", choices=["jsonl", "tsv"], default="jsonl")
    p.add_argument("--schema", default="atomic", help="atomic | conceptnet | path to schema JSON")
    p.add_argument("--relations", help="comma-separated relation subset")
    p.add_argument("--rendering", choices=["symbol", "language"], default="symbol")
    p.add_argument("--meta-tokens", action="store_true")
    p.add_argument("--min-count", type=int, default=1)
    p.add_argument("--max-s", type=int, default=17)
    p.add_argument("--max-o", type=int, default=15)
    _add_common(p)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train a model on a prepared dataset")
    p.add_argument("--data", required=True, help="prepared data directory")
    p.add_argument("--preset", choices=sorted(PRESETS), default=None)
    p.add_argument("--max-lr", type=float)
    p.add_argument("--warmup-steps", type=int)
    p.add_argument("--steps", type=int, help="total training steps")
    p.add_argument("--batch-size", type=int)
    p.add_argument("--clip-norm", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--patience", type=int)
    p.add_argument("--eval-every", type=int)
    p.add_argument("--fraction", type=float, help="train on this fraction of the train split")
    p.add_argument("--layers", type=int)
    p.add_argument("--d-model", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--d-ff", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--init", help="checkpoint to initialize from (fine-tuning)")
    p.add_argument("--lm-text", help="plain-text file: pretrain a language model instead")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="decode objects for (subject, relation) prompts")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="prepared data directory (vocab + schema)")
    p.add_argument("--prompts", required=True, help="JSONL of {subject, relation}")
    _add_decoder_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", help="score generations against gold and train sets")
    p.add_argument("--generations", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--train", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", help="also report gold perplexity under this model")
    p.add_argument("--edit-profile", action="store_true")
    _add_common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("build-kb", help="decode new edges for seed subjects, with novelty flags")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--subjects", required=True, help="text file, one subject per line")
    p.add_argument("--relations", default="all")
    p.add_argument("--train", help="train tuples for novelty flags (default: data dir)")
    _add_decoder_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_build_kb)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except TrainingDiverged as exc:
        print(f"kbgen: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (KbgenError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"kbgen: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - last-resort boundary
        print(f"kbgen: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
