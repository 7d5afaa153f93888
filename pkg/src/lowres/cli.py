"""Command-line entry point for the corpus-engineering pipeline.

Every run prints one machine-readable JSON summary line. Exit codes:
0 success, 1 runtime error, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import os
import random
import sys
from pathlib import Path

from . import bench, corpus, datasets, tokenizer, translate

BACKEND_URL_ENV = "LOWRES_BACKEND_URL"


class UsageError(ValueError):
    """Configuration or argument problem; maps to exit code 2."""


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise UsageError(f"config file not found: {path}")
    try:
        with open(p, "r", encoding="utf-8") as f:
            cfg = json.load(f)
    except json.JSONDecodeError as e:
        raise UsageError(f"config is not valid JSON: {e}") from e
    if not isinstance(cfg, dict):
        raise UsageError("config must be a JSON object")
    return cfg


def _opt(args, cfg: dict, name: str, default=None):
    """Flag value if given, else config value, else default."""
    val = getattr(args, name.replace("-", "_"), None)
    if val is not None:
        return val
    return cfg.get(name, default)


def _resolve_backend(args, cfg: dict):
    spec = os.environ.get(BACKEND_URL_ENV) or _opt(args, cfg, "backend")
    if spec is None:
        raise UsageError("missing field backend (flag --backend, config, or "
                         f"{BACKEND_URL_ENV})")
    try:
        return spec, translate.make_backend(spec)
    except ValueError as e:
        raise UsageError(str(e)) from e


def _load_counter(args, cfg: dict) -> tokenizer.TokenizerModel:
    spec = _opt(args, cfg, "counter", "builtin:byte")
    if spec != "builtin:byte" and not Path(spec).exists():
        raise UsageError(f"counter model not found: {spec}")
    return tokenizer.load_model(spec)


def _require_path(value: str | None, name: str) -> Path:
    if value is None:
        raise UsageError(f"missing field {name}")
    p = Path(value)
    if not p.exists():
        raise UsageError(f"{name}: no such file: {value}")
    return p


def _pipeline_kwargs(args, cfg: dict) -> dict:
    bounds = _opt(args, cfg, "bucket_bounds", list(translate.DEFAULT_BUCKET_BOUNDS))
    if isinstance(bounds, str):
        bounds = [int(b) for b in bounds.split(",")]
    return {
        "src": _opt(args, cfg, "src", "eng"),
        "tgt": _opt(args, cfg, "tgt", "amh"),
        "max_chunk_tokens": int(_opt(args, cfg, "max_chunk_tokens",
                                     translate.DEFAULT_MAX_CHUNK_TOKENS)),
        "bucket_bounds": bounds,
        "max_batch_items": int(_opt(args, cfg, "max_batch_items",
                                    translate.DEFAULT_MAX_BATCH_ITEMS)),
        "parallelism": int(_opt(args, cfg, "parallelism", 1)),
        "max_retries": int(_opt(args, cfg, "max_retries", 3)),
        "backoff_base": float(_opt(args, cfg, "backoff_base", 1.0)),
    }


# ---------------------------------------------------------------------------
# tokenizer subcommands


def cmd_tokenizer_train(args, cfg):
    path = _require_path(args.corpus, "corpus")
    docs = corpus.ingest_documents(path, format="jsonl")
    if args.dry_run:
        return {"documents": len(docs)}
    ext = tokenizer.train_extension(
        docs, target_size=args.target_size, min_pair_freq=args.min_pair_freq
    )
    tokenizer.save_extension(ext, args.out)
    return {"pieces": len(ext), "out": args.out}


def cmd_tokenizer_merge(args, cfg):
    base = tokenizer.load_model(args.base).vocab
    ext = tokenizer.load_extension(_require_path(args.ext, "ext"))
    model = tokenizer.merge(base, ext)
    if args.dry_run:
        return {"size": len(model)}
    tokenizer.save_model(model, args.out)
    return {"size": len(model), "base_size": model.base_size, "out": args.out}


def _texts_for_encode(args):
    if args.text is not None:
        return [args.text]
    if args.input is not None:
        return Path(args.input).read_text(encoding="utf-8").splitlines()
    raise UsageError("missing field text (give --text or --input)")


def cmd_tokenizer_encode(args, cfg):
    model = tokenizer.load_model(args.model)
    texts = _texts_for_encode(args)
    encoded = [model.encode(t) for t in texts]
    if args.dry_run:
        return {"texts": len(texts)}
    lines = "\n".join(json.dumps(ids) for ids in encoded) + "\n"
    if args.out:
        Path(args.out).write_text(lines, encoding="utf-8")
    else:
        sys.stdout.write(lines)
    return {"texts": len(texts), "tokens": sum(len(e) for e in encoded)}


def cmd_tokenizer_decode(args, cfg):
    model = tokenizer.load_model(args.model)
    if args.ids is not None:
        streams = [json.loads(args.ids)]
    elif args.input is not None:
        streams = [json.loads(line)
                   for line in Path(args.input).read_text(encoding="utf-8").splitlines()
                   if line.strip()]
    else:
        raise UsageError("missing field ids (give --ids or --input)")
    decoded = [model.decode(ids) for ids in streams]
    if args.dry_run:
        return {"streams": len(streams)}
    out_text = "\n".join(decoded) + "\n"
    if args.out:
        Path(args.out).write_text(out_text, encoding="utf-8")
    else:
        sys.stdout.write(out_text)
    return {"streams": len(streams)}


def cmd_tokenizer_stats(args, cfg):
    model_a = tokenizer.load_model(args.model_a)
    model_b = tokenizer.load_model(args.model_b)
    docs = corpus.ingest_documents(_require_path(args.corpus, "corpus"))
    report = tokenizer.compression_report(model_a, model_b, docs)
    if not args.dry_run and args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            json.dump(report, f, indent=2)
            f.write("\n")
    return report


# ---------------------------------------------------------------------------
# corpus subcommands


def cmd_corpus_ingest(args, cfg):
    docs = corpus.ingest_documents(
        _require_path(args.path, "path"), format=args.format, nfc=args.nfc
    )
    if args.dry_run:
        return {"documents": len(docs)}
    corpus.write_documents(docs, args.out)
    return {"documents": len(docs), "out": args.out}


def cmd_corpus_stats(args, cfg):
    docs = corpus.ingest_documents(_require_path(args.path, "path"))
    total_chars = 0
    ethiopic = 0
    for d in docs:
        s = corpus.script_stats(d.text)
        total_chars += s.total_chars
        ethiopic += s.ethiopic_chars
    summary = {
        "documents": len(docs),
        "total_chars": total_chars,
        "ethiopic_chars": ethiopic,
        "ethiopic_ratio": ethiopic / total_chars if total_chars else 0.0,
    }
    if args.model:
        model = tokenizer.load_model(args.model)
        summary["tokens"] = sum(corpus.count_tokens(d, model) for d in docs)
    return summary


def cmd_corpus_dedup(args, cfg):
    docs = corpus.ingest_documents(_require_path(args.path, "path"))
    kept = corpus.dedup_exact(docs)
    if args.dry_run:
        return {"in": len(docs), "kept": len(kept)}
    corpus.write_documents(kept, args.out)
    return {"in": len(docs), "kept": len(kept), "dropped": len(docs) - len(kept),
            "out": args.out}


# ---------------------------------------------------------------------------
# translate subcommand


def cmd_translate_corpus(args, cfg):
    docs = corpus.ingest_documents(_require_path(args.path, "path"))
    spec, backend = _resolve_backend(args, cfg)
    counter = _load_counter(args, cfg)
    kwargs = _pipeline_kwargs(args, cfg)
    if args.dry_run:
        return {"documents": len(docs), "backend": spec, **{
            k: kwargs[k] for k in ("max_chunk_tokens", "max_batch_items")}}
    journal = None
    journal_path = _opt(args, cfg, "journal")
    if journal_path:
        if args.fresh and Path(journal_path).exists():
            Path(journal_path).unlink()
        journal = translate.Journal(journal_path)
    seed = _opt(args, cfg, "seed")
    rng = random.Random(seed) if seed is not None else None
    result = translate.translate_documents(
        docs, backend, counter,
        failure_policy=args.failure_policy, journal=journal, rng=rng, **kwargs,
    )
    joined = result.joined()
    out_docs = [
        corpus.Document(d.id, d.source, joined.get(d.id, "")) for d in docs
    ]
    corpus.write_documents(out_docs, args.out)
    gaps_path = args.gaps or (args.out + ".gaps.json")
    with open(gaps_path, "w", encoding="utf-8") as f:
        json.dump(
            [{"doc_id": g.doc_id, "sentence_indices": list(g.sentence_indices),
              "reason": g.reason} for g in result.gaps],
            f, indent=2,
        )
        f.write("\n")
    return {"documents": len(docs), "gaps": len(result.gaps),
            "backend": spec, "out": args.out, "gap_report": gaps_path}


# ---------------------------------------------------------------------------
# dataset subcommands


def cmd_dataset_mixture(args, cfg):
    mix = cfg.get("mixture", cfg)
    for fld in ("sources", "total_token_budget"):
        if fld not in mix:
            raise UsageError(f"missing field mixture.{fld}")
    seed = args.seed if args.seed is not None else mix.get("seed", 0)
    counter = _load_counter(args, mix)
    sources = [
        datasets.MixtureSource(s["tag"], s["path"], float(s["weight"]))
        for s in mix["sources"]
    ]
    for s in sources:
        _require_path(s.path, f"source {s.tag} path")
    try:
        mcfg = datasets.MixtureConfig(
            sources=sources,
            total_token_budget=int(mix["total_token_budget"]),
            seed=int(seed),
            counter=counter,
        )
    except datasets.MixtureError as e:
        raise UsageError(str(e)) from e
    if args.dry_run:
        return {"sources": [s.tag for s in sources],
                "total_token_budget": mcfg.total_token_budget, "seed": mcfg.seed}
    docs, manifest = datasets.build_pretrain_mixture(mcfg)
    corpus.write_documents(docs, args.out)
    manifest["config"] = {
        "sources": [{"tag": s.tag, "path": s.path, "weight": s.weight}
                    for s in sources],
        "total_token_budget": mcfg.total_token_budget,
        "counter": _opt(args, mix, "counter", "builtin:byte"),
    }
    with open(args.manifest, "w", encoding="utf-8") as f:
        f.write(datasets.manifest_to_json(manifest))
    return {"documents": len(docs), "total_tokens": manifest["total_tokens"],
            "out": args.out, "manifest": args.manifest}


def cmd_dataset_sft_translate(args, cfg):
    pairs = datasets.read_instruction_pairs(_require_path(args.pairs, "pairs"))
    spec, backend = _resolve_backend(args, cfg)
    counter = _load_counter(args, cfg)
    kwargs = _pipeline_kwargs(args, cfg)
    if args.dry_run:
        return {"pairs": len(pairs), "backend": spec}
    out_pairs = []
    rejected = 0
    for pair in pairs:
        try:
            out_pairs.append(
                datasets.translate_instruction_pair(pair, backend, counter, **kwargs)
            )
        except translate.TranslationFailed:
            rejected += 1
    datasets.emit_sft_jsonl(out_pairs, args.out)
    return {"pairs": len(out_pairs), "rejected": rejected, "out": args.out}


def _read_aligned_pairs(args):
    src = datasets.read_instruction_pairs(_require_path(args.pairs_src, "pairs-src"))
    tgt = datasets.read_instruction_pairs(_require_path(args.pairs_tgt, "pairs-tgt"))
    if len(src) != len(tgt):
        raise ValueError(
            f"pair files not aligned: {len(src)} vs {len(tgt)} records"
        )
    return src, tgt


def cmd_dataset_sft_mixed(args, cfg):
    src, tgt = _read_aligned_pairs(args)
    template = _opt(args, cfg, "directive_template",
                    datasets.DEFAULT_DIRECTIVE_TEMPLATE)
    try:
        datasets.validate_template(template, ["language"])
    except datasets.TemplateError as e:
        raise UsageError(str(e)) from e
    if args.dry_run:
        return {"pairs": len(src), "side": args.side}
    out = [
        datasets.mixed_language_variant(a, b, side=args.side,
                                        directive_template=template)
        for a, b in zip(src, tgt)
    ]
    datasets.emit_sft_jsonl(out, args.out)
    return {"pairs": len(out), "side": args.side, "out": args.out}


def cmd_dataset_sft_transtask(args, cfg):
    src, tgt = _read_aligned_pairs(args)
    template = _opt(args, cfg, "translation_template",
                    datasets.DEFAULT_TRANSLATION_TEMPLATE)
    try:
        datasets.validate_template(template, ["language", "text"])
    except datasets.TemplateError as e:
        raise UsageError(str(e)) from e
    if args.dry_run:
        return {"pairs": len(src), "side": args.side, "direction": args.direction}
    out = [
        datasets.translation_task_pair(a, b, side=args.side,
                                       direction=args.direction, template=template)
        for a, b in zip(src, tgt)
    ]
    datasets.emit_sft_jsonl(out, args.out)
    return {"pairs": len(out), "out": args.out}


def cmd_dataset_oa_prune(args, cfg):
    trees = datasets.read_conversation_trees(_require_path(args.trees, "trees"))
    threads = []
    for tree in trees:
        threads.extend(datasets.prune_oa_tree(tree, max_rank=args.max_rank))
    if args.dry_run:
        return {"trees": len(trees), "threads": len(threads)}
    if args.as_pairs:
        records = [datasets.thread_to_pair(t, lang=args.lang) for t in threads]
    else:
        records = threads
    datasets.emit_sft_jsonl(records, args.out)
    return {"trees": len(trees), "threads": len(threads), "out": args.out}


def cmd_dataset_visual_translate(args, cfg):
    records = datasets.read_visual_records(_require_path(args.records, "records"))
    spec, backend = _resolve_backend(args, cfg)
    counter = _load_counter(args, cfg)
    kwargs = _pipeline_kwargs(args, cfg)
    if args.dry_run:
        return {"records": len(records), "backend": spec}
    out = [
        datasets.translate_visual_record(rec, backend, counter, **kwargs)
        for rec in records
    ]
    datasets.emit_sft_jsonl(out, args.out)
    return {"records": len(out), "out": args.out}


# ---------------------------------------------------------------------------
# bench subcommands


def cmd_bench_build(args, cfg):
    items = bench.read_items(_require_path(args.items, "items"))
    spec, backend = _resolve_backend(args, cfg)
    counter = _load_counter(args, cfg)
    kwargs = _pipeline_kwargs(args, cfg)
    if args.dry_run:
        return {"items": len(items), "backend": spec}
    translated, dropped = bench.build_translated_benchmark(
        items, backend, counter, **kwargs
    )
    corpus.write_jsonl((bench.item_to_dict(i) for i in translated), args.out)
    return {"items": len(translated), "dropped": dropped, "out": args.out}


def cmd_bench_score(args, cfg):
    items = bench.read_items(_require_path(args.items, "items"))
    responses_by_id: dict[int, str] = {}
    for obj in corpus.iter_jsonl(_require_path(args.responses, "responses")):
        responses_by_id[int(obj["item_id"])] = obj["response"]
    if len(responses_by_id) != len(items):
        raise ValueError(
            f"length mismatch: {len(items)} items vs "
            f"{len(responses_by_id)} responses"
        )
    responses = []
    for i in range(len(items)):
        if i not in responses_by_id:
            raise ValueError(f"missing response for item_id {i}")
        responses.append(responses_by_id[i])
    stem = _opt(args, cfg, "stem_subjects")
    if isinstance(stem, str):
        stem = [s for s in stem.split(",") if s]
    if stem is None:
        stem = bench.DEFAULT_STEM_SUBJECTS
    _, fragments = bench.score(items, responses)
    report = bench.aggregate(fragments, stem_subjects=stem,
                             labels={"run": _opt(args, cfg, "label", "")})
    if args.dry_run:
        return {"items": len(items), "overall_micro": report.overall_micro}
    bench.save_report(report, args.out)
    return {
        "items": len(items),
        "overall_micro": report.overall_micro,
        "overall_macro": report.overall_macro,
        "non_stem_micro": report.non_stem_micro,
        "out": args.out,
    }


def cmd_bench_report(args, cfg):
    from . import plotting

    report = bench.load_report(_require_path(args.report, "report"))
    other = bench.load_report(_require_path(args.report_b, "report-b")) \
        if args.report_b else None
    if args.dry_run:
        return {"subjects": len(report.per_subject)}
    outputs = {}
    if args.csv:
        bench.export_subject_csv(report, args.csv, other=other)
        outputs["csv"] = args.csv
    if args.figure:
        plotting.render_subject_figure(
            report, args.figure, other=other,
            label_a=args.label_a, label_b=args.label_b,
        )
        outputs["figure"] = args.figure
    return {"subjects": len(report.per_subject), **outputs}


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lowres",
        description="Corpus engineering for low-resource language model adaptation",
    )
    parser.add_argument("--config", help="JSON config file; flags override it")
    parser.add_argument("--seed", type=int, help="seed for all randomness")
    parser.add_argument("--dry-run", action="store_true",
                        help="validate inputs, no writes or backend calls")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(group, name, func, **arguments):
        p = group.add_parser(name)
        for arg, kw in arguments.items():
            p.add_argument("--" + arg.replace("_", "-"), **kw)
        p.set_defaults(func=func)
        return p

    tok = sub.add_parser("tokenizer").add_subparsers(dest="subcommand", required=True)
    add(tok, "train", cmd_tokenizer_train,
        corpus={"required": True}, target_size={"type": int, "required": True},
        min_pair_freq={"type": int, "default": 2}, out={"required": True})
    add(tok, "merge", cmd_tokenizer_merge,
        base={"required": True}, ext={"required": True}, out={"required": True})
    add(tok, "encode", cmd_tokenizer_encode,
        model={"required": True}, text={}, input={}, out={})
    add(tok, "decode", cmd_tokenizer_decode,
        model={"required": True}, ids={}, input={}, out={})
    add(tok, "stats", cmd_tokenizer_stats,
        model_a={"required": True}, model_b={"required": True},
        corpus={"required": True}, out={})

    corp = sub.add_parser("corpus").add_subparsers(dest="subcommand", required=True)
    add(corp, "ingest", cmd_corpus_ingest,
        path={"required": True},
        format={"choices": ["jsonl", "txt-dir"], "default": "jsonl"},
        out={"required": True}, nfc={"action": "store_true"})
    add(corp, "stats", cmd_corpus_stats, path={"required": True}, model={})
    add(corp, "dedup", cmd_corpus_dedup,
        path={"required": True}, out={"required": True})

    trans = sub.add_parser("translate").add_subparsers(dest="subcommand", required=True)
    add(trans, "corpus", cmd_translate_corpus,
        path={"required": True}, out={"required": True}, gaps={},
        backend={}, counter={}, src={}, tgt={},
        max_chunk_tokens={"type": int}, bucket_bounds={},
        max_batch_items={"type": int}, parallelism={"type": int},
        max_retries={"type": int}, backoff_base={"type": float},
        failure_policy={"choices": ["skip", "placeholder"], "default": "skip"},
        journal={}, fresh={"action": "store_true"})

    ds = sub.add_parser("dataset").add_subparsers(dest="subcommand", required=True)
    add(ds, "mixture", cmd_dataset_mixture,
        out={"required": True}, manifest={"required": True}, counter={})
    add(ds, "sft-translate", cmd_dataset_sft_translate,
        pairs={"required": True}, out={"required": True}, backend={},
        counter={}, src={}, tgt={}, max_chunk_tokens={"type": int},
        parallelism={"type": int}, max_retries={"type": int},
        backoff_base={"type": float})
    add(ds, "sft-mixed", cmd_dataset_sft_mixed,
        pairs_src={"required": True}, pairs_tgt={"required": True},
        side={"choices": ["human", "ai"], "required": True},
        directive_template={}, out={"required": True})
    add(ds, "sft-transtask", cmd_dataset_sft_transtask,
        pairs_src={"required": True}, pairs_tgt={"required": True},
        side={"choices": ["instruction", "output"], "default": "output"},
        direction={"choices": ["src2tgt", "tgt2src"], "default": "src2tgt"},
        translation_template={}, out={"required": True})
    add(ds, "oa-prune", cmd_dataset_oa_prune,
        trees={"required": True}, max_rank={"type": int, "default": 0},
        as_pairs={"action": "store_true"}, lang={"default": "amh"},
        out={"required": True})
    add(ds, "visual-translate", cmd_dataset_visual_translate,
        records={"required": True}, out={"required": True}, backend={},
        counter={}, src={}, tgt={}, max_chunk_tokens={"type": int},
        parallelism={"type": int}, max_retries={"type": int},
        backoff_base={"type": float})

    bn = sub.add_parser("bench").add_subparsers(dest="subcommand", required=True)
    add(bn, "build", cmd_bench_build,
        items={"required": True}, out={"required": True}, backend={},
        counter={}, src={}, tgt={}, max_chunk_tokens={"type": int},
        parallelism={"type": int}, max_retries={"type": int},
        backoff_base={"type": float})
    add(bn, "score", cmd_bench_score,
        items={"required": True}, responses={"required": True},
        out={"required": True}, stem_subjects={}, label={})
    add(bn, "report", cmd_bench_report,
        report={"required": True}, report_b={}, csv={}, figure={},
        label_a={"default": "run A"}, label_b={"default": "run B"})
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _load_config(args.config)
        summary = args.func(args, cfg)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001 - runtime failures map to exit 1
        print(f"error: {e}", file=sys.stderr)
        return 1
    line = {"status": "dry-run" if args.dry_run else "ok",
            "command": args.command}
    if getattr(args, "subcommand", None):
        line["subcommand"] = args.subcommand
    line.update(summary or {})
    print(json.dumps(line, ensure_ascii=False))
    return 0


def main(argv=None) -> int:
    try:
        return run(argv)
    except SystemExit as e:  # argparse usage errors
        return e.code if isinstance(e.code, int) else 2


if __name__ == "__main__":
    sys.exit(main())
