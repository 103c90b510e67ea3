"""Single executable for the full pipeline.

Subcommands: ingest, build-index, retrieve, train-us, score, build-trainset,
train-pg, generate, evaluate, make-toy. Exit codes: 0 success, 1 runtime
failure, 2 usage error. Outputs are written atomically (temp file + rename),
and every command logs the hash of its resolved configuration.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile

import numpy as np

from . import dataset, metrics, pointer, retrieval, toy, upvote
from .config import PipelineConfig, config_hash, load_config
from .corpus import (
    index_tokens,
    load_corpus,
    save_corpus,
    save_split_ids,
    source_text,
    split_dataset,
    tokenize,
)
from .hashing import fit_df

logger = logging.getLogger("commentforge")


def _atomic_write_text(path, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".cf-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_jsonl(path, records) -> None:
    lines = [json.dumps(r, ensure_ascii=False, sort_keys=True) for r in records]
    _atomic_write_text(path, "".join(line + "\n" for line in lines))


def _resolve_config(args, **overrides) -> PipelineConfig:
    cfg, _ = load_config(getattr(args, "config", None), overrides)
    logger.info("config hash %s", config_hash(cfg))
    return cfg


def _add_config_arg(sub) -> None:
    sub.add_argument("--config", help="TOML-like key = value config file")


def cmd_make_toy(args) -> int:
    cfg = _resolve_config(args, seed=args.seed)
    corpus = toy.make_toy_corpus(args.articles, seed=cfg.seed)
    save_corpus(corpus, args.out)
    logger.info("wrote %d synthetic articles to %s", len(corpus), args.out)
    return 0


def cmd_ingest(args) -> int:
    cfg = _resolve_config(args, seed=args.seed)
    corpus = load_corpus(args.corpus)
    n_comments = sum(len(a.comments) for a in corpus)
    logger.info("loaded %d articles with %d comments", len(corpus), n_comments)
    if args.out:
        save_corpus(corpus, args.out)
        logger.info("wrote normalized corpus to %s", args.out)
    if args.splits_prefix:
        fractions = tuple(float(x) for x in args.fractions.split(","))
        splits = split_dataset(corpus, fractions, cfg.seed)
        paths = save_split_ids(splits, args.splits_prefix)
        logger.info("split sizes %s -> %s", [len(s) for s in splits], paths)
    return 0


def cmd_build_index(args) -> int:
    cfg = _resolve_config(args, tokenizer=args.tokenizer)
    corpus = load_corpus(args.corpus)
    index = retrieval.build_index(corpus, cfg.tokenizer)
    retrieval.save_index(index, corpus, args.out)
    logger.info("indexed %d articles under prefix %s", len(index), args.out)
    return 0


def cmd_retrieve(args) -> int:
    cfg = _resolve_config(args, top_k=args.k, alpha=args.alpha)
    index, stub_corpus = retrieval.load_index(args.index)
    queries = load_corpus(args.input)
    us_fn = None
    if args.scorer in ("us", "es"):
        if not args.model:
            raise ValueError(f"--scorer {args.scorer} requires --model <us-checkpoint>")
        model, _ = upvote.load_us_model(args.model)
        us_fn = lambda art, com: upvote.us_score(model, art, com)
    records = []
    failures = 0
    for query in queries:
        try:
            sc = retrieval.retrieve_comment(
                query, index, stub_corpus, scorer=args.scorer, k=cfg.top_k,
                us_scorer=us_fn, alpha=cfg.alpha,
            )
        except retrieval.NoCandidateError as exc:
            logger.warning("query %s: %s", query.id, exc)
            failures += 1
            continue
        records.append({
            "article_id": query.id,
            "comment_id": sc.comment_id,
            "source_article_id": sc.source_article_id,
            "score": sc.score,
            "text": sc.text,
        })
    _write_jsonl(args.output, records)
    logger.info("retrieved comments for %d of %d queries", len(records), len(queries))
    return 0 if records or not queries else 1


def cmd_train_us(args) -> int:
    cfg = _resolve_config(
        args, seed=args.seed, epochs=args.epochs, upvote_threshold=args.threshold,
        us_emb_dim=args.emb_dim, us_hidden=args.hidden, vocab_cap=args.vocab_cap,
        val_fraction=args.val_fraction, lr=args.lr, batch_size=args.batch_size,
        tokenizer=args.tokenizer,
    )
    corpus = load_corpus(args.corpus)
    from .corpus import build_vocab

    examples, unlabeled = upvote.label_dataset(corpus, cfg.upvote_threshold, cfg.tokenizer)
    logger.info("labeled examples: %d; unlabeled articles: %d", len(examples), len(unlabeled))
    vocab = build_vocab(corpus, cfg.vocab_cap, cfg.tokenizer)
    pretrained = upvote.load_word2vec_text(args.embeddings) if args.embeddings else None
    model = upvote.UsModel(
        vocab, emb_dim=cfg.us_emb_dim, hidden=cfg.us_hidden,
        rng=np.random.default_rng(cfg.seed), pretrained=pretrained,
        freeze_emb=pretrained is not None,
    )
    history = upvote.train_us(
        model, examples, epochs=cfg.epochs, lr=cfg.lr, lr_decay=cfg.lr_decay,
        batch_size=cfg.batch_size, val_fraction=cfg.val_fraction, seed=cfg.seed,
        pos_weight=args.pos_weight, early_stop_auc=args.early_stop_auc,
    )
    for entry in history:
        logger.info("epoch %d: train_loss %.4f val_loss %.4f val_auc %.4f lr %.2e",
                    entry["epoch"], entry["train_loss"], entry["val_loss"],
                    entry["val_auc"], entry["lr"])
    upvote.save_us_model(model, args.out, {
        "tokenizer": cfg.tokenizer,
        "threshold": cfg.upvote_threshold,
        "pipeline_config": cfg.as_dict(),
    })
    logger.info("saved upvote scorer to %s", args.out)
    return 0


def cmd_score(args) -> int:
    cfg = _resolve_config(args, alpha=args.alpha)
    model, model_cfg = upvote.load_us_model(args.model)
    tokenizer = model_cfg.get("tokenizer", cfg.tokenizer)
    corpus = load_corpus(args.corpus)
    df = fit_df([index_tokens(a, tokenizer) for a in corpus])
    ctx = dataset.ScorerContext(
        df=df, us_scorer=lambda art, com: upvote.us_score(model, art, com),
        alpha=cfg.alpha, tokenizer=tokenizer,
    )
    records = []
    for article in corpus:
        comments = [c for c in article.comments if tokenize(c.text, tokenizer).tokens]
        if not comments:
            continue
        s_r = ctx.relevance(article, comments)
        s_u = ctx.upvote(article, comments)
        for c in comments:
            records.append({
                "article_id": article.id,
                "comment_id": c.id,
                "s_r": s_r[c.id],
                "s_u": s_u[c.id],
                "s_ensemble": upvote.ensemble_score(s_r[c.id], s_u[c.id], cfg.alpha),
            })
    _write_jsonl(args.out, records)
    logger.info("scored %d comments", len(records))
    return 0


def cmd_build_trainset(args) -> int:
    cfg = _resolve_config(args, seed=args.seed, alpha=args.alpha, tokenizer=args.tokenizer)
    corpus = load_corpus(args.corpus)
    us_fn = None
    tokenizer = cfg.tokenizer
    if args.strategy in ("us", "es"):
        if not args.model:
            raise ValueError(f"--strategy {args.strategy} requires --model <us-checkpoint>")
        model, model_cfg = upvote.load_us_model(args.model)
        tokenizer = model_cfg.get("tokenizer", tokenizer)
        us_fn = lambda art, com: upvote.us_score(model, art, com)
    df = None
    if args.strategy in ("rs", "es"):
        df = fit_df([index_tokens(a, tokenizer) for a in corpus])
    ctx = dataset.ScorerContext(df=df, us_scorer=us_fn, alpha=cfg.alpha, tokenizer=tokenizer)
    pairs = dataset.build_training_set(corpus, args.strategy, ctx, cfg.seed)
    _write_jsonl(args.out, [
        {"article_id": p.article_id, "source": p.source, "target": p.target, "score": p.score}
        for p in pairs
    ])
    logger.info("built %d %s pairs", len(pairs), args.strategy)
    return 0


def _load_pairs(path) -> list[dataset.TrainingPair]:
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            pairs.append(dataset.TrainingPair(
                rec["article_id"], rec["source"], rec["target"], rec.get("score", 0.0)
            ))
    return pairs


def cmd_train_pg(args) -> int:
    cfg = _resolve_config(
        args, seed=args.seed, epochs=args.epochs, lambda_cov=args.lambda_cov,
        cov_from_epoch=args.cov_from_epoch, val_fraction=args.val_fraction,
        lr=args.lr, batch_size=args.batch_size, emb_dim=args.emb_dim,
        enc_hidden=args.enc_hidden, dec_hidden=args.dec_hidden,
        vocab_cap=args.vocab_cap, max_src_len=args.max_src_len,
        max_tgt_len=args.max_tgt_len, tokenizer=args.tokenizer,
        use_pointer=False if args.no_pointer else None,
    )
    pairs = _load_pairs(args.pairs)
    vocab = pointer.build_pair_vocab(pairs, cfg.vocab_cap, cfg.tokenizer)
    model = pointer.PgModel(
        vocab, emb_dim=cfg.emb_dim, enc_hidden=cfg.enc_hidden, dec_hidden=cfg.dec_hidden,
        use_pointer=cfg.use_pointer, rng=np.random.default_rng(cfg.seed),
    )
    history = pointer.train(
        model, pairs, tokenizer=cfg.tokenizer, epochs=cfg.epochs, lr=cfg.lr,
        lr_decay=cfg.lr_decay, lambda_cov=cfg.lambda_cov,
        cov_from_epoch=cfg.cov_from_epoch, batch_size=cfg.batch_size,
        val_fraction=cfg.val_fraction, seed=cfg.seed,
        max_src_len=cfg.max_src_len, max_tgt_len=cfg.max_tgt_len,
    )
    for entry in history:
        logger.info("epoch %d: train_loss %.4f val_ppl %.3f lr %.2e lambda_cov %.2f",
                    entry["epoch"], entry["train_loss"], entry["val_ppl"],
                    entry["lr"], entry["lambda_cov"])
    pointer.save_pg_model(model, args.out, {
        "tokenizer": cfg.tokenizer,
        "pipeline_config": cfg.as_dict(),
    })
    logger.info("saved pointer-generator to %s", args.out)
    return 0


def cmd_generate(args) -> int:
    cfg = _resolve_config(args, beam_size=args.beam, max_tgt_len=args.max_len)
    model, model_cfg = pointer.load_pg_model(args.model)
    tokenizer = model_cfg.get("tokenizer", cfg.tokenizer)
    max_src = model_cfg.get("pipeline_config", {}).get("max_src_len", cfg.max_src_len)
    articles = load_corpus(args.input)
    records = []
    for article in articles:
        tokens = tokenize(source_text(article), tokenizer).tokens[:max_src]
        seq = pointer.generate(
            model, tokens, mode=args.mode, beam_size=cfg.beam_size,
            max_len=cfg.max_tgt_len, replace_unk=not args.no_replace_unk,
        )
        records.append({"article_id": article.id, "text": " ".join(seq.tokens)})
    _write_jsonl(args.out, records)
    logger.info("generated %d comments with %s decoding", len(records), args.mode)
    return 0


def cmd_evaluate(args) -> int:
    cfg = _resolve_config(args, tokenizer=args.tokenizer)
    report = metrics.evaluate(args.hyp, args.ref, cfg.tokenizer, args.ref_mode)
    _atomic_write_text(args.out, json.dumps(report, ensure_ascii=False, sort_keys=True, indent=2) + "\n")
    logger.info("bleu1 %.4f rouge_l %.4f cider %.4f over %d pairs",
                report["bleu1"], report["rouge_l"], report["cider"], report["n_pairs"])
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="commentforge",
        description="Comment retrieval and generation pipeline",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("make-toy", help="generate a synthetic corpus with planted structure")
    p.add_argument("--articles", type=int, required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    _add_config_arg(p)
    p.set_defaults(func=cmd_make_toy)

    p = subs.add_parser("ingest", help="load, validate and normalize a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out")
    p.add_argument("--splits-prefix")
    p.add_argument("--fractions", default="0.8,0.1,0.1")
    p.add_argument("--seed", type=int, default=None)
    _add_config_arg(p)
    p.set_defaults(func=cmd_ingest)

    p = subs.add_parser("build-index", help="build the TF-IDF article index")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="output prefix (.df and .json)")
    p.add_argument("--tokenizer", choices=["cjk-char", "whitespace"], default=None)
    _add_config_arg(p)
    p.set_defaults(func=cmd_build_index)

    p = subs.add_parser("retrieve", help="two-step comment retrieval")
    p.add_argument("--index", required=True)
    p.add_argument("--scorer", choices=["rs", "us", "es"], default="rs")
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--model", help="upvote scorer checkpoint for us/es")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    _add_config_arg(p)
    p.set_defaults(func=cmd_retrieve)

    p = subs.add_parser("train-us", help="train the upvote scorer")
    p.add_argument("--corpus", required=True)
    p.add_argument("--threshold", type=int, default=None)
    p.add_argument("--embeddings", help="word2vec text file for frozen embeddings")
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--val-fraction", type=float, default=None)
    p.add_argument("--emb-dim", type=int, default=None)
    p.add_argument("--hidden", type=int, default=None)
    p.add_argument("--vocab-cap", type=int, default=None)
    p.add_argument("--pos-weight", type=float, default=1.0)
    p.add_argument("--early-stop-auc", type=float, default=None)
    p.add_argument("--tokenizer", choices=["cjk-char", "whitespace"], default=None)
    _add_config_arg(p)
    p.set_defaults(func=cmd_train_us)

    p = subs.add_parser("score", help="score every comment with rs, us and ensemble")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--out", required=True)
    _add_config_arg(p)
    p.set_defaults(func=cmd_score)

    p = subs.add_parser("build-trainset", help="pair articles with selected comments")
    p.add_argument("--corpus", required=True)
    p.add_argument("--strategy", choices=["all", "raw", "rs", "us", "es"], required=True)
    p.add_argument("--model", help="upvote scorer checkpoint for us/es")
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--tokenizer", choices=["cjk-char", "whitespace"], default=None)
    p.add_argument("--out", required=True)
    _add_config_arg(p)
    p.set_defaults(func=cmd_build_trainset)

    p = subs.add_parser("train-pg", help="train the pointer-generator")
    p.add_argument("--pairs", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--val-fraction", type=float, default=None)
    p.add_argument("--lambda-cov", type=float, default=None)
    p.add_argument("--cov-from-epoch", type=int, default=None)
    p.add_argument("--no-pointer", action="store_true",
                   help="ablation: plain attention seq2seq (p_gen forced to 1)")
    p.add_argument("--emb-dim", type=int, default=None)
    p.add_argument("--enc-hidden", type=int, default=None)
    p.add_argument("--dec-hidden", type=int, default=None)
    p.add_argument("--vocab-cap", type=int, default=None)
    p.add_argument("--max-src-len", type=int, default=None)
    p.add_argument("--max-tgt-len", type=int, default=None)
    p.add_argument("--tokenizer", choices=["cjk-char", "whitespace"], default=None)
    _add_config_arg(p)
    p.set_defaults(func=cmd_train_pg)

    p = subs.add_parser("generate", help="decode comments for articles")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--mode", choices=["greedy", "beam"], default="greedy")
    p.add_argument("--beam", type=int, default=None)
    p.add_argument("--max-len", type=int, default=None)
    p.add_argument("--no-replace-unk", action="store_true")
    p.add_argument("--out", required=True)
    _add_config_arg(p)
    p.set_defaults(func=cmd_generate)

    p = subs.add_parser("evaluate", help="score a run file against references")
    p.add_argument("--hyp", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--ref-mode", choices=["all", "top"], default="all")
    p.add_argument("--tokenizer", choices=["cjk-char", "whitespace"], default=None)
    p.add_argument("--out", required=True)
    _add_config_arg(p)
    p.set_defaults(func=cmd_evaluate)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=logging.INFO,
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
        force=False,
    )
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    try:
        return args.func(args)
    except Exception as exc:
        logger.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
