"""Corpus ingestion, tokenization, vocabulary construction and dataset splits.

The corpus is a JSONL file with one article per line:

    {"id": str, "title": str, "body": str, "category": str|null,
     "comments": [{"id": str, "text": str, "upvotes": int}]}

Articles are immutable once loaded; everything downstream (indexing, scoring,
generation) consumes them read-only.
"""

from __future__ import annotations

import json
import logging
import random
from collections import Counter
from dataclasses import dataclass, field

from .validation import check_choice, check_fractions, check_nonempty

logger = logging.getLogger(__name__)

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
BOS_TOKEN = "<bos>"
EOS_TOKEN = "<eos>"
SEP_TOKEN = "<sep>"

RESERVED_TOKENS = (PAD_TOKEN, UNK_TOKEN, BOS_TOKEN, EOS_TOKEN)
PAD_ID, UNK_ID, BOS_ID, EOS_ID = 0, 1, 2, 3

TOKENIZER_MODES = {"cjk-char", "whitespace"}

# CJK ideograph blocks (unified + ext A + compat + ext B..F planes).
_CJK_RANGES = (
    (0x4E00, 0x9FFF),
    (0x3400, 0x4DBF),
    (0xF900, 0xFAFF),
    (0x20000, 0x2A6DF),
    (0x2A700, 0x2EBEF),
)


class CorpusFormatError(ValueError):
    """Raised when a corpus file is unreadable or too badly malformed."""


@dataclass(frozen=True)
class Comment:
    id: str
    text: str
    upvotes: int

    def __post_init__(self):
        if self.upvotes < 0:
            raise ValueError(f"comment {self.id!r}: upvotes must be >= 0")
        if not self.text.strip():
            raise ValueError(f"comment {self.id!r}: text empty after trimming")


@dataclass(frozen=True)
class Article:
    id: str
    title: str
    body: str
    category: str | None = None
    comments: tuple[Comment, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "comments", tuple(self.comments))


@dataclass(frozen=True)
class TokenSequence:
    tokens: tuple[str, ...]
    ids: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "ids", tuple(self.ids))
        if self.ids and len(self.ids) != len(self.tokens):
            raise ValueError(
                f"tokens/ids length mismatch: {len(self.tokens)} vs {len(self.ids)}"
            )

    def __len__(self):
        return len(self.tokens)


def _is_cjk(ch: str) -> bool:
    cp = ord(ch)
    return any(lo <= cp <= hi for lo, hi in _CJK_RANGES)


def tokenize(text: str, mode: str = "cjk-char", keep_punctuation: bool = False) -> TokenSequence:
    """Split text into tokens. Pure and deterministic.

    cjk-char: every CJK ideograph is its own token; maximal runs of other
    alphanumeric codepoints form one token each; remaining characters are
    dropped unless keep_punctuation is set. whitespace: split on Unicode
    whitespace. The literal separator marker "<sep>" is always preserved
    as a single token in both modes so that serialized source strings
    round-trip through the tokenizer.
    """
    check_choice(mode, TOKENIZER_MODES, "tokenizer mode")
    tokens: list[str] = []
    for chunk in _split_on_sep(text):
        if chunk == SEP_TOKEN:
            tokens.append(SEP_TOKEN)
        elif mode == "whitespace":
            tokens.extend(chunk.split())
        else:
            tokens.extend(_tokenize_cjk_chunk(chunk, keep_punctuation))
    return TokenSequence(tuple(tokens))


def _split_on_sep(text: str):
    parts = text.split(SEP_TOKEN)
    for i, part in enumerate(parts):
        if i > 0:
            yield SEP_TOKEN
        if part:
            yield part


def _tokenize_cjk_chunk(chunk: str, keep_punctuation: bool) -> list[str]:
    tokens: list[str] = []
    run: list[str] = []
    for ch in chunk:
        if _is_cjk(ch):
            if run:
                tokens.append("".join(run))
                run = []
            tokens.append(ch)
        elif ch.isalnum():
            run.append(ch)
        else:
            if run:
                tokens.append("".join(run))
                run = []
            if keep_punctuation and not ch.isspace():
                tokens.append(ch)
    if run:
        tokens.append("".join(run))
    return tokens


class Vocab:
    """Token <-> id bijection with reserved ids 0..3 for PAD/UNK/BOS/EOS."""

    def __init__(self, tokens=()):
        self.id_to_token: list[str] = list(RESERVED_TOKENS)
        self.token_to_id: dict[str, int] = {t: i for i, t in enumerate(self.id_to_token)}
        for tok in tokens:
            self.add(tok)

    def add(self, token: str) -> int:
        if token in self.token_to_id:
            return self.token_to_id[token]
        idx = len(self.id_to_token)
        self.id_to_token.append(token)
        self.token_to_id[token] = idx
        return idx

    def __len__(self):
        return len(self.id_to_token)

    def __contains__(self, token):
        return token in self.token_to_id

    def encode_token(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def encode(self, tokens) -> TokenSequence:
        toks = tuple(tokens.tokens if isinstance(tokens, TokenSequence) else tokens)
        return TokenSequence(toks, tuple(self.encode_token(t) for t in toks))

    def decode(self, ids) -> tuple[str, ...]:
        return tuple(self.id_to_token[i] for i in ids)

    @property
    def retained(self) -> list[str]:
        """Tokens other than the four reserved specials, in id order."""
        return self.id_to_token[len(RESERVED_TOKENS):]


def build_vocab(corpus, cap: int, mode: str = "cjk-char") -> Vocab:
    """Keep the (cap - 4) most frequent tokens over titles, bodies and comments.

    Ties at the frequency cut are broken by lexicographic token order.
    """
    if cap < 5:
        raise ValueError(f"vocab cap must be >= 5, got {cap}")
    counts: Counter[str] = Counter()
    for article in corpus:
        counts.update(tokenize(article.title, mode).tokens)
        counts.update(tokenize(article.body, mode).tokens)
        for comment in article.comments:
            counts.update(tokenize(comment.text, mode).tokens)
    for special in RESERVED_TOKENS + (SEP_TOKEN,):
        counts.pop(special, None)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return Vocab(tok for tok, _ in ranked[: cap - len(RESERVED_TOKENS)])


def source_text(article: Article) -> str:
    """Model-facing source string: title, separator marker, body."""
    return f"{article.title} {SEP_TOKEN} {article.body}"


def source_tokens(article: Article, mode: str = "cjk-char") -> TokenSequence:
    return tokenize(source_text(article), mode)


def index_tokens(article: Article, mode: str = "cjk-char") -> TokenSequence:
    """Retrieval-facing token stream: title then body, no separator."""
    return TokenSequence(
        tokenize(article.title, mode).tokens + tokenize(article.body, mode).tokens
    )


def _parse_article(record) -> Article:
    if not isinstance(record, dict):
        raise ValueError("record is not an object")
    for key in ("id", "title", "body", "comments"):
        if key not in record:
            raise ValueError(f"missing field {key!r}")
    if not isinstance(record["title"], str) or not isinstance(record["body"], str):
        raise ValueError("title/body must be strings")
    category = record.get("category")
    if category is not None and not isinstance(category, str):
        raise ValueError("category must be string or null")
    comments = []
    for c in record["comments"]:
        if not isinstance(c, dict) or not {"id", "text", "upvotes"} <= set(c):
            raise ValueError("malformed comment record")
        if not isinstance(c["upvotes"], int) or isinstance(c["upvotes"], bool):
            raise ValueError("upvotes must be an integer")
        if not str(c["text"]).strip():
            continue  # empty comments cannot be targets or candidates
        comments.append(Comment(str(c["id"]), c["text"], c["upvotes"]))
    return Article(str(record["id"]), record["title"], record["body"], category, tuple(comments))


def load_corpus(path, format: str = "jsonl") -> list[Article]:
    """Load all well-formed articles from a JSONL corpus, preserving file order.

    Malformed lines are skipped with a warning; more than 10% malformed is an
    error. Duplicate article ids are an error.
    """
    check_choice(format, {"jsonl"}, "corpus format")
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise CorpusFormatError(f"cannot read corpus file {path}: {exc}") from exc

    articles: list[Article] = []
    seen_ids: set[str] = set()
    n_lines = 0
    n_bad = 0
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        n_lines += 1
        try:
            article = _parse_article(json.loads(line))
        except (ValueError, KeyError, TypeError) as exc:
            n_bad += 1
            logger.warning("%s:%d: skipping malformed record (%s)", path, lineno, exc)
            continue
        if article.id in seen_ids:
            raise CorpusFormatError(f"{path}:{lineno}: duplicate article id {article.id!r}")
        seen_ids.add(article.id)
        articles.append(article)
    if n_lines and n_bad > 0.1 * n_lines:
        raise CorpusFormatError(
            f"{path}: {n_bad} of {n_lines} lines malformed (>10%)"
        )
    if n_bad:
        logger.warning("%s: skipped %d malformed of %d lines", path, n_bad, n_lines)
    return articles


def article_to_record(article: Article) -> dict:
    return {
        "id": article.id,
        "title": article.title,
        "body": article.body,
        "category": article.category,
        "comments": [
            {"id": c.id, "text": c.text, "upvotes": c.upvotes} for c in article.comments
        ],
    }


def save_corpus(articles, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for article in articles:
            fh.write(json.dumps(article_to_record(article), ensure_ascii=False, sort_keys=True))
            fh.write("\n")


def split_dataset(corpus, fractions, seed: int):
    """Seeded disjoint, exhaustive (train, valid, test) partition of the corpus."""
    fractions = check_fractions(fractions)
    articles = list(corpus)
    order = list(range(len(articles)))
    random.Random(seed).shuffle(order)
    n = len(articles)
    counts = [int(n * f) for f in fractions]
    remainders = [n * f - c for f, c in zip(fractions, counts)]
    for _ in range(n - sum(counts)):
        i = max(range(3), key=lambda j: (remainders[j], -j))
        counts[i] += 1
        remainders[i] = -1.0
    out = []
    start = 0
    for c in counts:
        out.append([articles[i] for i in order[start : start + c]])
        start += c
    return tuple(out)


def save_split_ids(splits, prefix) -> list[str]:
    """Write one id-per-line file for each of train/valid/test."""
    paths = []
    for name, part in zip(("train", "valid", "test"), splits):
        path = f"{prefix}.{name}.ids"
        with open(path, "w", encoding="utf-8") as fh:
            for article in part:
                fh.write(article.id + "\n")
        paths.append(path)
    return paths


def filter_by_ids(corpus, id_file) -> list[Article]:
    with open(id_file, encoding="utf-8") as fh:
        wanted = [line.strip() for line in fh if line.strip()]
    by_id = {a.id: a for a in corpus}
    missing = [i for i in wanted if i not in by_id]
    if missing:
        raise CorpusFormatError(f"{id_file}: unknown article ids {missing[:5]}")
    return [by_id[i] for i in wanted]
