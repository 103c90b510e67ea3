"""Two-step IR commenting: similar-article lookup, comment pooling, ranking.

Step one retrieves the top-k articles by hashed TF-IDF dot product; step two
pools the retrieved articles' comments and ranks them with a pluggable scorer
(relevance by default, optionally the trained upvote scorer or the ensemble).
All orderings break ties by ascending id so runs are deterministic.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

from sklearn.base import BaseEstimator

from .corpus import Article, Comment, index_tokens, source_tokens, tokenize
from .hashing import DfTable, SparseVector, dot, fit_df, load_df, save_df, tfidf_vector
from .validation import check_choice, check_fitted, check_nonempty, check_positive

logger = logging.getLogger(__name__)

SCORERS = {"rs", "us", "es"}


class NoCandidateError(RuntimeError):
    """Two-step retrieval produced an empty comment pool."""


@dataclass(frozen=True)
class ScoredComment:
    comment_id: str
    source_article_id: str
    score: float
    text: str = ""


@dataclass(frozen=True)
class CandidateComment:
    comment: Comment
    source_article_id: str


class ArticleIndex:
    """Immutable id -> TF-IDF vector index over title+body bigrams."""

    def __init__(self, article_ids, vectors, df: DfTable, tokenizer: str = "cjk-char"):
        if len(article_ids) != len(vectors):
            raise ValueError("one vector per article id required")
        self.article_ids = list(article_ids)
        self.vectors = list(vectors)
        self.df = df
        self.tokenizer = tokenizer
        self._by_id = dict(zip(self.article_ids, self.vectors))

    def __len__(self):
        return len(self.article_ids)

    def vectorize_query(self, article: Article) -> SparseVector:
        return tfidf_vector(index_tokens(article, self.tokenizer), self.df)


def build_index(corpus, tokenizer: str = "cjk-char") -> ArticleIndex:
    articles = check_nonempty(list(corpus), "corpus")
    docs = [index_tokens(a, tokenizer) for a in articles]
    df = fit_df(docs)
    vectors = [tfidf_vector(doc, df) for doc in docs]
    return ArticleIndex([a.id for a in articles], vectors, df, tokenizer)


def top_k_articles(query: Article, index: ArticleIndex, k: int = 5) -> list[str]:
    """Ids of the k nearest articles by dot product, descending, ties by id.

    The query's own id is excluded when present in the index. An index smaller
    than k returns everything with a warning.
    """
    check_positive(k, "k")
    check_nonempty(index.article_ids, "index")
    qvec = index.vectorize_query(query)
    scored = [
        (-dot(qvec, vec), aid)
        for aid, vec in zip(index.article_ids, index.vectors)
        if aid != query.id
    ]
    scored.sort()
    if len(scored) < k:
        logger.warning("index has %d candidates, requested k=%d", len(scored), k)
    return [aid for _, aid in scored[:k]]


def candidate_pool(article_ids, corpus) -> list[CandidateComment]:
    """All comments of the named articles, article order then comment order."""
    by_id = {a.id: a for a in corpus}
    pool: list[CandidateComment] = []
    for aid in article_ids:
        if aid not in by_id:
            raise KeyError(f"unknown article id {aid!r}")
        pool.extend(CandidateComment(c, aid) for c in by_id[aid].comments)
    return pool


def relevance_scores(
    query: Article,
    pool: list[CandidateComment],
    df: DfTable,
    tokenizer: str = "cjk-char",
) -> list[ScoredComment]:
    """TF-IDF dot products against the query, divided by the pool maximum.

    The best candidate therefore scores exactly 1.0 unless every raw score is
    zero. Output is sorted by descending score, ties by ascending comment id.
    """
    check_nonempty(pool, "pool")
    qvec = tfidf_vector(index_tokens(query, tokenizer), df)
    raw = [
        dot(qvec, tfidf_vector(tokenize(entry.comment.text, tokenizer), df))
        for entry in pool
    ]
    top = max(raw)
    scores = [r / top if top > 0 else 0.0 for r in raw]
    out = [
        ScoredComment(entry.comment.id, entry.source_article_id, s, entry.comment.text)
        for entry, s in zip(pool, scores)
    ]
    out.sort(key=lambda sc: (-sc.score, sc.comment_id))
    return out


def retrieve_comment(
    query: Article,
    index: ArticleIndex,
    corpus,
    scorer: str = "rs",
    k: int = 5,
    us_scorer=None,
    alpha: float = 0.2,
) -> ScoredComment:
    """Two-step retrieval returning the argmax-scored pooled comment."""
    check_choice(scorer, SCORERS, "scorer")
    if scorer in ("us", "es") and us_scorer is None:
        raise ValueError(f"scorer {scorer!r} requires a trained upvote scorer")
    ids = top_k_articles(query, index, k)
    pool = candidate_pool(ids, corpus)
    if not pool:
        raise NoCandidateError(f"retrieved articles {ids} have no comments")
    ranked = relevance_scores(query, pool, index.df, index.tokenizer)
    if scorer == "rs":
        return ranked[0]
    query_seq = source_tokens(query, index.tokenizer)
    by_comment_id = {e.comment.id: e for e in pool}
    rescored = []
    for sc in ranked:
        entry = by_comment_id[sc.comment_id]
        s_u = us_scorer(query_seq, tokenize(entry.comment.text, index.tokenizer))
        s = s_u if scorer == "us" else alpha * sc.score + (1.0 - alpha) * s_u
        rescored.append(ScoredComment(sc.comment_id, sc.source_article_id, s, sc.text))
    rescored.sort(key=lambda sc: (-sc.score, sc.comment_id))
    return rescored[0]


def save_index(index: ArticleIndex, corpus, prefix) -> tuple[str, str]:
    """Persist as prefix.df (binary df table) plus prefix.json (ids, vectors, pool)."""
    df_path = f"{prefix}.df"
    json_path = f"{prefix}.json"
    save_df(index.df, df_path)
    by_id = {a.id: a for a in corpus}
    records = []
    for aid, vec in zip(index.article_ids, index.vectors):
        comments = by_id[aid].comments if aid in by_id else ()
        records.append(
            {
                "id": aid,
                "vector": {str(b): w for b, w in sorted(vec.entries.items())},
                "comments": [
                    {"id": c.id, "text": c.text, "upvotes": c.upvotes} for c in comments
                ],
            }
        )
    payload = {"version": 1, "tokenizer": index.tokenizer, "articles": records}
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, ensure_ascii=False, sort_keys=True)
    return df_path, json_path


def load_index(prefix) -> tuple[ArticleIndex, list[Article]]:
    """Load an index plus the stub articles carrying its candidate comments."""
    df = load_df(f"{prefix}.df")
    with open(f"{prefix}.json", encoding="utf-8") as fh:
        payload = json.load(fh)
    ids, vectors, articles = [], [], []
    for rec in payload["articles"]:
        ids.append(rec["id"])
        vectors.append(SparseVector({int(b): w for b, w in rec["vector"].items()}))
        comments = tuple(Comment(c["id"], c["text"], c["upvotes"]) for c in rec["comments"])
        articles.append(Article(rec["id"], "", "", None, comments))
    return ArticleIndex(ids, vectors, df, payload["tokenizer"]), articles


class TwoStepCommentRetriever(BaseEstimator):
    """Estimator wrapper: fit on a corpus, predict one comment per query article."""

    def __init__(self, k=5, scorer="rs", alpha=0.2, tokenizer="cjk-char", us_scorer=None):
        self.k = k
        self.scorer = scorer
        self.alpha = alpha
        self.tokenizer = tokenizer
        self.us_scorer = us_scorer
        self.index_ = None
        self.corpus_ = None

    def fit(self, X, y=None):
        self.corpus_ = list(X)
        self.index_ = build_index(self.corpus_, self.tokenizer)
        return self

    def predict(self, X) -> list[ScoredComment]:
        check_fitted(self, ["index_", "corpus_"])
        return [
            retrieve_comment(
                query,
                self.index_,
                self.corpus_,
                scorer=self.scorer,
                k=self.k,
                us_scorer=self.us_scorer,
                alpha=self.alpha,
            )
            for query in X
        ]
