"""Generator training-set construction under comment-selection strategies.

ALL pairs every comment with its article; RAW_UPVOTE takes the most upvoted
comment (seeded-uniform random pick when an article has no upvotes at all);
RS/US/ES take the argmax of the respective score. Ties always break by
ascending comment id, and the output is sorted by article id.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass

from .corpus import Article, Comment, index_tokens, source_text, source_tokens, tokenize
from .hashing import DfTable, dot, tfidf_vector
from .upvote import ensemble_score
from .validation import check_choice, check_nonempty

logger = logging.getLogger(__name__)

STRATEGIES = {"all", "raw", "rs", "us", "es"}


@dataclass(frozen=True)
class TrainingPair:
    article_id: str
    source: str
    target: str
    score: float


class ScorerContext:
    """Carries what the scored strategies need: df stats, upvote scorer, alpha."""

    def __init__(self, df: DfTable | None = None, us_scorer=None, alpha: float = 0.2,
                 tokenizer: str = "cjk-char"):
        self.df = df
        self.us_scorer = us_scorer
        self.alpha = alpha
        self.tokenizer = tokenizer

    def relevance(self, article: Article, comments) -> dict[str, float]:
        """Per-comment TF-IDF dot with the article, divided by the article max."""
        if self.df is None:
            raise ValueError("RS/ES strategies need a fitted df table")
        qvec = tfidf_vector(index_tokens(article, self.tokenizer), self.df)
        raw = {
            c.id: dot(qvec, tfidf_vector(tokenize(c.text, self.tokenizer), self.df))
            for c in comments
        }
        top = max(raw.values(), default=0.0)
        return {cid: (r / top if top > 0 else 0.0) for cid, r in raw.items()}

    def upvote(self, article: Article, comments) -> dict[str, float]:
        if self.us_scorer is None:
            raise ValueError("US/ES strategies need a trained upvote scorer")
        art_seq = source_tokens(article, self.tokenizer)
        return {
            c.id: self.us_scorer(art_seq, tokenize(c.text, self.tokenizer))
            for c in comments
        }

    def scores(self, article: Article, comments, strategy: str) -> dict[str, float]:
        if strategy == "rs":
            return self.relevance(article, comments)
        if strategy == "us":
            return self.upvote(article, comments)
        s_r = self.relevance(article, comments)
        s_u = self.upvote(article, comments)
        return {cid: ensemble_score(s_r[cid], s_u[cid], self.alpha) for cid in s_r}


def _eligible_comments(article: Article, tokenizer: str) -> list[Comment]:
    return [c for c in article.comments if tokenize(c.text, tokenizer).tokens]


def select_comment(article: Article, strategy: str, ctx: ScorerContext | None = None,
                   seed: int = 13) -> tuple[Comment, float] | None:
    """Pick one comment per the strategy; None when nothing is selectable."""
    check_choice(strategy, STRATEGIES - {"all"}, "strategy")
    ctx = ctx or ScorerContext()
    comments = _eligible_comments(article, ctx.tokenizer)
    if not comments:
        logger.warning("article %s has no usable comments; skipped", article.id)
        return None
    if strategy == "raw":
        if all(c.upvotes == 0 for c in comments):
            rng = random.Random(f"{seed}:{article.id}")
            pick = rng.choice(comments)
            return pick, 0.0
        pick = min(comments, key=lambda c: (-c.upvotes, c.id))
        return pick, float(pick.upvotes)
    scores = ctx.scores(article, comments, strategy)
    pick = min(comments, key=lambda c: (-scores[c.id], c.id))
    return pick, scores[pick.id]


def build_training_set(corpus, strategy: str = "all", ctx: ScorerContext | None = None,
                       seed: int = 13) -> list[TrainingPair]:
    """One pair per comment (ALL) or per eligible article (scored strategies)."""
    check_choice(strategy, STRATEGIES, "strategy")
    check_nonempty(list(corpus), "corpus")
    ctx = ctx or ScorerContext()
    pairs: list[TrainingPair] = []
    skipped = 0
    for article in sorted(corpus, key=lambda a: a.id):
        src = source_text(article)
        if strategy == "all":
            for comment in sorted(_eligible_comments(article, ctx.tokenizer),
                                  key=lambda c: c.id):
                pairs.append(TrainingPair(article.id, src, comment.text, float(comment.upvotes)))
            if not article.comments:
                skipped += 1
            continue
        picked = select_comment(article, strategy, ctx, seed)
        if picked is None:
            skipped += 1
            continue
        comment, score = picked
        pairs.append(TrainingPair(article.id, src, comment.text, score))
    if skipped:
        logger.warning("skipped %d articles without usable comments", skipped)
    return pairs
