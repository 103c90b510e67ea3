"""Synthetic news corpus with planted structure for self-contained experiments.

Each article gets a topic keyword, a per-article entity token (unique, hence
out-of-vocabulary under a frequency cap), one entity comment copying an
"of <entity>" span from the title (pattern varies over four templates), one
further keyword comment, and three generic comments shared corpus-wide.
Comments containing the topic keyword or entity receive upvotes at or above
ten; generics stay below. Every seventh article has all upvotes zeroed so the
unlabeled/random-fallback paths stay exercised.

Word pools are cycled deterministically; ``toy_vocab_cap(corpus)`` returns a
vocabulary cap under which every entity token stays out of vocabulary (and,
for 24 or more articles, every other token stays in).
"""

from __future__ import annotations

import random
import re
from collections import Counter

from .corpus import Article, Comment, tokenize

TOPICS = ("dog", "cat", "fire", "rain", "match", "song", "road", "ship", "bank", "tree")
PLACES = ("harbor", "market", "school", "bridge", "garden", "station")
ADJECTIVES = ("hurt", "loud", "quiet", "broken", "lost", "bright")
VERBS = ("follow", "watch", "carry", "guard", "chase", "greet")
ENTITY_TEMPLATES = (
    "poor {topic} of {entity}",
    "sad story the {topic} of {entity}",
    "my {topic} of {entity} again",
    "save the {topic} of {entity}",
)
GENERIC_COMMENTS = ("me too", "so sad today", "good luck friend")

ENTITY_PATTERN = re.compile(rf"^(?:{'|'.join(TOPICS)})\d+z$")
ZERO_UPVOTE_PERIOD = 7


def make_toy_corpus(n_articles: int, seed: int = 13) -> list[Article]:
    if n_articles < 1:
        raise ValueError(f"n_articles must be >= 1, got {n_articles}")
    rng = random.Random(seed)
    articles = []
    for i in range(n_articles):
        topic = TOPICS[i % len(TOPICS)]
        place = PLACES[i % len(PLACES)]
        adj = ADJECTIVES[i % len(ADJECTIVES)]
        adj2 = ADJECTIVES[(i + 3) % len(ADJECTIVES)]
        verb = VERBS[i % len(VERBS)]
        entity = f"{topic}{i}z"
        aid = f"a{i:04d}"
        title = f"report on the {topic} of {entity}"
        body = (
            f"locals say the {topic} near the {place} was {adj} and many watched"
            f" as {entity} did {verb} to the {topic} at the {place}"
        )
        zeroed = i % ZERO_UPVOTE_PERIOD == ZERO_UPVOTE_PERIOD - 1
        entity_text = ENTITY_TEMPLATES[i % len(ENTITY_TEMPLATES)].format(
            topic=topic, entity=entity
        )
        comments = (
            Comment(f"{aid}-c0", entity_text, 0 if zeroed else rng.randint(12, 30)),
            Comment(f"{aid}-c1", f"the {topic} was {adj2} i think",
                    0 if zeroed else rng.randint(10, 20)),
            Comment(f"{aid}-c2", GENERIC_COMMENTS[0], 0 if zeroed else rng.randint(0, 5)),
            Comment(f"{aid}-c3", GENERIC_COMMENTS[1], 0 if zeroed else rng.randint(0, 5)),
            Comment(f"{aid}-c4", GENERIC_COMMENTS[2], 0 if zeroed else rng.randint(0, 5)),
        )
        articles.append(Article(aid, title, body, topic, comments))
    return articles


def is_entity(token: str) -> bool:
    return ENTITY_PATTERN.match(token) is not None


def toy_vocab_cap(corpus, tokenizer: str = "whitespace") -> int:
    """Cap such that a frequency-ranked vocab excludes every entity token.

    Entities occur exactly three times each (title, body, entity comment), so
    counting the non-entity tokens that occur strictly more often gives a cap
    that can never admit an entity. Non-entity tokens at or below that
    frequency (rare pool words in very small corpora) fall out of vocabulary
    too, which is harmless.
    """
    counts: Counter[str] = Counter()
    for article in corpus:
        counts.update(tokenize(article.title, tokenizer).tokens)
        counts.update(tokenize(article.body, tokenizer).tokens)
        for comment in article.comments:
            counts.update(tokenize(comment.text, tokenizer).tokens)
    max_entity = max((c for tok, c in counts.items() if is_entity(tok)), default=0)
    n_common = sum(1 for tok, c in counts.items() if not is_entity(tok) and c > max_entity)
    return 4 + n_common
