"""commentforge: user-signal-aware comment retrieval and generation.

Public surface: the estimator classes mirroring the pipeline stages
(HashedBigramVectorizer, TwoStepCommentRetriever, UpvoteScorer,
CommentGenerator) plus the functional modules they are built from.
"""

from .corpus import Article, Comment, TokenSequence, Vocab, build_vocab, load_corpus, tokenize
from .dataset import ScorerContext, TrainingPair, build_training_set, select_comment
from .hashing import HashedBigramVectorizer, bigram_buckets, murmur3_32
from .metrics import EvalPair, bleu1, cider, rouge_l
from .pointer import CommentGenerator, PgModel, generate
from .retrieval import TwoStepCommentRetriever, build_index, retrieve_comment
from .upvote import UpvoteScorer, UsModel, ensemble_score, label_dataset, us_forward

__version__ = "0.1.0"

__all__ = [
    "Article",
    "Comment",
    "TokenSequence",
    "Vocab",
    "build_vocab",
    "load_corpus",
    "tokenize",
    "ScorerContext",
    "TrainingPair",
    "build_training_set",
    "select_comment",
    "HashedBigramVectorizer",
    "bigram_buckets",
    "murmur3_32",
    "EvalPair",
    "bleu1",
    "cider",
    "rouge_l",
    "CommentGenerator",
    "PgModel",
    "generate",
    "TwoStepCommentRetriever",
    "build_index",
    "retrieve_comment",
    "UpvoteScorer",
    "UsModel",
    "ensemble_score",
    "label_dataset",
    "us_forward",
    "__version__",
]
