"""Semi-supervised upvote scoring and the ensemble score.

Articles owning at least one comment at or above the upvote threshold supply
labeled examples (positive iff the comment clears the threshold). A shared
BiLSTM encodes article and comment; a bilinear attention against the comment's
final hidden state pools the article states; a sigmoid head scores the pair.
The ensemble score linearly interpolates relevance and upvote scores.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.metrics import roc_auc_score

from . import autodiff as ad
from .corpus import Article, TokenSequence, Vocab, build_vocab, source_tokens, tokenize
from .nn import Adam, LstmParams, bilstm, load_checkpoint, save_checkpoint, uniform_param, zeros_param
from .validation import check_nonempty, check_unit_interval

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LabeledExample:
    article: TokenSequence
    comment: TokenSequence
    label: int


def label_dataset(corpus, threshold: int = 10, tokenizer: str = "cjk-char"):
    """Partition a corpus into labeled pair examples and unlabeled articles.

    An article qualifies when any of its comments has upvotes >= threshold;
    every comment of a qualifying article becomes one example. Articles that
    never cleared the threshold are returned for later scoring.
    """
    if threshold < 1:
        raise ValueError(f"threshold must be >= 1, got {threshold}")
    examples: list[LabeledExample] = []
    unlabeled: list[Article] = []
    for article in corpus:
        if not any(c.upvotes >= threshold for c in article.comments):
            unlabeled.append(article)
            continue
        art_seq = source_tokens(article, tokenizer)
        for comment in article.comments:
            com_seq = tokenize(comment.text, tokenizer)
            if not com_seq.tokens:
                logger.warning("article %s comment %s tokenized empty; skipped",
                               article.id, comment.id)
                continue
            examples.append(LabeledExample(art_seq, com_seq, int(comment.upvotes >= threshold)))
    return examples, unlabeled


class UsModel:
    """Shared-encoder attentive classifier over (article, comment) pairs."""

    def __init__(self, vocab: Vocab, emb_dim: int = 64, hidden: int = 32,
                 rng: np.random.Generator | None = None,
                 pretrained: dict[str, np.ndarray] | None = None,
                 freeze_emb: bool = False):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.vocab = vocab
        self.hidden = hidden
        if pretrained:
            emb_dim = len(next(iter(pretrained.values())))
        self.emb_dim = emb_dim
        emb = rng.uniform(-0.1, 0.1, size=(len(vocab), emb_dim))
        if pretrained:
            hits = 0
            for tok, vec in pretrained.items():
                if tok in vocab:
                    emb[vocab.token_to_id[tok]] = vec
                    hits += 1
            logger.info("pretrained embeddings cover %d of %d vocab tokens", hits, len(vocab))
        self.emb = ad.Parameter("emb", emb, trainable=not freeze_emb)
        self.enc_fwd = LstmParams("enc_fwd", emb_dim, hidden, rng)
        self.enc_bwd = LstmParams("enc_bwd", emb_dim, hidden, rng)
        self.w_a = uniform_param("attn.w_a", (2 * hidden, 2 * hidden), rng)
        self.out_w = uniform_param("out.w", (4 * hidden, 1), rng)
        self.out_b = zeros_param("out.b", (1, 1))

    def parameters(self) -> list[ad.Parameter]:
        return [self.emb, *self.enc_fwd.parameters(), *self.enc_bwd.parameters(),
                self.w_a, self.out_w, self.out_b]

    def encode_ids(self, seq: TokenSequence) -> list[int]:
        return [self.vocab.encode_token(t) for t in seq.tokens]


def us_forward(model: UsModel, article: TokenSequence, comment: TokenSequence) -> ad.Tensor:
    """Score one (article, comment) pair; returns a (1, 1) tensor in (0, 1)."""
    if not article.tokens or not comment.tokens:
        raise ValueError("us_forward needs non-empty article and comment sequences")
    art_emb = ad.embedding_lookup(model.emb, model.encode_ids(article))
    com_emb = ad.embedding_lookup(model.emb, model.encode_ids(comment))
    h_art = bilstm(art_emb, model.enc_fwd, model.enc_bwd)
    h_com = bilstm(com_emb, model.enc_fwd, model.enc_bwd)
    h_final = ad.narrow(h_com, 0, h_com.shape[0] - 1, 1)
    scores = ad.matmul(ad.matmul(h_art, model.w_a), ad.transpose(h_final))
    attn = ad.softmax(scores, axis=0)
    context = ad.matmul(ad.transpose(attn), h_art)
    logit = ad.add(ad.matmul(ad.concat([context, h_final], axis=1), model.out_w), model.out_b)
    return ad.sigmoid(logit)


def us_score(model: UsModel, article: TokenSequence, comment: TokenSequence) -> float:
    with ad.no_grad():
        return float(us_forward(model, article, comment).item())


def _bce(score: ad.Tensor, label: int, pos_weight: float = 1.0) -> ad.Tensor:
    if label == 1:
        nll = ad.neg(ad.log(ad.clamp_min(score, 1e-12)))
        return ad.mul(nll, pos_weight) if pos_weight != 1.0 else nll
    return ad.neg(ad.log(ad.clamp_min(ad.sub(1.0, score), 1e-12)))


def _auc(model: UsModel, examples) -> float:
    labels = [ex.label for ex in examples]
    scores = [us_score(model, ex.article, ex.comment) for ex in examples]
    return float(roc_auc_score(labels, scores))


def train_us(model: UsModel, examples, epochs: int = 10, lr: float = 1e-3,
             lr_decay: float = 0.5, batch_size: int = 16, val_fraction: float = 0.1,
             seed: int = 13, pos_weight: float = 1.0,
             early_stop_auc: float | None = None) -> list[dict]:
    """Minimize BCE with Adam; returns per-epoch history with loss and AUC."""
    examples = check_nonempty(list(examples), "examples")
    labels = {ex.label for ex in examples}
    if labels != {0, 1}:
        raise ValueError(f"training needs both classes, got labels {sorted(labels)}")

    order = list(range(len(examples)))
    random.Random(seed).shuffle(order)
    n_val = int(len(examples) * val_fraction)
    val = [examples[i] for i in order[:n_val]]
    train = [examples[i] for i in order[n_val:]]
    if len({ex.label for ex in train}) < 2:
        val, train = [], [examples[i] for i in order]

    opt = Adam(model.parameters(), lr=lr)
    history: list[dict] = []
    prev_val_loss = None
    for epoch in range(1, epochs + 1):
        rng = random.Random(seed * 7919 + epoch)
        rng.shuffle(train)
        total = 0.0
        pending = 0
        opt.zero_grad()
        for ex in train:
            loss = _bce(us_forward(model, ex.article, ex.comment), ex.label, pos_weight)
            total += loss.item()
            ad.backward(loss)
            pending += 1
            if pending == batch_size:
                _apply_batch(opt, pending)
                pending = 0
        if pending:
            _apply_batch(opt, pending)
        train_loss = total / len(train)

        eval_set = val if val else train
        with ad.no_grad():
            val_loss = float(np.mean([
                _bce(us_forward(model, ex.article, ex.comment), ex.label).item()
                for ex in eval_set
            ]))
        val_auc = _auc(model, eval_set) if len({e.label for e in eval_set}) == 2 else float("nan")
        history.append({"epoch": epoch, "train_loss": train_loss,
                        "val_loss": val_loss, "val_auc": val_auc, "lr": opt.lr})
        if prev_val_loss is not None and val_loss > prev_val_loss:
            opt.decay_lr(lr_decay)
        prev_val_loss = val_loss
        if early_stop_auc is not None and val_auc >= early_stop_auc:
            break
    return history


def _apply_batch(opt: Adam, count: int) -> None:
    for p in opt.params:
        if p.trainable:
            p.grad /= count
    opt.step()
    opt.zero_grad()


def ensemble_score(s_r: float, s_u: float, alpha: float) -> float:
    """Linear interpolation alpha * s_r + (1 - alpha) * s_u."""
    check_unit_interval(alpha, "alpha")
    return alpha * s_r + (1.0 - alpha) * s_u


def load_word2vec_text(path) -> dict[str, np.ndarray]:
    """Standard word2vec text format: 'count dim' header then token + floats."""
    vectors: dict[str, np.ndarray] = {}
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise ValueError(f"{path}: expected 'count dim' header")
        count, dim = int(header[0]), int(header[1])
        for line in fh:
            parts = line.rstrip("\n").split(" ")
            if len(parts) != dim + 1:
                raise ValueError(f"{path}: bad vector line for token {parts[0]!r}")
            vectors[parts[0]] = np.array([float(x) for x in parts[1:]])
    if len(vectors) != count:
        logger.warning("%s: header says %d vectors, found %d", path, count, len(vectors))
    return vectors


def save_us_model(model: UsModel, path, extra_config: dict | None = None) -> None:
    config = {
        "model": "upvote_scorer",
        "emb_dim": model.emb_dim,
        "hidden": model.hidden,
        "freeze_emb": not model.emb.trainable,
        "vocab": model.vocab.retained,
    }
    config.update(extra_config or {})
    save_checkpoint(path, config, model.parameters())


def load_us_model(path) -> tuple[UsModel, dict]:
    config, arrays, _ = load_checkpoint(path)
    if config.get("model") != "upvote_scorer":
        raise ValueError(f"{path}: not an upvote scorer checkpoint")
    vocab = Vocab(config["vocab"])
    model = UsModel(vocab, emb_dim=config["emb_dim"], hidden=config["hidden"],
                    freeze_emb=config["freeze_emb"])
    for p in model.parameters():
        p.data[...] = arrays[p.name]
    return model, config


class UpvoteScorer(BaseEstimator):
    """Estimator facade: fit on a corpus, then score (article, comment) pairs."""

    def __init__(self, threshold=10, emb_dim=64, hidden=32, epochs=10, lr=1e-3,
                 lr_decay=0.5, batch_size=16, val_fraction=0.1, seed=13,
                 vocab_cap=50000, tokenizer="cjk-char", embeddings_path=None,
                 pos_weight=1.0, early_stop_auc=None):
        self.threshold = threshold
        self.emb_dim = emb_dim
        self.hidden = hidden
        self.epochs = epochs
        self.lr = lr
        self.lr_decay = lr_decay
        self.batch_size = batch_size
        self.val_fraction = val_fraction
        self.seed = seed
        self.vocab_cap = vocab_cap
        self.tokenizer = tokenizer
        self.embeddings_path = embeddings_path
        self.pos_weight = pos_weight
        self.early_stop_auc = early_stop_auc
        self.model_ = None
        self.history_ = None
        self.unlabeled_ = None

    def fit(self, X, y=None):
        corpus = check_nonempty(list(X), "corpus")
        examples, unlabeled = label_dataset(corpus, self.threshold, self.tokenizer)
        vocab = build_vocab(corpus, self.vocab_cap, self.tokenizer)
        pretrained = load_word2vec_text(self.embeddings_path) if self.embeddings_path else None
        model = UsModel(vocab, emb_dim=self.emb_dim, hidden=self.hidden,
                        rng=np.random.default_rng(self.seed),
                        pretrained=pretrained, freeze_emb=pretrained is not None)
        self.history_ = train_us(
            model, examples, epochs=self.epochs, lr=self.lr, lr_decay=self.lr_decay,
            batch_size=self.batch_size, val_fraction=self.val_fraction,
            seed=self.seed, pos_weight=self.pos_weight, early_stop_auc=self.early_stop_auc,
        )
        self.model_ = model
        self.unlabeled_ = unlabeled
        return self

    def score_pair(self, article: Article, comment_text: str) -> float:
        from .validation import check_fitted

        check_fitted(self, "model_")
        return us_score(
            self.model_,
            source_tokens(article, self.tokenizer),
            tokenize(comment_text, self.tokenizer),
        )

    def scorer_fn(self):
        """Callable (article_seq, comment_seq) -> float for retrieval/selection."""
        from .validation import check_fitted

        check_fitted(self, "model_")
        model = self.model_
        return lambda art, com: us_score(model, art, com)
