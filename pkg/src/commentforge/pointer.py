"""Pointer-generator with coverage: encoding, mixture decoding, training, search.

A bidirectional LSTM encodes the source; a unidirectional LSTM decodes with
additive attention that receives the running coverage vector as an extra
feature. At every step a generation gate p_gen mixes the vocabulary softmax
with the attention distribution scattered onto the per-example extended
vocabulary, so source-only tokens stay reachable. Setting use_pointer=False
collapses the same code path onto the plain attention seq2seq baseline
(p_gen identically 1, no extended vocabulary).
"""

from __future__ import annotations

import logging
import math
import random
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from . import autodiff as ad
from .corpus import (
    BOS_ID,
    EOS_ID,
    PAD_ID,
    RESERVED_TOKENS,
    SEP_TOKEN,
    TokenSequence,
    UNK_ID,
    Vocab,
    tokenize,
)
from .nn import Adam, LstmParams, lstm_cell, lstm_run, load_checkpoint, save_checkpoint, uniform_param, zeros_param
from .validation import check_fitted, check_nonempty, check_positive

logger = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


class ExtendedVocab:
    """Base vocabulary plus one example's source-only tokens at temporary ids."""

    def __init__(self, vocab: Vocab, source_tokens):
        self.vocab = vocab
        self.oov_tokens: list[str] = []
        index: dict[str, int] = {}
        for tok in source_tokens:
            if tok not in vocab and tok not in index:
                index[tok] = len(vocab) + len(self.oov_tokens)
                self.oov_tokens.append(tok)
        self._oov_index = index

    @property
    def size(self) -> int:
        return len(self.vocab) + len(self.oov_tokens)

    def encode_source(self, tokens) -> list[int]:
        out = []
        for t in tokens:
            tid = self.vocab.token_to_id.get(t)
            out.append(self._oov_index[t] if tid is None else tid)
        return out

    def encode_target(self, tokens) -> list[int]:
        out = []
        for t in tokens:
            tid = self.vocab.token_to_id.get(t)
            out.append(self._oov_index.get(t, UNK_ID) if tid is None else tid)
        return out

    def token(self, idx: int) -> str:
        if idx < len(self.vocab):
            return self.vocab.id_to_token[idx]
        return self.oov_tokens[idx - len(self.vocab)]


class PgModel:
    def __init__(self, vocab: Vocab, emb_dim: int = 128, enc_hidden: int = 256,
                 dec_hidden: int = 512, attn_dim: int | None = None,
                 use_pointer: bool = True, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.vocab = vocab
        self.emb_dim = emb_dim
        self.enc_hidden = enc_hidden
        self.dec_hidden = dec_hidden
        self.attn_dim = attn_dim if attn_dim is not None else 2 * enc_hidden
        self.use_pointer = use_pointer
        v = len(vocab)
        a = self.attn_dim
        self.emb = uniform_param("emb", (v, emb_dim), rng)
        self.enc_fwd = LstmParams("enc_fwd", emb_dim, enc_hidden, rng)
        self.enc_bwd = LstmParams("enc_bwd", emb_dim, enc_hidden, rng)
        self.bridge_h_w = uniform_param("bridge_h.w", (2 * enc_hidden, dec_hidden), rng)
        self.bridge_h_b = zeros_param("bridge_h.b", (1, dec_hidden))
        self.bridge_c_w = uniform_param("bridge_c.w", (2 * enc_hidden, dec_hidden), rng)
        self.bridge_c_b = zeros_param("bridge_c.b", (1, dec_hidden))
        self.dec = LstmParams("dec", emb_dim, dec_hidden, rng)
        self.attn_w_enc = uniform_param("attn.w_enc", (2 * enc_hidden, a), rng)
        self.attn_w_dec = uniform_param("attn.w_dec", (dec_hidden, a), rng)
        self.attn_w_cov = uniform_param("attn.w_cov", (1, a), rng)
        self.attn_b = zeros_param("attn.b", (1, a))
        self.attn_v = uniform_param("attn.v", (a, 1), rng)
        self.out_w = uniform_param("out.w", (dec_hidden + 2 * enc_hidden, v), rng)
        self.out_b = zeros_param("out.b", (1, v))
        self.pgen_w_ctx = uniform_param("pgen.w_ctx", (2 * enc_hidden, 1), rng)
        self.pgen_w_state = uniform_param("pgen.w_state", (dec_hidden, 1), rng)
        self.pgen_w_x = uniform_param("pgen.w_x", (emb_dim, 1), rng)
        self.pgen_b = zeros_param("pgen.b", (1, 1))

    def parameters(self) -> list[ad.Parameter]:
        return [
            self.emb,
            *self.enc_fwd.parameters(), *self.enc_bwd.parameters(),
            self.bridge_h_w, self.bridge_h_b, self.bridge_c_w, self.bridge_c_b,
            *self.dec.parameters(),
            self.attn_w_enc, self.attn_w_dec, self.attn_w_cov, self.attn_b, self.attn_v,
            self.out_w, self.out_b,
            self.pgen_w_ctx, self.pgen_w_state, self.pgen_w_x, self.pgen_b,
        ]

    def config(self) -> dict:
        return {
            "model": "pointer_generator",
            "emb_dim": self.emb_dim,
            "enc_hidden": self.enc_hidden,
            "dec_hidden": self.dec_hidden,
            "attn_dim": self.attn_dim,
            "use_pointer": self.use_pointer,
            "vocab": self.vocab.retained,
        }


@dataclass
class DecodeState:
    """Mutable per-example decoding cursor."""

    h: ad.Tensor
    c: ad.Tensor
    coverage: ad.Tensor  # (n_src, 1), running sum of past attention rows
    emitted: list[str] = field(default_factory=list)
    attention_history: list[np.ndarray] = field(default_factory=list)


def encode(model: PgModel, source_ids):
    """Run the bidirectional encoder; returns (states (n, 2H), DecodeState)."""
    source_ids = list(source_ids)
    check_nonempty(source_ids, "source_ids")
    emb = ad.embedding_lookup(model.emb, source_ids)
    fwd_states, (fwd_h, _) = lstm_run(emb, model.enc_fwd)
    bwd_states, (bwd_h, _) = lstm_run(emb, model.enc_bwd, reverse=True)
    states = ad.concat(
        [ad.concat([f, b], axis=1) for f, b in zip(fwd_states, bwd_states)], axis=0
    )
    final = ad.concat([fwd_h, bwd_h], axis=1)
    h0 = ad.tanh(ad.add(ad.matmul(final, model.bridge_h_w), model.bridge_h_b))
    c0 = ad.tanh(ad.add(ad.matmul(final, model.bridge_c_w), model.bridge_c_b))
    coverage = ad.Tensor(np.zeros((len(source_ids), 1)))
    return states, DecodeState(h=h0, c=c0, coverage=coverage)


def decode_step(model: PgModel, state: DecodeState, x_id: int, enc_states: ad.Tensor,
                ext: ExtendedVocab, src_ext_ids, p_gen_override: float | None = None):
    """One decoder step.

    Returns (distribution over the extended vocabulary (1, W), attention (n, 1),
    p_gen tensor or None, new DecodeState). The input id may be an extended id;
    it embeds as UNK since temporary ids have no embedding rows.
    """
    if not 0 <= x_id < ext.size:
        raise ValueError(f"token id {x_id} outside extended vocabulary of size {ext.size}")
    base_id = x_id if x_id < len(model.vocab) else UNK_ID
    x = ad.embedding_lookup(model.emb, [base_id])
    h, c = lstm_cell(x, state.h, state.c, model.dec)
    feats = ad.add(
        ad.add(ad.matmul(enc_states, model.attn_w_enc), ad.matmul(h, model.attn_w_dec)),
        ad.add(ad.matmul(state.coverage, model.attn_w_cov), model.attn_b),
    )
    e = ad.matmul(ad.tanh(feats), model.attn_v)
    attn = ad.softmax(e, axis=0)
    context = ad.matmul(ad.transpose(attn), enc_states)
    logits = ad.add(ad.matmul(ad.concat([h, context], axis=1), model.out_w), model.out_b)
    p_vocab = ad.softmax(logits, axis=1)

    if model.use_pointer:
        gate_logit = ad.add(
            ad.add(ad.matmul(context, model.pgen_w_ctx), ad.matmul(h, model.pgen_w_state)),
            ad.add(ad.matmul(x, model.pgen_w_x), model.pgen_b),
        )
        p_gen = ad.sigmoid(gate_logit)
        if p_gen_override is not None:
            p_gen = ad.Tensor(np.full((1, 1), p_gen_override))
        n_oov = ext.size - len(model.vocab)
        copy_dist = ad.scatter_row(ad.transpose(attn), src_ext_ids, ext.size)
        dist = ad.add(
            ad.mul(ad.pad_cols(p_vocab, n_oov), p_gen),
            ad.mul(copy_dist, ad.sub(1.0, p_gen)),
        )
    else:
        p_gen = None
        dist = p_vocab

    new_state = DecodeState(
        h=h,
        c=c,
        coverage=ad.add(state.coverage, attn),
        emitted=state.emitted,
        attention_history=state.attention_history,
    )
    return dist, attn, p_gen, new_state


def sequence_loss(model: PgModel, src_tokens, tgt_tokens, lambda_cov: float = 1.0):
    """Teacher-forced mean step loss: NLL plus the coverage overlap penalty.

    Returns (scalar tensor, number of steps). The target contributes one step
    per token plus the closing EOS.
    """
    src_tokens = tuple(src_tokens)
    tgt_tokens = tuple(tgt_tokens)
    check_nonempty(src_tokens, "source tokens")
    check_nonempty(tgt_tokens, "target tokens")
    ext = ExtendedVocab(model.vocab, src_tokens)
    src_ext_ids = ext.encode_source(src_tokens)
    src_base_ids = [model.vocab.encode_token(t) for t in src_tokens]
    if model.use_pointer:
        target_ids = ext.encode_target(tgt_tokens) + [EOS_ID]
    else:
        target_ids = [model.vocab.encode_token(t) for t in tgt_tokens] + [EOS_ID]
    input_ids = [BOS_ID] + [model.vocab.encode_token(t) for t in tgt_tokens]

    enc_states, state = encode(model, src_base_ids)
    step_losses = []
    for x_id, y_id in zip(input_ids, target_ids):
        prev_coverage = state.coverage
        dist, attn, _, state = decode_step(model, state, x_id, enc_states, ext, src_ext_ids)
        nll = ad.neg(ad.log(ad.clamp_min(ad.narrow(dist, 1, y_id, 1), PROB_FLOOR)))
        if lambda_cov:
            overlap = ad.reduce_sum(ad.minimum(attn, prev_coverage))
            nll = ad.add(nll, ad.mul(overlap, lambda_cov))
        step_losses.append(nll)
    total = ad.concat(step_losses, axis=0)
    return ad.mean(total), len(step_losses)


@dataclass(frozen=True)
class PreparedPair:
    article_id: str
    src: tuple[str, ...]
    tgt: tuple[str, ...]


def prepare_pairs(pairs, tokenizer: str, max_src_len: int, max_tgt_len: int) -> list[PreparedPair]:
    """Tokenize and truncate training pairs, dropping untrainable ones."""
    out = []
    dropped = 0
    for pair in pairs:
        src = tokenize(pair.source, tokenizer).tokens[:max_src_len]
        tgt = tokenize(pair.target, tokenizer).tokens[:max_tgt_len]
        if not src or not tgt:
            dropped += 1
            continue
        out.append(PreparedPair(pair.article_id, src, tgt))
    if dropped:
        logger.warning("dropped %d pairs with empty source/target after tokenization", dropped)
    if not out:
        raise ValueError("no trainable pairs: all sources/targets tokenized empty")
    return out


def perplexity(model: PgModel, prepared) -> float:
    """exp(mean NLL per step) over prepared pairs, coverage excluded."""
    total_nll = 0.0
    total_steps = 0
    with ad.no_grad():
        for pair in prepared:
            loss, steps = sequence_loss(model, pair.src, pair.tgt, lambda_cov=0.0)
            total_nll += loss.item() * steps
            total_steps += steps
    return math.exp(min(total_nll / max(total_steps, 1), 700.0))


def teacher_forced_accuracy(model: PgModel, prepared) -> float:
    """Fraction of teacher-forced steps whose argmax equals the target id."""
    hits = 0
    total = 0
    with ad.no_grad():
        for pair in prepared:
            ext = ExtendedVocab(model.vocab, pair.src)
            src_ext_ids = ext.encode_source(pair.src)
            src_base_ids = [model.vocab.encode_token(t) for t in pair.src]
            if model.use_pointer:
                target_ids = ext.encode_target(pair.tgt) + [EOS_ID]
            else:
                target_ids = [model.vocab.encode_token(t) for t in pair.tgt] + [EOS_ID]
            input_ids = [BOS_ID] + [model.vocab.encode_token(t) for t in pair.tgt]
            enc_states, state = encode(model, src_base_ids)
            for x_id, y_id in zip(input_ids, target_ids):
                dist, _, _, state = decode_step(model, state, x_id, enc_states, ext, src_ext_ids)
                hits += int(np.argmax(dist.data[0]) == y_id)
                total += 1
    return hits / max(total, 1)


def train(model: PgModel, pairs, tokenizer: str = "cjk-char", epochs: int = 10,
          lr: float = 1e-3, lr_decay: float = 0.5, lambda_cov: float = 1.0,
          cov_from_epoch: int = 1, batch_size: int = 16, val_fraction: float = 0.1,
          seed: int = 13, max_src_len: int = 400, max_tgt_len: int = 50,
          checkpoint_path=None, target_accuracy: float | None = None) -> list[dict]:
    """Adam training with the halve-on-perplexity-increase schedule.

    Every epoch records loss, validation perplexity and the learning rate that
    produced it; when perplexity rises, the next epoch runs at half the rate.
    With val_fraction 0 the schedule keys on training perplexity.
    """
    prepared = prepare_pairs(check_nonempty(list(pairs), "pairs"), tokenizer,
                             max_src_len, max_tgt_len)
    order = list(range(len(prepared)))
    random.Random(seed).shuffle(order)
    n_val = int(len(prepared) * val_fraction)
    val = [prepared[i] for i in order[:n_val]]
    train_set = [prepared[i] for i in order[n_val:]] or prepared

    opt = Adam(model.parameters(), lr=lr)
    history: list[dict] = []
    prev_ppl = None
    for epoch in range(1, epochs + 1):
        cov = lambda_cov if epoch >= cov_from_epoch else 0.0
        rng = random.Random(seed * 6007 + epoch)
        rng.shuffle(train_set)
        total = 0.0
        pending = 0
        opt.zero_grad()
        for pair in train_set:
            loss, _ = sequence_loss(model, pair.src, pair.tgt, lambda_cov=cov)
            total += loss.item()
            ad.backward(loss)
            pending += 1
            if pending == batch_size:
                _apply_batch(opt, pending)
                pending = 0
        if pending:
            _apply_batch(opt, pending)

        val_ppl = perplexity(model, val if val else train_set)
        entry = {"epoch": epoch, "train_loss": total / len(train_set),
                 "val_ppl": val_ppl, "lr": opt.lr, "lambda_cov": cov}
        if target_accuracy is not None:
            entry["token_accuracy"] = teacher_forced_accuracy(model, train_set)
        history.append(entry)
        if checkpoint_path is not None:
            save_pg_model(model, checkpoint_path, {"epoch": epoch})
        if prev_ppl is not None and val_ppl > prev_ppl:
            opt.decay_lr(lr_decay)
        prev_ppl = val_ppl
        if target_accuracy is not None and entry["token_accuracy"] >= target_accuracy:
            break
    return history


def _apply_batch(opt: Adam, count: int) -> None:
    for p in opt.params:
        if p.trainable:
            p.grad /= count
    opt.step()
    opt.zero_grad()


def _emission(token_id: int, ext: ExtendedVocab, attn: np.ndarray, src_tokens,
              replace_unk: bool) -> str:
    """Token string for an emitted id, replacing UNK by the max-attention source token."""
    if token_id == UNK_ID and replace_unk:
        return src_tokens[int(np.argmax(attn[:, 0]))]
    return ext.token(token_id)


def generate(model: PgModel, src_tokens, mode: str = "greedy", beam_size: int = 4,
             max_len: int = 50, block_repeat: bool = True,
             no_repeat_trigram: bool = False, replace_unk: bool = True) -> TokenSequence:
    """Decode a comment for one source; UNKs are replaced, repeats blocked."""
    if mode not in ("greedy", "beam"):
        raise ValueError(f"unknown decode mode {mode!r}")
    check_positive(beam_size, "beam_size")
    src_tokens = tuple(src_tokens)
    check_nonempty(src_tokens, "source tokens")
    with ad.no_grad():
        if mode == "greedy":
            tokens = _greedy(model, src_tokens, max_len, block_repeat, replace_unk)
        else:
            tokens = _beam(model, src_tokens, beam_size, max_len, block_repeat,
                           no_repeat_trigram, replace_unk)
    return TokenSequence(tuple(tokens))


def _setup_decode(model: PgModel, src_tokens):
    ext = ExtendedVocab(model.vocab, src_tokens)
    src_ext_ids = ext.encode_source(src_tokens)
    src_base_ids = [model.vocab.encode_token(t) for t in src_tokens]
    enc_states, state = encode(model, src_base_ids)
    return ext, src_ext_ids, enc_states, state


def _next_input_id(emission: str, vocab: Vocab) -> int:
    return vocab.encode_token(emission)


def _greedy(model: PgModel, src_tokens, max_len: int, block_repeat: bool,
            replace_unk: bool = True) -> list[str]:
    ext, src_ext_ids, enc_states, state = _setup_decode(model, src_tokens)
    out: list[str] = []
    x_id = BOS_ID
    for _ in range(max_len):
        dist, attn, _, state = decode_step(model, state, x_id, enc_states, ext, src_ext_ids)
        probs = dist.data[0]
        emitted = None
        for cand in np.argsort(-probs):
            cand = int(cand)
            if cand in (BOS_ID, PAD_ID):  # never emit BOS or PAD
                continue
            if cand == EOS_ID:
                return out
            word = _emission(cand, ext, attn.data, src_tokens, replace_unk)
            if block_repeat and out and word == out[-1]:
                continue
            emitted = word
            break
        if emitted is None:
            return out
        out.append(emitted)
        x_id = _next_input_id(emitted, model.vocab)
    return out


@dataclass
class _Hyp:
    tokens: list[str]
    logp: float
    state: DecodeState
    x_id: int
    finished: bool = False

    def score(self) -> float:
        return self.logp / max(len(self.tokens), 1)


def _beam(model: PgModel, src_tokens, beam_size: int, max_len: int,
          block_repeat: bool, no_repeat_trigram: bool,
          replace_unk: bool = True) -> list[str]:
    ext, src_ext_ids, enc_states, state = _setup_decode(model, src_tokens)
    beams = [_Hyp(tokens=[], logp=0.0, state=state, x_id=BOS_ID)]
    finished: list[_Hyp] = []
    for _ in range(max_len):
        candidates: list[_Hyp] = []
        for hyp in beams:
            if hyp.finished:
                continue
            dist, attn, _, new_state = decode_step(
                model, hyp.state, hyp.x_id, enc_states, ext, src_ext_ids
            )
            probs = dist.data[0]
            taken = 0
            for cand in np.argsort(-probs):
                cand = int(cand)
                if taken >= beam_size:
                    break
                if cand in (BOS_ID, PAD_ID):
                    continue
                logp = hyp.logp + math.log(max(probs[cand], PROB_FLOOR))
                if cand == EOS_ID:
                    if hyp.tokens:
                        finished.append(_Hyp(hyp.tokens, logp, new_state, EOS_ID, True))
                        taken += 1
                    continue
                word = _emission(cand, ext, attn.data, src_tokens, replace_unk)
                if block_repeat and hyp.tokens and word == hyp.tokens[-1]:
                    continue
                if no_repeat_trigram and _creates_repeat_trigram(hyp.tokens, word):
                    continue
                candidates.append(_Hyp(hyp.tokens + [word], logp, new_state,
                                       _next_input_id(word, model.vocab)))
                taken += 1
        if not candidates:
            break
        candidates.sort(key=lambda h: -h.score())
        beams = candidates[:beam_size]
    pool = finished if finished else beams
    best = max(pool, key=lambda h: h.score())
    return best.tokens


def _creates_repeat_trigram(tokens: list[str], word: str) -> bool:
    if len(tokens) < 2:
        return False
    tri = (tokens[-2], tokens[-1], word)
    seen = {tuple(tokens[i : i + 3]) for i in range(len(tokens) - 2)}
    return tri in seen


def build_pair_vocab(pairs, cap: int, tokenizer: str = "cjk-char") -> Vocab:
    """Frequency-ranked vocab over pair sources and targets, same rule as corpora."""
    if cap < 5:
        raise ValueError(f"vocab cap must be >= 5, got {cap}")
    counts: Counter[str] = Counter()
    for pair in pairs:
        counts.update(tokenize(pair.source, tokenizer).tokens)
        counts.update(tokenize(pair.target, tokenizer).tokens)
    for special in RESERVED_TOKENS + (SEP_TOKEN,):
        counts.pop(special, None)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return Vocab(tok for tok, _ in ranked[: cap - len(RESERVED_TOKENS)])


def save_pg_model(model: PgModel, path, extra_config: dict | None = None) -> None:
    config = model.config()
    config.update(extra_config or {})
    save_checkpoint(path, config, model.parameters())


def load_pg_model(path) -> tuple[PgModel, dict]:
    config, arrays, _ = load_checkpoint(path)
    if config.get("model") != "pointer_generator":
        raise ValueError(f"{path}: not a pointer-generator checkpoint")
    vocab = Vocab(config["vocab"])
    model = PgModel(vocab, emb_dim=config["emb_dim"], enc_hidden=config["enc_hidden"],
                    dec_hidden=config["dec_hidden"], attn_dim=config["attn_dim"],
                    use_pointer=config["use_pointer"])
    for p in model.parameters():
        p.data[...] = arrays[p.name]
    return model, config


class CommentGenerator(BaseEstimator):
    """Estimator facade: fit on training pairs, predict comments for sources."""

    def __init__(self, emb_dim=128, enc_hidden=256, dec_hidden=512, use_pointer=True,
                 epochs=10, lr=1e-3, lr_decay=0.5, lambda_cov=1.0, cov_from_epoch=1,
                 batch_size=16, val_fraction=0.1, seed=13, vocab_cap=50000,
                 tokenizer="cjk-char", max_src_len=400, max_tgt_len=50,
                 mode="greedy", beam_size=4):
        self.emb_dim = emb_dim
        self.enc_hidden = enc_hidden
        self.dec_hidden = dec_hidden
        self.use_pointer = use_pointer
        self.epochs = epochs
        self.lr = lr
        self.lr_decay = lr_decay
        self.lambda_cov = lambda_cov
        self.cov_from_epoch = cov_from_epoch
        self.batch_size = batch_size
        self.val_fraction = val_fraction
        self.seed = seed
        self.vocab_cap = vocab_cap
        self.tokenizer = tokenizer
        self.max_src_len = max_src_len
        self.max_tgt_len = max_tgt_len
        self.mode = mode
        self.beam_size = beam_size
        self.model_ = None
        self.history_ = None

    def fit(self, X, y=None):
        pairs = check_nonempty(list(X), "pairs")
        vocab = build_pair_vocab(pairs, self.vocab_cap, self.tokenizer)
        model = PgModel(vocab, emb_dim=self.emb_dim, enc_hidden=self.enc_hidden,
                        dec_hidden=self.dec_hidden, use_pointer=self.use_pointer,
                        rng=np.random.default_rng(self.seed))
        self.history_ = train(
            model, pairs, tokenizer=self.tokenizer, epochs=self.epochs, lr=self.lr,
            lr_decay=self.lr_decay, lambda_cov=self.lambda_cov,
            cov_from_epoch=self.cov_from_epoch, batch_size=self.batch_size,
            val_fraction=self.val_fraction, seed=self.seed,
            max_src_len=self.max_src_len, max_tgt_len=self.max_tgt_len,
        )
        self.model_ = model
        return self

    def predict(self, X) -> list[str]:
        check_fitted(self, "model_")
        out = []
        for source in X:
            tokens = tokenize(source, self.tokenizer).tokens[: self.max_src_len]
            seq = generate(self.model_, tokens, mode=self.mode, beam_size=self.beam_size,
                           max_len=self.max_tgt_len)
            out.append(" ".join(seq.tokens))
        return out
