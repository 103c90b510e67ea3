"""Corpus-level generation metrics: BLEU-1, ROUGE-L and CIDEr-D.

All metrics consume tokenized sequences, never raw strings, so the
tokenization choice stays explicit and shared with the rest of the pipeline.
BLEU-1 is corpus-level clipped unigram precision with the closest-reference
brevity penalty; ROUGE-L is the mean LCS F-measure with beta = 1.2, max over
references; CIDEr-D averages clipped tf-idf cosines over 1..4-grams with a
gaussian length penalty (sigma = 6) and a x10 scale, idf fitted on the
reference corpus.
"""

from __future__ import annotations

import json
import logging
import math
from collections import Counter
from dataclasses import dataclass

from .corpus import TokenSequence, tokenize
from .validation import check_nonempty

logger = logging.getLogger(__name__)

ROUGE_BETA = 1.2
CIDER_N = 4
CIDER_SIGMA = 6.0


@dataclass(frozen=True)
class EvalPair:
    hypothesis: TokenSequence
    references: tuple[TokenSequence, ...]

    def __post_init__(self):
        object.__setattr__(self, "references", tuple(self.references))
        if not self.references:
            raise ValueError("EvalPair needs at least one reference")


def bleu1(pairs) -> float:
    """Corpus clipped unigram precision times the brevity penalty."""
    pairs = check_nonempty(list(pairs), "pairs")
    clipped = 0
    hyp_len = 0
    ref_len = 0
    for pair in pairs:
        hyp = pair.hypothesis.tokens
        hyp_counts = Counter(hyp)
        max_ref: Counter[str] = Counter()
        for ref in pair.references:
            for tok, cnt in Counter(ref.tokens).items():
                max_ref[tok] = max(max_ref[tok], cnt)
        clipped += sum(min(cnt, max_ref[tok]) for tok, cnt in hyp_counts.items())
        hyp_len += len(hyp)
        ref_len += min((len(r.tokens) for r in pair.references),
                       key=lambda rl: (abs(rl - len(hyp)), rl))
    if hyp_len == 0:
        return 0.0
    precision = clipped / hyp_len
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return bp * precision


def _lcs_length(a, b) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0] * (len(b) + 1)
        for j, y in enumerate(b, start=1):
            cur[j] = prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1])
        prev = cur
    return prev[-1]


def rouge_l(pairs, beta: float = ROUGE_BETA) -> float:
    """Mean over pairs of the best LCS F-measure across references."""
    pairs = check_nonempty(list(pairs), "pairs")
    total = 0.0
    for pair in pairs:
        hyp = pair.hypothesis.tokens
        best = 0.0
        for ref in pair.references:
            lcs = _lcs_length(hyp, ref.tokens)
            if lcs == 0 or not hyp or not ref.tokens:
                continue
            prec = lcs / len(hyp)
            rec = lcs / len(ref.tokens)
            f = (1 + beta**2) * prec * rec / (rec + beta**2 * prec)
            best = max(best, f)
        total += best
    return total / len(pairs)


def _ngram_counts(tokens, n_max: int) -> Counter:
    counts: Counter[tuple[str, ...]] = Counter()
    for n in range(1, n_max + 1):
        for i in range(len(tokens) - n + 1):
            counts[tuple(tokens[i : i + n])] += 1
    return counts


def _cider_vector(counts: Counter, df: Counter, log_n: float, n_max: int):
    """Per-order tf-idf maps, their norms, and the length proxy."""
    vecs = [dict() for _ in range(n_max)]
    norms = [0.0] * n_max
    length = 0
    for ngram, tf in counts.items():
        n = len(ngram) - 1
        idf = log_n - math.log(max(1.0, df[ngram]))
        w = tf * idf
        vecs[n][ngram] = w
        norms[n] += w * w
        if n == 1:
            length += tf
    return vecs, [math.sqrt(x) for x in norms], length


def cider(pairs, n_max: int = CIDER_N, sigma: float = CIDER_SIGMA) -> float:
    """CIDEr-D over the pair corpus; one idf table fitted on the references."""
    pairs = check_nonempty(list(pairs), "pairs")
    if len(pairs) < 2:
        logger.warning("cider over a single pair: idf is degenerate")
    df: Counter[tuple[str, ...]] = Counter()
    for pair in pairs:
        seen: set[tuple[str, ...]] = set()
        for ref in pair.references:
            seen.update(_ngram_counts(ref.tokens, n_max))
        for ngram in seen:
            df[ngram] += 1
    log_n = math.log(len(pairs))

    total = 0.0
    for pair in pairs:
        hyp_vec, hyp_norm, hyp_len = _cider_vector(
            _ngram_counts(pair.hypothesis.tokens, n_max), df, log_n, n_max
        )
        acc = [0.0] * n_max
        for ref in pair.references:
            ref_vec, ref_norm, ref_len = _cider_vector(
                _ngram_counts(ref.tokens, n_max), df, log_n, n_max
            )
            delta = float(hyp_len - ref_len)
            penalty = math.exp(-(delta**2) / (2.0 * sigma**2))
            for n in range(n_max):
                val = sum(
                    min(w, ref_vec[n].get(ngram, 0.0)) * ref_vec[n].get(ngram, 0.0)
                    for ngram, w in hyp_vec[n].items()
                )
                if hyp_norm[n] != 0.0 and ref_norm[n] != 0.0:
                    val /= hyp_norm[n] * ref_norm[n]
                acc[n] += val * penalty
        score = sum(acc) / n_max / len(pair.references) * 10.0
        total += score
    return total / len(pairs)


def distinct_unigram_ratio(outputs) -> float:
    """Distinct tokens over total tokens across generated outputs.

    A collapse-prone generator repeats the same few phrases everywhere, which
    drives this ratio down; copying article-specific tokens drives it up.
    """
    tokens = [t for seq in outputs for t in (seq.tokens if isinstance(seq, TokenSequence) else seq)]
    if not tokens:
        return 0.0
    return len(set(tokens)) / len(tokens)


def _load_jsonl(path) -> list[dict]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(json.loads(line))
    return records


def _references_from_record(record: dict, tokenizer: str, ref_mode: str) -> list[TokenSequence]:
    if "comments" in record:
        comments = record["comments"]
        if ref_mode == "top":
            comments = sorted(comments, key=lambda c: (-c["upvotes"], c["id"]))[:1]
        refs = [tokenize(c["text"], tokenizer) for c in comments]
    else:
        refs = [tokenize(record["text"], tokenizer)]
    return [r for r in refs if r.tokens]


def evaluate(hyp_path, ref_path, tokenizer: str = "cjk-char", ref_mode: str = "all") -> dict:
    """Score a run file against references aligned by article id.

    Hypotheses missing for a reference id count as empty and are warned about;
    hypothesis ids absent from the reference file are fatal.
    """
    hyps = _load_jsonl(hyp_path)
    refs = _load_jsonl(ref_path)
    warnings: list[str] = []

    ref_map: dict[str, list[TokenSequence]] = {}
    for record in refs:
        rid = record.get("article_id", record.get("id"))
        references = _references_from_record(record, tokenizer, ref_mode)
        if not references:
            warnings.append(f"reference {rid} has no usable text; skipped")
            continue
        ref_map[rid] = references

    hyp_map: dict[str, TokenSequence] = {}
    for record in hyps:
        hyp_map[record["article_id"]] = tokenize(record.get("text", ""), tokenizer)

    unknown = sorted(set(hyp_map) - set(ref_map))
    if unknown:
        raise ValueError(f"hypothesis ids missing from references: {unknown}")

    missing = sorted(set(ref_map) - set(hyp_map))
    for rid in missing:
        warnings.append(f"no hypothesis for {rid}; scored as empty")

    pairs = [
        EvalPair(hyp_map.get(rid, TokenSequence(())), tuple(ref_map[rid]))
        for rid in sorted(ref_map)
    ]
    if not pairs:
        return {"bleu1": 0.0, "rouge_l": 0.0, "cider": 0.0, "n_pairs": 0,
                "warnings": warnings + ["no evaluable pairs"]}
    for w in warnings:
        logger.warning("%s", w)
    return {
        "bleu1": bleu1(pairs),
        "rouge_l": rouge_l(pairs),
        "cider": cider(pairs),
        "n_pairs": len(pairs),
        "warnings": warnings,
    }
