"""Hashed-bigram TF-IDF vectors.

Bigrams of adjacent tokens are serialized as UTF-8 "left\\x1fright" (unit
separator join), hashed with MurmurHash3 x86 32-bit, and reduced modulo 2^24
into a fixed bucket space. Bucket weights are tf * idf with the smoothed
logarithmic idf ln((N+1)/(df+1)) + 1, then L2-normalized, so that dot products
between vectors behave like cosine similarities bounded by 1.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

from sklearn.base import BaseEstimator, TransformerMixin

from .corpus import TokenSequence
from .validation import check_fitted, check_nonempty

N_BUCKETS = 1 << 24
HASH_SEED = 0
_BIGRAM_JOIN = "\x1f"

_C1 = 0xCC9E2D51
_C2 = 0x1B873593
_MASK = 0xFFFFFFFF


def murmur3_32(data: bytes, seed: int = 0) -> int:
    """MurmurHash3 x86 32-bit (Austin Appleby's public-domain algorithm)."""
    length = len(data)
    h = seed & _MASK
    rounded = length & ~3
    for i in range(0, rounded, 4):
        k = data[i] | (data[i + 1] << 8) | (data[i + 2] << 16) | (data[i + 3] << 24)
        k = (k * _C1) & _MASK
        k = ((k << 15) | (k >> 17)) & _MASK
        k = (k * _C2) & _MASK
        h ^= k
        h = ((h << 13) | (h >> 19)) & _MASK
        h = (h * 5 + 0xE6546B64) & _MASK
    k = 0
    tail = length & 3
    if tail >= 3:
        k ^= data[rounded + 2] << 16
    if tail >= 2:
        k ^= data[rounded + 1] << 8
    if tail >= 1:
        k ^= data[rounded]
        k = (k * _C1) & _MASK
        k = ((k << 15) | (k >> 17)) & _MASK
        k = (k * _C2) & _MASK
        h ^= k
    h ^= length
    h ^= h >> 16
    h = (h * 0x85EBCA6B) & _MASK
    h ^= h >> 13
    h = (h * 0xC2B2AE35) & _MASK
    h ^= h >> 16
    return h


def bigram_buckets(seq: TokenSequence | list[str] | tuple[str, ...]) -> list[int]:
    """Bucket index for every adjacent token pair; m tokens yield m-1 buckets."""
    tokens = seq.tokens if isinstance(seq, TokenSequence) else tuple(seq)
    return [
        murmur3_32(f"{a}{_BIGRAM_JOIN}{b}".encode("utf-8"), HASH_SEED) % N_BUCKETS
        for a, b in zip(tokens, tokens[1:])
    ]


@dataclass(frozen=True)
class SparseVector:
    """Bucket index -> weight map; no explicit zeros, all weights finite."""

    entries: dict[int, float]

    def __post_init__(self):
        for b, w in self.entries.items():
            if not 0 <= b < N_BUCKETS:
                raise ValueError(f"bucket {b} outside [0, 2^24)")
            if not math.isfinite(w):
                raise ValueError(f"non-finite weight at bucket {b}")

    def __len__(self):
        return len(self.entries)

    def norm(self) -> float:
        return math.sqrt(sum(w * w for w in self.entries.values()))


EMPTY_VECTOR = SparseVector({})


@dataclass(frozen=True)
class DfTable:
    """Document count plus per-bucket document frequencies."""

    n_docs: int
    df: dict[int, int]

    def __post_init__(self):
        for b, d in self.df.items():
            if not 1 <= d <= self.n_docs:
                raise ValueError(f"df[{b}]={d} outside [1, {self.n_docs}]")

    def idf(self, bucket: int) -> float:
        return math.log((self.n_docs + 1) / (self.df.get(bucket, 0) + 1)) + 1.0


def fit_df(corpus_docs) -> DfTable:
    """Count, per bucket, the number of documents whose bigram set contains it."""
    docs = check_nonempty(list(corpus_docs), "corpus_docs")
    df: dict[int, int] = {}
    for doc in docs:
        for b in set(bigram_buckets(doc)):
            df[b] = df.get(b, 0) + 1
    return DfTable(len(docs), df)


def tfidf_vector(seq, df: DfTable) -> SparseVector:
    """L2-normalized tf*idf weights over the sequence's bigram buckets."""
    tf: dict[int, int] = {}
    for b in bigram_buckets(seq):
        tf[b] = tf.get(b, 0) + 1
    if not tf:
        return EMPTY_VECTOR
    weights = {b: c * df.idf(b) for b, c in tf.items()}
    norm = math.sqrt(sum(w * w for w in weights.values()))
    if norm == 0.0:
        return EMPTY_VECTOR
    return SparseVector({b: w / norm for b, w in weights.items()})


def dot(u: SparseVector, v: SparseVector) -> float:
    if len(u) > len(v):
        u, v = v, u
    return sum(w * v.entries.get(b, 0.0) for b, w in u.entries.items())


_DF_MAGIC = b"CFDF"
_DF_VERSION = 1


def save_df(table: DfTable, path) -> None:
    """Binary layout: magic, u32 version, u32 N, then ascending (u32 bucket, u32 df)."""
    with open(path, "wb") as fh:
        fh.write(_DF_MAGIC)
        fh.write(struct.pack("<II", _DF_VERSION, table.n_docs))
        for bucket in sorted(table.df):
            fh.write(struct.pack("<II", bucket, table.df[bucket]))


def load_df(path) -> DfTable:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _DF_MAGIC:
        raise ValueError(f"{path}: not a df table file")
    version, n_docs = struct.unpack_from("<II", blob, 4)
    if version != _DF_VERSION:
        raise ValueError(f"{path}: unsupported df table version {version}")
    body = blob[12:]
    if len(body) % 8:
        raise ValueError(f"{path}: truncated df table")
    df = {}
    for off in range(0, len(body), 8):
        bucket, count = struct.unpack_from("<II", body, off)
        df[bucket] = count
    return DfTable(n_docs, df)


class HashedBigramVectorizer(TransformerMixin, BaseEstimator):
    """Fit document frequencies on token sequences, transform them to vectors.

    Mirrors the fit/transform contract of sklearn text vectorizers while
    keeping the hashed-bigram representation reproducible bit-for-bit.
    """

    def __init__(self):
        self.df_table_ = None

    def fit(self, X, y=None):
        self.df_table_ = fit_df(X)
        return self

    def transform(self, X) -> list[SparseVector]:
        check_fitted(self, "df_table_")
        return [tfidf_vector(seq, self.df_table_) for seq in X]
