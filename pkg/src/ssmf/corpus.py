"""Text preprocessing: tokens, n-grams, vocabularies, and TFIDF matrices.

The pipeline is: ``tokenize`` -> ``ngrams`` (unigrams + adjacent bigrams)
-> ``build_vocabulary`` over the training corpus -> ``count_matrix`` ->
``tfidf``. Unseen documents are vectorized against the trained vocabulary
with ``vectorize_new`` so that train-set inverse document frequencies are
reused verbatim.
"""

from __future__ import annotations

import csv
import json
import math
import re
from collections import Counter
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .exceptions import (
    EmptyVocabulary,
    SchemaError,
    ShapeMismatch,
    WeightingError,
)
from .stopwords import ENGLISH_STOPWORDS

REVIEW_CSV_COLUMNS = ("id", "app", "time_bucket", "rating", "text")

_NON_ALNUM = re.compile(r"[^a-z0-9]+")


@dataclass(frozen=True)
class ReviewRecord:
    """One labeled review: identifiers, a rating in 1..n_levels, raw text."""

    id: str
    app: str
    time_bucket: str
    rating: int
    text: str


@dataclass(frozen=True)
class Vocabulary:
    """Ordered term list with training document frequencies.

    ``terms`` holds unigrams and space-joined bigrams in a deterministic
    (lexicographic) order; ``doc_freq[j]`` is the number of training
    documents containing ``terms[j]``; ``n_train`` is the training corpus
    size used for IDF weights.
    """

    terms: tuple[str, ...]
    doc_freq: tuple[int, ...]
    n_train: int
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(self.terms) != len(self.doc_freq):
            raise ShapeMismatch("terms and doc_freq must align")
        if len(set(self.terms)) != len(self.terms):
            raise ValueError("vocabulary terms must be unique")
        if any(df < 1 or df > self.n_train for df in self.doc_freq):
            raise ValueError("doc_freq entries must lie in 1..n_train")
        object.__setattr__(self, "_index", {t: j for j, t in enumerate(self.terms)})

    def __len__(self):
        return len(self.terms)

    def __contains__(self, term):
        return term in self._index

    def column(self, term: str) -> int:
        return self._index[term]


@dataclass
class DocumentTermMatrix:
    """Sparse non-negative document-term matrix plus per-row metadata.

    ``weighting`` is ``"counts"`` or ``"tfidf"``. ``empty_rows`` lists
    row indices whose documents had no in-vocabulary terms; they are kept
    (prediction then falls back to the intercepts alone).
    """

    values: sp.csr_matrix
    weighting: str
    doc_ids: tuple[str, ...]
    ratings: np.ndarray | None = None
    apps: tuple[str, ...] | None = None
    time_buckets: tuple[str, ...] | None = None
    empty_rows: tuple[int, ...] = ()

    def __post_init__(self):
        if self.weighting not in ("counts", "tfidf"):
            raise WeightingError(f"unknown weighting {self.weighting!r}")
        if self.values.shape[0] != len(self.doc_ids):
            raise ShapeMismatch("doc_ids must match matrix rows")
        if self.values.nnz and self.values.data.min() < 0:
            raise ValueError("document-term matrices must be non-negative")

    @property
    def n_docs(self) -> int:
        return self.values.shape[0]

    @property
    def n_terms(self) -> int:
        return self.values.shape[1]


def tokenize(text: str, min_token_len: int = 3, stoplist=ENGLISH_STOPWORDS) -> list[str]:
    """Lowercase, split on non-alphanumerics, drop stopwords and short tokens.

    Order is preserved; an empty or all-filtered input yields ``[]``.
    """
    if min_token_len < 1:
        raise ValueError("min_token_len must be >= 1")
    tokens = [t for t in _NON_ALNUM.split(text.lower()) if t]
    return [t for t in tokens if len(t) >= min_token_len and t not in stoplist]


def ngrams(tokens: Sequence[str]) -> Counter:
    """Multiset of unigrams plus adjacent bigrams (space-joined).

    Bigrams are formed over the already-filtered token sequence, within a
    single document.
    """
    counts = Counter(tokens)
    counts.update(" ".join(pair) for pair in zip(tokens, tokens[1:]))
    return counts


def doc_terms(text: str, min_token_len: int = 3, stoplist=ENGLISH_STOPWORDS) -> Counter:
    """Full per-document term multiset: tokenize then add bigrams."""
    return ngrams(tokenize(text, min_token_len, stoplist))


def build_vocabulary(docs: Iterable[Mapping[str, int]], min_df: int = 20) -> Vocabulary:
    """Collect terms appearing in at least ``min_df`` documents.

    Terms are ordered lexicographically so identical corpora always yield
    identical vocabularies. Raises EmptyVocabulary if nothing survives.
    """
    if min_df < 1:
        raise ValueError("min_df must be >= 1")
    doc_freq: Counter = Counter()
    n_docs = 0
    for doc in docs:
        n_docs += 1
        doc_freq.update(set(doc))
    if n_docs == 0:
        raise ValueError("at least one document is required")
    kept = sorted(t for t, df in doc_freq.items() if df >= min_df)
    if not kept:
        raise EmptyVocabulary(
            f"no term reached min_df={min_df} over {n_docs} documents"
        )
    return Vocabulary(
        terms=tuple(kept),
        doc_freq=tuple(doc_freq[t] for t in kept),
        n_train=n_docs,
    )


def count_matrix(
    docs: Sequence[Mapping[str, int]],
    vocab: Vocabulary,
    doc_ids: Sequence[str] | None = None,
    ratings: Sequence[int] | None = None,
    apps: Sequence[str] | None = None,
    time_buckets: Sequence[str] | None = None,
) -> DocumentTermMatrix:
    """Count matrix over the vocabulary; out-of-vocabulary terms are dropped."""
    if doc_ids is None:
        doc_ids = tuple(str(i) for i in range(len(docs)))
    rows, cols, vals = [], [], []
    empty = []
    for i, doc in enumerate(docs):
        seen = False
        for term, count in doc.items():
            j = vocab._index.get(term)
            if j is None or count == 0:
                continue
            rows.append(i)
            cols.append(j)
            vals.append(count)
            seen = True
        if not seen:
            empty.append(i)
    values = sp.csr_matrix(
        (np.asarray(vals, dtype=float), (rows, cols)),
        shape=(len(docs), len(vocab)),
    )
    return DocumentTermMatrix(
        values=values,
        weighting="counts",
        doc_ids=tuple(doc_ids),
        ratings=None if ratings is None else np.asarray(ratings, dtype=int),
        apps=None if apps is None else tuple(apps),
        time_buckets=None if time_buckets is None else tuple(time_buckets),
        empty_rows=tuple(empty),
    )


def idf_weights(vocab: Vocabulary) -> np.ndarray:
    """Per-term weights ln(n_train / doc_freq); zero for ubiquitous terms."""
    df = np.asarray(vocab.doc_freq, dtype=float)
    return np.log(vocab.n_train / df)


def transform_tfidf(dtm: DocumentTermMatrix, vocab: Vocabulary) -> DocumentTermMatrix:
    """Apply train-set IDF weights to any counts matrix over ``vocab``."""
    if dtm.weighting != "counts":
        raise WeightingError("tfidf weighting may only be applied to counts")
    if dtm.n_terms != len(vocab):
        raise ShapeMismatch(
            f"matrix has {dtm.n_terms} columns, vocabulary has {len(vocab)} terms"
        )
    weighted = dtm.values @ sp.diags(idf_weights(vocab))
    return DocumentTermMatrix(
        values=sp.csr_matrix(weighted),
        weighting="tfidf",
        doc_ids=dtm.doc_ids,
        ratings=dtm.ratings,
        apps=dtm.apps,
        time_buckets=dtm.time_buckets,
        empty_rows=dtm.empty_rows,
    )


def tfidf(counts: DocumentTermMatrix, vocab: Vocabulary) -> DocumentTermMatrix:
    """TFIDF-weight the training matrix: entry TF * ln(n / doc_freq).

    The row count must equal ``vocab.n_train``; use ``transform_tfidf`` for
    matrices built from other corpora (e.g. a holdout set).
    """
    if counts.weighting == "tfidf":
        raise WeightingError("matrix is already tfidf-weighted")
    if counts.n_docs != vocab.n_train:
        raise ShapeMismatch(
            f"training matrix has {counts.n_docs} rows but vocabulary was "
            f"built from {vocab.n_train} documents"
        )
    return transform_tfidf(counts, vocab)


def vectorize_new(doc: Mapping[str, int], vocab: Vocabulary) -> np.ndarray:
    """TFIDF row for one unseen document, using training IDF values.

    Terms outside the vocabulary are ignored; a document of only unseen
    terms maps to the zero vector.
    """
    weights = idf_weights(vocab)
    row = np.zeros(len(vocab))
    for term, count in doc.items():
        j = vocab._index.get(term)
        if j is not None:
            row[j] = count * weights[j]
    return row


def read_reviews_csv(path, n_levels: int = 5) -> list[ReviewRecord]:
    """Parse a review CSV with header ``id,app,time_bucket,rating,text``.

    Raises SchemaError (with the offending row number) on missing or
    unknown columns, non-integer ratings, ratings outside 1..n_levels, or
    empty time buckets. Text may be empty.
    """
    records = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames
        if header is None:
            raise SchemaError("file is empty (no header row)")
        missing = [c for c in REVIEW_CSV_COLUMNS if c not in header]
        if missing:
            raise SchemaError(f"missing column(s): {', '.join(missing)}")
        unknown = [c for c in header if c not in REVIEW_CSV_COLUMNS]
        if unknown:
            raise SchemaError(f"unknown column(s): {', '.join(unknown)}")
        for row_no, row in enumerate(reader, start=1):
            if any(row[c] is None for c in REVIEW_CSV_COLUMNS):
                raise SchemaError("wrong number of fields", row=row_no)
            try:
                rating = int(row["rating"])
            except ValueError:
                raise SchemaError(
                    f"rating {row['rating']!r} is not an integer", row=row_no
                ) from None
            if not 1 <= rating <= n_levels:
                raise SchemaError(
                    f"rating {rating} outside 1..{n_levels}", row=row_no
                )
            if not row["time_bucket"]:
                raise SchemaError("empty time_bucket", row=row_no)
            records.append(
                ReviewRecord(
                    id=row["id"],
                    app=row["app"],
                    time_bucket=row["time_bucket"],
                    rating=rating,
                    text=row["text"],
                )
            )
    return records


# ---------------------------------------------------------------------------
# serialization


def save_vocabulary(vocab: Vocabulary, path) -> None:
    """Write newline-delimited ``term,doc_freq`` plus a ``.meta.json`` sidecar."""
    path = str(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for term, df in zip(vocab.terms, vocab.doc_freq):
            fh.write(f"{term},{df}\n")
    meta = {"format": "ssmf-vocabulary-v1", "n_train": vocab.n_train}
    with open(path + ".meta.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, sort_keys=True)
        fh.write("\n")


def load_vocabulary(path) -> Vocabulary:
    path = str(path)
    terms, dfs = [], []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            term, _, df = line.rpartition(",")
            terms.append(term)
            dfs.append(int(df))
    with open(path + ".meta.json", encoding="utf-8") as fh:
        meta = json.load(fh)
    return Vocabulary(terms=tuple(terms), doc_freq=tuple(dfs), n_train=meta["n_train"])


def save_matrix(dtm: DocumentTermMatrix, path) -> None:
    """Write ``row,col,value`` triplets plus a ``.meta.json`` sidecar."""
    path = str(path)
    coo = dtm.values.tocoo()
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for i in order:
            fh.write(f"{coo.row[i]},{coo.col[i]},{coo.data[i]!r}\n")
    meta = {
        "format": "ssmf-dtm-v1",
        "shape": list(dtm.values.shape),
        "weighting": dtm.weighting,
        "doc_ids": list(dtm.doc_ids),
        "ratings": None if dtm.ratings is None else [int(r) for r in dtm.ratings],
        "apps": None if dtm.apps is None else list(dtm.apps),
        "time_buckets": None
        if dtm.time_buckets is None
        else list(dtm.time_buckets),
        "empty_rows": list(dtm.empty_rows),
    }
    with open(path + ".meta.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, sort_keys=True)
        fh.write("\n")


def load_matrix(path) -> DocumentTermMatrix:
    path = str(path)
    with open(path + ".meta.json", encoding="utf-8") as fh:
        meta = json.load(fh)
    rows, cols, vals = [], [], []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            r, c, v = line.split(",")
            rows.append(int(r))
            cols.append(int(c))
            vals.append(float(v))
    values = sp.csr_matrix(
        (vals, (rows, cols)), shape=tuple(meta["shape"]), dtype=float
    )
    return DocumentTermMatrix(
        values=values,
        weighting=meta["weighting"],
        doc_ids=tuple(meta["doc_ids"]),
        ratings=None if meta["ratings"] is None else np.asarray(meta["ratings"]),
        apps=None if meta["apps"] is None else tuple(meta["apps"]),
        time_buckets=None
        if meta["time_buckets"] is None
        else tuple(meta["time_buckets"]),
        empty_rows=tuple(meta["empty_rows"]),
    )
