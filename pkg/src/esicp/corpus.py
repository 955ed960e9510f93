"""Bag-of-words ingest, tf-idf feature construction and the binary corpus cache.

Documents are stored in CSR form. Term IDs inside a :class:`Corpus` are
canonical: 0-based and sorted by ascending document frequency, with ties broken
by the original term ID. Low IDs are therefore rare, high-idf terms.
"""

from __future__ import annotations

import hashlib
import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

CACHE_MAGIC = b"ESKMCRP\x00"
CACHE_VERSION = 1


class CorpusError(Exception):
    """Base class for ingest failures."""


class ParseError(CorpusError):
    pass


class ValidationError(CorpusError):
    pass


class CacheError(CorpusError):
    pass


@dataclass
class SparseVector:
    terms: np.ndarray
    values: np.ndarray

    def __len__(self):
        return len(self.terms)


@dataclass
class RawCorpus:
    """Raw term counts as read from a bag-of-words file.

    Term and document IDs are 0-based versions of the file's 1-based IDs.
    ``doc_ids`` holds the original (1-based) ID of every stored document.
    """

    n_docs: int
    n_terms: int
    indptr: np.ndarray  # int64, n_docs + 1
    terms: np.ndarray  # int64 original 0-based term IDs, ascending per doc
    counts: np.ndarray  # int64
    doc_ids: np.ndarray  # int64, original 1-based doc IDs
    df: np.ndarray  # int64, n_terms
    tf: np.ndarray  # int64, n_terms

    @property
    def nnz(self):
        return len(self.terms)


@dataclass
class Corpus:
    """Unit-length tf-idf vectors over canonical term IDs."""

    n_docs: int
    n_terms: int
    indptr: np.ndarray  # int64, n_docs + 1
    terms: np.ndarray  # int32 canonical IDs, ascending per doc
    values: np.ndarray  # float64
    df: np.ndarray  # int64 per canonical term
    term_map: np.ndarray  # int64 canonical ID -> original 1-based term ID
    doc_ids: np.ndarray  # int64 original 1-based doc IDs
    removed_docs: np.ndarray = None  # original doc IDs dropped as empty

    def __post_init__(self):
        if self.removed_docs is None:
            self.removed_docs = np.zeros(0, dtype=np.int64)

    @property
    def nnz(self):
        return len(self.terms)

    @property
    def avg_terms(self):
        return self.nnz / self.n_docs

    @property
    def sparsity(self):
        return 1.0 - self.nnz / (self.n_docs * self.n_terms)

    def vector(self, i):
        a, b = self.indptr[i], self.indptr[i + 1]
        return SparseVector(self.terms[a:b], self.values[a:b])

    @property
    def vectors(self):
        return [self.vector(i) for i in range(self.n_docs)]

    def row_ids(self):
        """Object ID of every stored entry."""
        return np.repeat(np.arange(self.n_docs, dtype=np.int64), np.diff(self.indptr))

    def digest(self):
        h = hashlib.sha256()
        for arr in (self.indptr, self.terms, self.values, self.df, self.term_map):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()


# ---------------------------------------------------------------------------
# Ingest
# ---------------------------------------------------------------------------


def _parse_int_fields(line, lineno, n):
    parts = line.split()
    if len(parts) != n:
        raise ParseError(f"line {lineno}: expected {n} integer fields, got {len(parts)}")
    try:
        return [int(p) for p in parts]
    except ValueError:
        raise ParseError(f"line {lineno}: non-integer field in {line.strip()!r}") from None


def read_bag_of_words(path) -> RawCorpus:
    """Read a UCI bag-of-words file (header N, D, NNZ then ``doc term count`` lines)."""
    path = Path(path)
    try:
        fh = open(path, "r")
    except OSError as exc:
        raise ParseError(f"cannot open {path}: {exc}") from exc
    with fh:
        return parse_bag_of_words(fh)


def parse_bag_of_words(lines) -> RawCorpus:
    header = []
    lineno = 0
    it = iter(lines)
    for line in it:
        lineno += 1
        if not line.strip():
            continue
        # the header is either three lines or one "N D NNZ" line
        if not header and len(line.split()) == 3:
            header = _parse_int_fields(line, lineno, 3)
            break
        header.append(_parse_int_fields(line, lineno, 1)[0])
        if len(header) == 3:
            break
    if len(header) < 3:
        raise ParseError(f"line {lineno}: truncated header")
    n_docs, n_terms, nnz = header
    if n_docs <= 0 or n_terms <= 0 or nnz < 0:
        raise ParseError(f"invalid header N={n_docs} D={n_terms} NNZ={nnz}")

    docs = np.empty(nnz, dtype=np.int64)
    terms = np.empty(nnz, dtype=np.int64)
    counts = np.empty(nnz, dtype=np.int64)
    lines_of = np.empty(nnz, dtype=np.int64)
    k = 0
    for line in it:
        lineno += 1
        if not line.strip():
            continue
        d, t, c = _parse_int_fields(line, lineno, 3)
        if k >= nnz:
            raise ParseError(f"line {lineno}: more entries than header NNZ={nnz}")
        if not 1 <= d <= n_docs:
            raise ParseError(f"line {lineno}: doc ID {d} out of range 1..{n_docs}")
        if not 1 <= t <= n_terms:
            raise ParseError(f"line {lineno}: term ID {t} out of range 1..{n_terms}")
        if c <= 0:
            raise ParseError(f"line {lineno}: non-positive count {c}")
        docs[k] = d - 1
        terms[k] = t - 1
        counts[k] = c
        lines_of[k] = lineno
        k += 1
    if k != nnz:
        raise ParseError(f"header declares NNZ={nnz} but file has {k} entries")

    order = np.lexsort((terms, docs))
    docs, terms, counts, lines_of = docs[order], terms[order], counts[order], lines_of[order]
    dup = (np.diff(docs) == 0) & (np.diff(terms) == 0)
    if dup.any():
        pos = int(np.flatnonzero(dup)[0]) + 1
        raise ParseError(
            f"line {lines_of[pos]}: duplicate (doc, term) pair ({docs[pos] + 1}, {terms[pos] + 1})"
        )
    per_doc = np.bincount(docs, minlength=n_docs)
    empty = np.flatnonzero(per_doc == 0)
    if len(empty):
        raise ValidationError(f"document {int(empty[0]) + 1} has no entries")
    indptr = np.zeros(n_docs + 1, dtype=np.int64)
    np.cumsum(per_doc, out=indptr[1:])
    df = np.bincount(terms, minlength=n_terms).astype(np.int64)
    tf = np.bincount(terms, weights=counts, minlength=n_terms).astype(np.int64)
    return RawCorpus(
        n_docs=n_docs,
        n_terms=n_terms,
        indptr=indptr,
        terms=terms,
        counts=counts,
        doc_ids=np.arange(1, n_docs + 1, dtype=np.int64),
        df=df,
        tf=tf,
    )


def write_bag_of_words(raw: RawCorpus, path):
    """Write ``raw`` in the UCI bag-of-words format, renumbering documents 1..N."""
    rows = np.repeat(np.arange(raw.n_docs, dtype=np.int64), np.diff(raw.indptr))
    with open(path, "w") as fh:
        fh.write(f"{raw.n_docs}\n{raw.n_terms}\n{raw.nnz}\n")
        body = np.column_stack((rows + 1, raw.terms + 1, raw.counts))
        np.savetxt(fh, body, fmt="%d")


# ---------------------------------------------------------------------------
# Features
# ---------------------------------------------------------------------------


def build_features(raw: RawCorpus) -> Corpus:
    """tf-idf weighting, L2 normalisation and canonical term renumbering.

    Terms present in every document have zero idf and vanish. Documents left
    empty are removed and idf is recomputed over the remaining documents until
    nothing else vanishes.
    """
    keep = np.ones(raw.n_docs, dtype=bool)
    removed = []
    rows = np.repeat(np.arange(raw.n_docs, dtype=np.int64), np.diff(raw.indptr))
    while True:
        n = int(keep.sum())
        if n == 0:
            raise ValidationError("every document is empty after removing zero-idf terms")
        live = keep[rows]
        df = np.bincount(raw.terms[live], minlength=raw.n_terms)
        informative = (df > 0) & (df < n)
        entry_ok = live & informative[raw.terms]
        has_term = np.bincount(rows[entry_ok], minlength=raw.n_docs) > 0
        newly_empty = keep & ~has_term
        if not newly_empty.any():
            break
        for d in np.flatnonzero(newly_empty):
            log.warning("document %d has no informative terms; removed", raw.doc_ids[d])
            removed.append(int(raw.doc_ids[d]))
        keep &= has_term

    # canonical order: df ascending, original ID breaks ties
    orig = np.flatnonzero(informative)
    order = np.lexsort((orig, df[orig]))
    term_map = orig[order]
    canon = np.full(raw.n_terms, -1, dtype=np.int64)
    canon[term_map] = np.arange(len(term_map))

    sel = entry_ok
    r = rows[sel]
    t = canon[raw.terms[sel]]
    idf = np.log(n / df[raw.terms[sel]].astype(np.float64))
    w = raw.counts[sel].astype(np.float64) * idf

    old_to_new = np.cumsum(keep) - 1
    r = old_to_new[r]
    order = np.lexsort((t, r))
    r, t, w = r[order], t[order], w[order]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(r, minlength=n), out=indptr[1:])
    norms = np.sqrt(np.add.reduceat(w * w, indptr[:-1]))
    w = w / np.repeat(norms, np.diff(indptr))
    return Corpus(
        n_docs=n,
        n_terms=len(term_map),
        indptr=indptr,
        terms=t.astype(np.int32),
        values=w,
        df=df[term_map].astype(np.int64),
        term_map=term_map.astype(np.int64) + 1,
        doc_ids=raw.doc_ids[keep].astype(np.int64),
        removed_docs=np.asarray(removed, dtype=np.int64),
    )


def load_corpus(path) -> Corpus:
    return build_features(read_bag_of_words(path))


# ---------------------------------------------------------------------------
# Binary cache
# ---------------------------------------------------------------------------

_HEADER = struct.Struct("<8sIqqq")


def write_cache(corpus: Corpus, path):
    """Serialise ``corpus``; the output is a pure function of its contents."""
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(CACHE_MAGIC, CACHE_VERSION, corpus.n_docs, corpus.n_terms, corpus.nnz))
        fh.write(np.ascontiguousarray(corpus.df, dtype="<i8").tobytes())
        fh.write(np.ascontiguousarray(corpus.term_map, dtype="<i8").tobytes())
        fh.write(np.ascontiguousarray(corpus.doc_ids, dtype="<i8").tobytes())
        fh.write(np.ascontiguousarray(corpus.indptr, dtype="<i8").tobytes())
        fh.write(np.ascontiguousarray(corpus.terms, dtype="<i4").tobytes())
        fh.write(np.ascontiguousarray(corpus.values, dtype="<f8").tobytes())


def read_cache(path) -> Corpus:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CacheError(f"cannot read cache {path}: {exc}") from exc
    if len(data) < _HEADER.size:
        raise CacheError(f"{path}: truncated cache header")
    magic, version, n, d, nnz = _HEADER.unpack_from(data, 0)
    if magic != CACHE_MAGIC:
        raise CacheError(f"{path}: bad magic, not a corpus cache")
    if version != CACHE_VERSION:
        raise CacheError(f"{path}: cache version {version}, expected {CACHE_VERSION}")
    off = _HEADER.size
    parts = []
    for count, dtype in ((d, "<i8"), (d, "<i8"), (n, "<i8"), (n + 1, "<i8"), (nnz, "<i4"), (nnz, "<f8")):
        size = count * np.dtype(dtype).itemsize
        if off + size > len(data):
            raise CacheError(f"{path}: truncated cache body")
        parts.append(np.frombuffer(data, dtype=dtype, count=count, offset=off).copy())
        off += size
    if off != len(data):
        raise CacheError(f"{path}: {len(data) - off} trailing bytes in cache")
    df, term_map, doc_ids, indptr, terms, values = parts
    return Corpus(
        n_docs=n,
        n_terms=d,
        indptr=indptr.astype(np.int64),
        terms=terms.astype(np.int32),
        values=values.astype(np.float64),
        df=df.astype(np.int64),
        term_map=term_map.astype(np.int64),
        doc_ids=doc_ids.astype(np.int64),
    )


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()
