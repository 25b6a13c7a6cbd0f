"""Fixed-index nearest-neighbor retrieval over a reference text corpus.

The built-in representation is word-boundary-aware character n-gram TF-IDF
(default n in [3, 5]): each whitespace token is padded with one leading and
one trailing space and all length-n substrings of the padded token are
extracted; a padded token shorter than n emits the whole padded token once
for that n. Weighting is raw tf times idf = ln((1+N)/(1+df)) + 1 with
L2-normalized document vectors, searched exactly through an inverted index.

Externally produced dense vectors are consumed through ``DenseVectorSet`` and
searched with plain cosine; producing such vectors is out of scope.

Determinism: vocabulary ids follow sorted n-gram order and postings follow
corpus order, so the same corpus yields an identical index and identical
query rankings on every platform. Ties are always broken by ascending doc_id.
"""

from __future__ import annotations

import json
import math
import struct
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ctxdecode.textnorm import NormalizedText

INDEX_MAGIC = b"CTXIDX"
INDEX_FORMAT_VERSION = 1


@dataclass(frozen=True)
class RetrievalHit:
    doc_id: str
    similarity: float
    rank: int


def _text(t: NormalizedText | str) -> str:
    return t.text if isinstance(t, NormalizedText) else t


def char_wb_ngrams(text: NormalizedText | str, n_min: int = 3, n_max: int = 5) -> Counter:
    """Multiset of word-boundary-aware character n-grams.

    Raises ValueError unless 1 <= n_min <= n_max. Empty text yields an empty
    multiset.
    """
    if not (1 <= n_min <= n_max):
        raise ValueError(f"invalid n-gram range ({n_min}, {n_max})")
    grams: Counter = Counter()
    for token in _text(text).split():
        padded = " " + token + " "
        for n in range(n_min, n_max + 1):
            if len(padded) <= n:
                grams[padded] += 1
            else:
                for i in range(len(padded) - n + 1):
                    grams[padded[i : i + n]] += 1
    return grams


def cosine(u: dict[int, float], v: dict[int, float]) -> float:
    """Cosine similarity of two sparse vectors keyed by feature id."""
    nu = math.sqrt(sum(w * w for w in u.values()))
    nv = math.sqrt(sum(w * w for w in v.values()))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    dot = sum(w * v[f] for f, w in sorted(u.items()) if f in v)
    return dot / (nu * nv)


class TfIdfIndex:
    """Immutable TF-IDF character n-gram index; safe for concurrent queries."""

    def __init__(
        self,
        n_min: int,
        n_max: int,
        vocab: dict[str, int],
        idf: np.ndarray,
        doc_ids: list[str],
        doc_texts: list[str],
        doc_audio: list[str | None],
        doc_indptr: np.ndarray,
        feat_indices: np.ndarray,
        weights: np.ndarray,
    ):
        self.n_min = n_min
        self.n_max = n_max
        self.vocab = vocab
        self.idf = idf
        self.doc_ids = doc_ids
        self.doc_texts = doc_texts
        self.doc_audio = doc_audio
        self.doc_indptr = doc_indptr
        self.feat_indices = feat_indices
        self.weights = weights
        self._doc_pos = {doc_id: i for i, doc_id in enumerate(doc_ids)}
        self._build_postings()

    def _build_postings(self) -> None:
        # Invert the doc-major CSR into per-feature (doc index, weight) arrays.
        n_feat = len(self.vocab)
        doc_of_entry = np.repeat(np.arange(len(self.doc_ids), dtype=np.int64), np.diff(self.doc_indptr))
        order = np.argsort(self.feat_indices, kind="stable")
        sorted_feats = self.feat_indices[order]
        self._post_docs = doc_of_entry[order]
        self._post_weights = self.weights[order]
        self._post_indptr = np.searchsorted(sorted_feats, np.arange(n_feat + 1), side="left")

    def __len__(self) -> int:
        return len(self.doc_ids)

    def doc_meta(self, doc_id: str) -> tuple[str, str | None]:
        """Return (text, audio path) for an indexed document."""
        pos = self._doc_pos[doc_id]
        return self.doc_texts[pos], self.doc_audio[pos]

    def doc_vector(self, doc_id: str) -> dict[int, float]:
        """The stored L2-normalized vector of a document, as feature id -> weight."""
        pos = self._doc_pos[doc_id]
        lo, hi = self.doc_indptr[pos], self.doc_indptr[pos + 1]
        return {int(f): float(w) for f, w in zip(self.feat_indices[lo:hi], self.weights[lo:hi])}

    def featurize(self, text: NormalizedText | str) -> dict[int, float]:
        """TF-IDF vector of arbitrary text over this index's vocabulary and idf.

        N-grams outside the vocabulary are ignored; the result is not
        normalized (callers normalize as needed).
        """
        vec: dict[int, float] = {}
        for gram, tf in sorted(char_wb_ngrams(text, self.n_min, self.n_max).items()):
            fid = self.vocab.get(gram)
            if fid is not None:
                vec[fid] = tf * float(self.idf[fid])
        return vec

    def query(self, text: NormalizedText | str, k: int) -> list[RetrievalHit]:
        """Exact top-k by cosine; only documents sharing a feature are hits.

        A query with no in-vocabulary n-grams returns an empty list so callers
        can fall back to no-context decoding.
        """
        if k < 1:
            raise ValueError("k must be >= 1")
        qvec = self.featurize(text)
        if not qvec:
            return []
        qnorm = math.sqrt(sum(w * w for w in qvec.values()))

        scores = np.zeros(len(self.doc_ids))
        for fid, wq in qvec.items():
            lo, hi = self._post_indptr[fid], self._post_indptr[fid + 1]
            scores[self._post_docs[lo:hi]] += wq * self._post_weights[lo:hi]
        touched = np.nonzero(scores)[0]
        if touched.size == 0:
            return []
        sims = scores[touched] / qnorm

        if touched.size > k:
            # Exact top-k under ties: keep everything at or above the k-th
            # largest similarity, then order that small set.
            kth = np.partition(sims, sims.size - k)[sims.size - k]
            keep = sims >= kth
            touched, sims = touched[keep], sims[keep]
        ranked = sorted(
            ((float(s), self.doc_ids[d]) for s, d in zip(sims, touched)),
            key=lambda pair: (-pair[0], pair[1]),
        )[:k]
        return [RetrievalHit(doc_id=d, similarity=s, rank=r) for r, (s, d) in enumerate(ranked, start=1)]

    # -- persistence ---------------------------------------------------------

    def save(self, path: str | Path) -> None:
        """Write the versioned binary index plus a JSON sidecar of parameters."""
        path = Path(path)
        sorted_vocab = sorted(self.vocab, key=self.vocab.get)
        header = json.dumps(
            {
                "n_min": self.n_min,
                "n_max": self.n_max,
                "doc_count": len(self.doc_ids),
                "feature_count": len(self.vocab),
                "nnz": int(self.feat_indices.size),
                "vocab": sorted_vocab,
                "doc_ids": self.doc_ids,
                "doc_texts": self.doc_texts,
                "doc_audio": self.doc_audio,
            },
            ensure_ascii=False,
            sort_keys=True,
        ).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(INDEX_MAGIC)
            fh.write(struct.pack("<HQ", INDEX_FORMAT_VERSION, len(header)))
            fh.write(header)
            fh.write(self.idf.astype("<f8").tobytes())
            fh.write(self.doc_indptr.astype("<i8").tobytes())
            fh.write(self.feat_indices.astype("<i8").tobytes())
            fh.write(self.weights.astype("<f8").tobytes())
        sidecar = {
            "format_version": INDEX_FORMAT_VERSION,
            "n_min": self.n_min,
            "n_max": self.n_max,
            "doc_count": len(self.doc_ids),
            "feature_count": len(self.vocab),
        }
        Path(str(path) + ".meta.json").write_text(
            json.dumps(sidecar, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )

    @classmethod
    def load(cls, path: str | Path) -> "TfIdfIndex":
        """Load an index, checking format version and sidecar parameters."""
        path = Path(path)
        sidecar_path = Path(str(path) + ".meta.json")
        if not sidecar_path.exists():
            raise ValueError(f"missing index sidecar {sidecar_path}")
        sidecar = json.loads(sidecar_path.read_text(encoding="utf-8"))
        if sidecar.get("format_version") != INDEX_FORMAT_VERSION:
            raise ValueError(
                f"unsupported index format version {sidecar.get('format_version')!r}; "
                f"expected {INDEX_FORMAT_VERSION}"
            )
        with open(path, "rb") as fh:
            magic = fh.read(len(INDEX_MAGIC))
            if magic != INDEX_MAGIC:
                raise ValueError(f"{path} is not an index file")
            version, header_len = struct.unpack("<HQ", fh.read(10))
            if version != INDEX_FORMAT_VERSION:
                raise ValueError(f"unsupported index format version {version}")
            header = json.loads(fh.read(header_len).decode("utf-8"))
            for key in ("n_min", "n_max", "doc_count", "feature_count"):
                if sidecar.get(key) != header[key]:
                    raise ValueError(f"index sidecar disagrees with index on {key!r}")
            n_feat = header["feature_count"]
            n_docs = header["doc_count"]
            nnz = header["nnz"]
            idf = np.frombuffer(fh.read(8 * n_feat), dtype="<f8")
            doc_indptr = np.frombuffer(fh.read(8 * (n_docs + 1)), dtype="<i8")
            feat_indices = np.frombuffer(fh.read(8 * nnz), dtype="<i8")
            weights = np.frombuffer(fh.read(8 * nnz), dtype="<f8")
        vocab = {gram: fid for fid, gram in enumerate(header["vocab"])}
        return cls(
            n_min=header["n_min"],
            n_max=header["n_max"],
            vocab=vocab,
            idf=idf,
            doc_ids=header["doc_ids"],
            doc_texts=header["doc_texts"],
            doc_audio=header["doc_audio"],
            doc_indptr=doc_indptr,
            feat_indices=feat_indices,
            weights=weights,
        )


def build_index(
    corpus: Iterable[tuple[str, NormalizedText | str, str | None] | tuple[str, NormalizedText | str]],
    n_min: int = 3,
    n_max: int = 5,
) -> TfIdfIndex:
    """Build a TF-IDF index from (doc_id, text[, audio path]) entries.

    Raises on an empty corpus or a duplicate doc_id. The same corpus in the
    same order always produces a bit-identical index.
    """
    doc_ids: list[str] = []
    doc_texts: list[str] = []
    doc_audio: list[str | None] = []
    doc_grams: list[Counter] = []
    seen: set[str] = set()
    df: Counter = Counter()
    for entry in corpus:
        doc_id, text = entry[0], entry[1]
        audio = entry[2] if len(entry) > 2 else None
        if doc_id in seen:
            raise ValueError(f"duplicate doc_id {doc_id!r}")
        seen.add(doc_id)
        grams = char_wb_ngrams(text, n_min, n_max)
        doc_ids.append(doc_id)
        doc_texts.append(_text(text))
        doc_audio.append(audio)
        doc_grams.append(grams)
        df.update(grams.keys())
    if not doc_ids:
        raise ValueError("cannot build an index from an empty corpus")

    n_docs = len(doc_ids)
    vocab = {gram: fid for fid, gram in enumerate(sorted(df))}
    idf = np.empty(len(vocab))
    for gram, fid in vocab.items():
        idf[fid] = math.log((1 + n_docs) / (1 + df[gram])) + 1.0

    indptr = [0]
    feat_indices: list[int] = []
    weights: list[float] = []
    for grams in doc_grams:
        fids = sorted(vocab[g] for g in grams)
        row = [grams[gram] * idf[vocab[gram]] for gram in sorted(grams, key=vocab.get)]
        norm = math.sqrt(sum(w * w for w in row))
        if norm > 0.0:
            row = [w / norm for w in row]
        feat_indices.extend(fids)
        weights.extend(row)
        indptr.append(len(feat_indices))

    return TfIdfIndex(
        n_min=n_min,
        n_max=n_max,
        vocab=vocab,
        idf=idf,
        doc_ids=doc_ids,
        doc_texts=doc_texts,
        doc_audio=doc_audio,
        doc_indptr=np.asarray(indptr, dtype=np.int64),
        feat_indices=np.asarray(feat_indices, dtype=np.int64),
        weights=np.asarray(weights),
    )


class DenseVectorSet:
    """Externally produced fixed-dimension vectors keyed by doc_id."""

    def __init__(self, vectors: dict[str, Sequence[float]]):
        if not vectors:
            raise ValueError("DenseVectorSet requires at least one vector")
        dims = {len(v) for v in vectors.values()}
        if len(dims) != 1:
            raise ValueError(f"inconsistent vector dimensions: {sorted(dims)}")
        self.dimension = dims.pop()
        self.doc_ids = list(vectors)
        self._matrix = np.asarray([vectors[d] for d in self.doc_ids], dtype=np.float64)

    def __len__(self) -> int:
        return len(self.doc_ids)


def query_dense(vectors: DenseVectorSet, query_vec: Sequence[float], k: int) -> list[RetrievalHit]:
    """Top-k stored vectors by cosine to the query (zero-norm vectors score 0)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    q = np.asarray(query_vec, dtype=np.float64)
    if q.shape != (vectors.dimension,):
        raise ValueError(f"query dimension {q.shape} does not match {vectors.dimension}")
    qnorm = float(np.linalg.norm(q))
    doc_norms = np.linalg.norm(vectors._matrix, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        sims = vectors._matrix @ q / (doc_norms * qnorm)
    sims = np.where(np.isfinite(sims), sims, 0.0)
    ranked = sorted(
        ((float(s), d) for s, d in zip(sims, vectors.doc_ids)),
        key=lambda pair: (-pair[0], pair[1]),
    )[:k]
    return [RetrievalHit(doc_id=d, similarity=s, rank=r) for r, (s, d) in enumerate(ranked, start=1)]
