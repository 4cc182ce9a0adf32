"""Sources of initial sentence embeddings.

The engine never runs a pretrained encoder itself; it reads fixed
per-sentence vectors from a provider. Two providers exist: a binary
embedding file produced offline, and a synthetic generator for tests
and benchmarks.

Embedding file layout (little-endian):

    header:  magic "SCEM", version u32, dim u32, count u64
    record:  id_len u32, id bytes (UTF-8), n_sentences u32,
             n_sentences * dim float32, row-major
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Dict, Iterable, List, Tuple

import numpy as np

from .domain import Article, SentenceMatrix

MAGIC = b"SCEM"
VERSION = 1

_HEADER = struct.Struct("<4sIIQ")
_U32 = struct.Struct("<I")


class EmbeddingFileError(ValueError):
    pass


class BadMagic(EmbeddingFileError):
    pass


class TruncatedFile(EmbeddingFileError):
    pass


class DuplicateArticle(EmbeddingFileError):
    pass


class NonFiniteValue(EmbeddingFileError):
    pass


class ProviderMiss(LookupError):
    def __init__(self, article_id: str):
        super().__init__(f"no embeddings for article {article_id!r}")
        self.article_id = article_id


class EmbeddingProvider:
    """Read-only map from article id to its sentence vectors."""

    def __init__(self, vectors: Dict[str, np.ndarray], dim: int):
        self._vectors = vectors
        self._dim = int(dim)

    @property
    def dim(self) -> int:
        return self._dim

    def __contains__(self, article_id: str) -> bool:
        return article_id in self._vectors

    def ids(self) -> List[str]:
        return list(self._vectors.keys())

    def sentence_count(self, article_id: str) -> int:
        if article_id not in self._vectors:
            raise ProviderMiss(article_id)
        return self._vectors[article_id].shape[0]

    def get(self, article_id: str, L: int) -> SentenceMatrix:
        """First min(n_sentences, L) rows, zero-padded with a prefix mask."""
        if article_id not in self._vectors:
            raise ProviderMiss(article_id)
        return SentenceMatrix.from_rows(self._vectors[article_id], L, article_id)


def write_embedding_file(path, records: Iterable[Tuple[str, np.ndarray]], dim: int) -> int:
    """Serialize (article_id, n x dim float array) records; returns count."""
    payload = bytearray()
    count = 0
    for article_id, rows in records:
        rows = np.asarray(rows, dtype=np.float64)
        if rows.ndim != 2 or rows.shape[1] != dim or rows.shape[0] < 1:
            raise EmbeddingFileError(
                f"record {article_id!r}: expected n x {dim} rows, got {rows.shape}"
            )
        if not np.isfinite(rows).all():
            raise NonFiniteValue(f"record {article_id!r} contains non-finite values")
        ident = article_id.encode("utf-8")
        payload += _U32.pack(len(ident))
        payload += ident
        payload += _U32.pack(rows.shape[0])
        payload += rows.astype("<f4").tobytes(order="C")
        count += 1
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, dim, count))
        fh.write(bytes(payload))
    return count


def load(path) -> EmbeddingProvider:
    """Load an embedding file, validating layout and values."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise TruncatedFile("file too short for header")
    magic, version, dim, count = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise BadMagic(f"bad magic {magic!r}")
    if version != VERSION:
        raise EmbeddingFileError(f"unsupported version {version}")
    if dim < 1:
        raise EmbeddingFileError("dim must be >= 1")

    vectors: Dict[str, np.ndarray] = {}
    offset = _HEADER.size
    for _ in range(count):
        if offset + 4 > len(blob):
            raise TruncatedFile("record header incomplete")
        (id_len,) = _U32.unpack_from(blob, offset)
        offset += 4
        if offset + id_len + 4 > len(blob):
            raise TruncatedFile("record id incomplete")
        article_id = blob[offset : offset + id_len].decode("utf-8")
        offset += id_len
        (n_sent,) = _U32.unpack_from(blob, offset)
        offset += 4
        if n_sent < 1:
            raise EmbeddingFileError(f"record {article_id!r} has zero sentences")
        nbytes = n_sent * dim * 4
        if offset + nbytes > len(blob):
            raise TruncatedFile(f"record {article_id!r} rows incomplete")
        rows = np.frombuffer(blob, dtype="<f4", count=n_sent * dim, offset=offset)
        offset += nbytes
        if article_id in vectors:
            raise DuplicateArticle(f"duplicate record for article {article_id!r}")
        if not np.isfinite(rows).all():
            raise NonFiniteValue(f"record {article_id!r} contains non-finite values")
        # widen to float64 once at load; disk stays float32
        vectors[article_id] = rows.astype(np.float64).reshape(n_sent, dim)
    if offset != len(blob):
        raise EmbeddingFileError("trailing bytes after last record")
    return EmbeddingProvider(vectors, dim)


@dataclass
class SyntheticSpec:
    """Generator recipe for labeled synthetic streams.

    ``topic_separation_deg`` is the exact pairwise angle between topic
    anchors (0 < angle <= 90). Sentence vectors are anchor + Gaussian
    noise with std ``noise_sigma`` per component.
    """

    n_topics: int
    topic_separation_deg: float
    noise_sigma: float
    sentences_per_article: Tuple[int, int]
    seed: int
    dim: int = 64
    days: int = 10
    articles_per_day: int = 20
    background_ratio: float = 0.0

    def __post_init__(self) -> None:
        lo, hi = self.sentences_per_article
        if self.n_topics < 1:
            raise ValueError("n_topics must be >= 1")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if not (0.0 <= self.background_ratio < 1.0):
            raise ValueError("background_ratio must be in [0, 1)")
        if not (0.0 < self.topic_separation_deg < 180.0):
            raise ValueError("topic_separation_deg must be in (0, 180)")
        if self.n_topics >= 2:
            c = float(np.cos(np.radians(self.topic_separation_deg)))
            if c < -1.0 / (self.n_topics - 1) - 1e-9:
                raise ValueError(
                    f"{self.n_topics} unit anchors cannot be pairwise separated by "
                    f"{self.topic_separation_deg} degrees"
                )
        if self.dim < self.n_topics + 1:
            raise ValueError("dim must be >= n_topics + 1 for anchor construction")
        if lo < 1 or hi < lo:
            raise ValueError("sentences_per_article must be (lo, hi) with 1 <= lo <= hi")
        if self.days < 1 or self.articles_per_day < 1:
            raise ValueError("days and articles_per_day must be >= 1")


def topic_anchors(spec: SyntheticSpec) -> np.ndarray:
    """Unit anchors with exact pairwise cosine cos(topic_separation_deg).

    Built from the target Gram matrix (feasible down to the regular
    simplex, cos = -1/(k-1)), then densified by a deterministic random
    rotation: real sentence embeddings spread mass over all coordinates,
    and the rotation preserves all pairwise geometry exactly.
    """
    k = spec.n_topics
    anchors = np.zeros((k, spec.dim))
    if k == 1:
        anchors[0, 0] = 1.0
    else:
        c = float(np.cos(np.radians(spec.topic_separation_deg)))
        gram = (1.0 - c) * np.eye(k) + c * np.ones((k, k))
        eigvals, eigvecs = np.linalg.eigh(gram)
        eigvals = np.clip(eigvals, 0.0, None)
        anchors[:, :k] = eigvecs * np.sqrt(eigvals)[None, :]
    rng = np.random.default_rng(spec.seed + 0x5EED)
    q, r = np.linalg.qr(rng.standard_normal((spec.dim, spec.dim)))
    q = q * np.sign(np.diag(r))[None, :]  # fix LAPACK sign ambiguity
    return anchors @ q.T


def synthesize(spec: SyntheticSpec) -> Tuple[List[Article], EmbeddingProvider]:
    """Deterministic labeled stream plus its in-memory provider.

    With a nonzero ``background_ratio``, part of each article's sentences
    is drawn around a single topic-neutral background anchor (generic
    newsroom language) instead of the article's topic anchor. Articles
    differ in how much boilerplate they carry: the per-article fraction
    is uniform in [0, 2 * background_ratio] (clipped below 1), and at
    least one sentence always stays topical.
    """
    rng = np.random.default_rng(spec.seed)
    anchors = topic_anchors(spec)
    # generic, topic-neutral direction: orthogonal to the whole topic span
    raw = np.random.default_rng(spec.seed + 0xB6).standard_normal(spec.dim)
    raw -= anchors.T @ np.linalg.lstsq(anchors.T, raw, rcond=None)[0]
    background = raw / np.linalg.norm(raw)
    lo, hi = spec.sentences_per_article
    step = 86_400 // (spec.articles_per_day + 1)

    articles: List[Article] = []
    vectors: Dict[str, np.ndarray] = {}
    idx = 0
    for day in range(spec.days):
        for k in range(spec.articles_per_day):
            topic = int(rng.integers(spec.n_topics))
            n_sent = int(rng.integers(lo, hi + 1))
            article_ratio = min(rng.uniform(0.0, 2.0 * spec.background_ratio), 0.999)
            is_background = rng.random(n_sent) < article_ratio
            is_background[int(rng.integers(n_sent))] = False
            bases = np.where(is_background[:, None], background[None, :], anchors[topic][None, :])
            rows = bases + spec.noise_sigma * rng.standard_normal((n_sent, spec.dim))
            article_id = f"a{idx:06d}"
            articles.append(
                Article(
                    id=article_id,
                    published_at=day * 86_400 + (k + 1) * step,
                    sentence_count=n_sent,
                    true_story_label=f"topic{topic}",
                )
            )
            vectors[article_id] = rows
            idx += 1
    return articles, EmbeddingProvider(vectors, spec.dim)
