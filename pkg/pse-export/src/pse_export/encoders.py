"""Sentence encoders behind one tiny interface: encode(list[str]) -> n x dim.

Two families are supported:

* ``hashing:<dim>`` - a dependency-free deterministic encoder that maps
  each sentence to a unit vector seeded by its SHA-256. No semantics,
  fully reproducible; meant for tests, smoke runs, and offline
  environments.
* any other name is treated as a sentence-transformers checkpoint
  (e.g. ``sentence-transformers/all-MiniLM-L6-v2``), loaded lazily.
"""

from __future__ import annotations

import hashlib
from typing import List, Protocol

import numpy as np

DEFAULT_MODEL = "sentence-transformers/all-MiniLM-L6-v2"


class ModelLoadError(RuntimeError):
    pass


class SentenceEncoder(Protocol):
    dim: int

    def encode(self, sentences: List[str]) -> np.ndarray: ...


class HashingEncoder:
    """Deterministic pseudo-embeddings: unit Gaussian vector per sentence,
    seeded by the sentence's SHA-256. Identical text always maps to the
    identical vector, on any platform."""

    def __init__(self, dim: int):
        if dim < 2:
            raise ModelLoadError(f"hashing encoder dim must be >= 2, got {dim}")
        self.dim = dim

    def encode(self, sentences: List[str]) -> np.ndarray:
        out = np.empty((len(sentences), self.dim), dtype=np.float64)
        for i, text in enumerate(sentences):
            digest = hashlib.sha256(text.encode("utf-8")).digest()
            seed = int.from_bytes(digest[:8], "little")
            v = np.random.default_rng(seed).standard_normal(self.dim)
            out[i] = v / np.linalg.norm(v)
        return out


class SentenceTransformerEncoder:
    def __init__(self, model_name: str, device: str | None = None):
        try:
            from sentence_transformers import SentenceTransformer
        except ImportError as exc:
            raise ModelLoadError(
                "sentence-transformers is not installed; "
                "use a 'hashing:<dim>' model or install the 'models' extra"
            ) from exc
        try:
            self._model = SentenceTransformer(model_name, device=device)
        except Exception as exc:
            raise ModelLoadError(f"cannot load model {model_name!r}: {exc}") from exc
        self._model.eval()
        self.dim = int(self._model.get_sentence_embedding_dimension())

    def encode(self, sentences: List[str]) -> np.ndarray:
        # eval mode, no sampling: deterministic for fixed inputs
        return np.asarray(
            self._model.encode(sentences, show_progress_bar=False, convert_to_numpy=True)
        )


def resolve_model(name: str, device: str | None = None) -> SentenceEncoder:
    if name.startswith("hashing:"):
        try:
            dim = int(name.split(":", 1)[1])
        except ValueError as exc:
            raise ModelLoadError(f"bad hashing spec {name!r}, expected hashing:<dim>") from exc
        return HashingEncoder(dim)
    return SentenceTransformerEncoder(name, device=device)
