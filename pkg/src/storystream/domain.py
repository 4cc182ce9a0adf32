"""Shared value types of the engine.

Everything in this module is a plain value object: safe to copy between
threads, no hidden mutation. Validation of raw stream input lives here so
downstream modules can assume well-formed data.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

SECONDS_PER_DAY = 86_400


def day_index(published_at: float) -> int:
    """Whole-day bucket of a UTC timestamp: floor(ts / 86400)."""
    return int(published_at // SECONDS_PER_DAY)


class ConfigError(ValueError):
    """Invalid engine configuration."""


class StreamValidationError(ValueError):
    """A stream input violates the article-stream contract."""

    def __init__(self, message: str, article_id: str):
        super().__init__(message)
        self.article_id = article_id


class DuplicateId(StreamValidationError):
    pass


class NonChronological(StreamValidationError):
    pass


class EmptyArticle(StreamValidationError):
    pass


@dataclass(frozen=True)
class Article:
    """One news article in the stream (content lives with the provider)."""

    id: str
    published_at: int
    sentence_count: int
    true_story_label: Optional[str] = None

    @property
    def day(self) -> int:
        return day_index(self.published_at)


@dataclass
class SentenceMatrix:
    """Fixed-capacity sentence-embedding matrix of one article.

    ``rows`` is capacity x dim; real sentences occupy a prefix flagged by
    ``mask``, the remainder is zero padding.
    """

    rows: np.ndarray
    mask: np.ndarray
    article_id: str

    @classmethod
    def from_rows(cls, rows: np.ndarray, capacity: int, article_id: str) -> "SentenceMatrix":
        """Truncate or zero-pad ``rows`` to ``capacity``, keeping the first rows."""
        rows = np.asarray(rows, dtype=np.float64)
        if rows.ndim != 2 or rows.shape[0] < 1:
            raise ValueError(f"sentence rows must be a non-empty 2-D array, got {rows.shape}")
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        n = min(rows.shape[0], capacity)
        out = np.zeros((capacity, rows.shape[1]), dtype=np.float64)
        out[:n] = rows[:n]
        mask = np.zeros(capacity, dtype=bool)
        mask[:n] = True
        return cls(rows=out, mask=mask, article_id=article_id)

    @property
    def n_real(self) -> int:
        return int(self.mask.sum())

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    def real_rows(self) -> np.ndarray:
        return self.rows[: self.n_real]

    def validate(self) -> None:
        n = self.n_real
        if n < 1:
            raise ValueError(f"{self.article_id}: no real sentences")
        if self.mask[:n].all() != True or self.mask[n:].any():
            raise ValueError(f"{self.article_id}: mask is not a prefix")
        if n < self.rows.shape[0] and np.any(self.rows[n:]):
            raise ValueError(f"{self.article_id}: padding rows are not zero")


@dataclass
class Story:
    """A discovered cluster. ``member_ids`` is the full assignment history."""

    id: int
    member_ids: list
    created_at: int
    last_updated_at: int


@dataclass(frozen=True)
class Assignment:
    article_id: str
    story_id: int
    confidence: float
    is_new_story: bool


@dataclass
class EngineConfig:
    """All engine knobs. ``h_e`` always comes from the embedding provider."""

    h_e: int
    window_days: int = 7
    slide_days: int = 1
    L: int = 50
    h_c: Optional[int] = None  # defaults to h_e
    n_heads: int = 4
    delta: float = 0.5
    tau: float = 0.2
    epochs: int = 1
    batch_size: int = 256
    learning_rate: float = 1e-5
    rng_seed: int = 0
    cold_start_k: Optional[int] = None
    train: bool = True

    def __post_init__(self) -> None:
        if self.h_c is None:
            self.h_c = self.h_e
        if not (0.0 < self.delta < 1.0):
            raise ConfigError(f"delta must be in (0, 1), got {self.delta}")
        if self.tau <= 0.0:
            raise ConfigError(f"tau must be positive, got {self.tau}")
        if self.h_e % self.n_heads != 0:
            raise ConfigError(f"h_e={self.h_e} not divisible by n_heads={self.n_heads}")
        if self.batch_size % 2 != 0:
            raise ConfigError(f"batch_size must be even, got {self.batch_size}")
        for name in ("window_days", "slide_days", "L", "n_heads", "epochs", "batch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.learning_rate < 0.0:
            raise ConfigError("learning_rate must be >= 0")


def validate_stream(articles: Sequence[Article] | Iterable[Article]) -> None:
    """Raise on the first stream violation; return silently when clean.

    Checks: unique ids, non-decreasing timestamps, at least one sentence.
    """
    seen = set()
    prev_ts = None
    prev_id = None
    for a in articles:
        if a.id in seen:
            raise DuplicateId(f"duplicate article id {a.id!r}", a.id)
        seen.add(a.id)
        if a.sentence_count < 1:
            raise EmptyArticle(f"article {a.id!r} has no sentences", a.id)
        if prev_ts is not None and a.published_at < prev_ts:
            raise NonChronological(
                f"article {a.id!r} published before predecessor {prev_id!r}", a.id
            )
        prev_ts = a.published_at
        prev_id = a.id
