"""Story centroids and the article-to-story assignment decision."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .domain import Assignment
from .numkernel import NORM_GUARD, ZeroVector, cos_sim


class EmptyStory(ValueError):
    pass


@dataclass
class StoryCentroid:
    story_id: int
    repr: np.ndarray
    member_count_in_window: int


def story_representation(members_in_window: Sequence[np.ndarray]) -> np.ndarray:
    """Componentwise mean of the in-window member representations."""
    if len(members_in_window) == 0:
        raise EmptyStory("story has no members in the current window")
    return np.mean(np.asarray(members_in_window, dtype=np.float64), axis=0)


def assign(
    article_repr: np.ndarray,
    centroids: Sequence[StoryCentroid],
    delta: float,
    *,
    new_story_id: int,
    article_id: str = "",
) -> Assignment:
    """Confidence-thresholded nearest-centroid decision.

    Joins the highest-confidence story when its cosine exceeds ``delta``
    (ties break toward the lowest story id), otherwise opens a new story
    carrying the best confidence seen, or -1 when no story exists.
    A degenerate zero-norm centroid is unassignable and scores -1.
    """
    article_repr = np.asarray(article_repr, dtype=np.float64)
    if float(np.linalg.norm(article_repr)) < NORM_GUARD:
        raise ZeroVector("article representation has (near-)zero norm")

    best_id = None
    best_conf = -1.0
    for c in sorted(centroids, key=lambda s: s.story_id):
        if float(np.linalg.norm(c.repr)) < NORM_GUARD:
            conf = -1.0
        else:
            conf = cos_sim(article_repr, c.repr)
        if best_id is None or conf > best_conf:
            best_id = c.story_id
            best_conf = conf

    if best_id is not None and best_conf > delta:
        return Assignment(article_id, best_id, best_conf, False)
    return Assignment(article_id, new_story_id, best_conf if best_id is not None else -1.0, True)
