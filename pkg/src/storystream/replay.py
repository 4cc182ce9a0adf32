"""Training-batch construction: confidence-weighted replay plus
importance-prioritized augmentation.

Both halves draw from the current window only, so every pseudo label
refers to a story that is still active.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .domain import EngineConfig, SentenceMatrix
from .numkernel import ZeroVector, cos_sim

REPLAY = "replay"
AUGMENTED = "augmented"


class EmptyWindow(ValueError):
    pass


@dataclass
class TrainSample:
    source: str  # REPLAY or AUGMENTED
    sentence_matrix: SentenceMatrix
    pseudo_story_id: int


@dataclass
class AugmentedArticle:
    matrix: SentenceMatrix
    provenance: Tuple[str, str]  # (top source id, bottom source id)


def _pair_confidence(article_repr: np.ndarray, centroid: np.ndarray) -> float:
    try:
        return cos_sim(article_repr, centroid)
    except ZeroVector:
        return -1.0


def sample_replay(window, count: int, rng: np.random.Generator) -> List[TrainSample]:
    """Draw (article, pseudo-story) pairs with replacement.

    Pair probability is proportional to the clamped-at-zero confidence
    between the cached article representation and the story centroid
    over the full article x active-story product. When every pair clamps
    to zero, falls back to each article with its assigned story,
    uniformly.
    """
    cached = window.cached()
    centroids = window.centroids()
    if not cached or not centroids:
        raise EmptyWindow("replay needs at least one article and one story in the window")

    pairs = []
    weights = []
    for ca in cached:
        for c in centroids:
            pairs.append((ca, c.story_id))
            weights.append(max(_pair_confidence(ca.repr, c.repr), 0.0))
    total = float(sum(weights))
    if total <= 0.0:
        pairs = [(ca, ca.assignment.story_id) for ca in cached]
        probs = np.full(len(pairs), 1.0 / len(pairs))
    else:
        probs = np.asarray(weights) / total
    picks = rng.choice(len(pairs), size=count, replace=True, p=probs)
    return [
        TrainSample(REPLAY, pairs[i][0].matrix, pairs[i][1]) for i in picks
    ]


def _importance_order(importance: Sequence[float]) -> List[int]:
    # descending importance, ties broken by original sentence position
    return sorted(range(len(importance)), key=lambda k: (-importance[k], k))


def p_aug(
    sm_top: SentenceMatrix,
    importance_top: Sequence[float],
    sm_bottom: SentenceMatrix,
    importance_bottom: Sequence[float],
) -> AugmentedArticle:
    """Synthesize an article from two same-story articles.

    Takes the ceil(n/2) most important sentences of the first and the
    floor(n/2) least important of the second; each half keeps descending
    importance order. Output is truncated to the matrix capacity.
    """
    m_top = sm_top.n_real
    m_bottom = sm_bottom.n_real
    order_top = _importance_order(list(importance_top)[:m_top])
    order_bottom = _importance_order(list(importance_bottom)[:m_bottom])
    take_top = order_top[: math.ceil(m_top / 2)]
    take_bottom = order_bottom[math.ceil(m_bottom / 2) :]

    rows = np.concatenate(
        [sm_top.real_rows()[take_top], sm_bottom.real_rows()[take_bottom]], axis=0
    )
    capacity = sm_top.rows.shape[0]
    matrix = SentenceMatrix.from_rows(
        rows, capacity, f"aug:{sm_top.article_id}+{sm_bottom.article_id}"
    )
    return AugmentedArticle(matrix=matrix, provenance=(sm_top.article_id, sm_bottom.article_id))


def build_batch(window, config: EngineConfig, rng: np.random.Generator) -> List[TrainSample]:
    """Half replay, half augmentation; augmentation falls back to replay
    when no story has two in-window members."""
    if window.n_articles == 0 or not window.centroids():
        raise EmptyWindow("cannot build a batch from an empty window")
    half = config.batch_size // 2
    samples = sample_replay(window, half, rng)

    eligible = sorted(
        c.story_id for c in window.centroids() if c.member_count_in_window >= 2
    )
    if not eligible:
        samples.extend(sample_replay(window, half, rng))
        return samples

    for _ in range(half):
        sid = eligible[int(rng.integers(len(eligible)))]
        members = window.members_of(sid)
        i, j = rng.choice(len(members), size=2, replace=False)
        top, bottom = members[int(i)], members[int(j)]
        aug = p_aug(
            top.matrix,
            top.importance[top.matrix.mask],
            bottom.matrix,
            bottom.importance[bottom.matrix.mask],
        )
        samples.append(TrainSample(AUGMENTED, aug.matrix, sid))
    return samples
