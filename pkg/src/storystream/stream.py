"""Sliding-window orchestration.

Drives the infer-then-train loop over an article stream: advance the
window, assign each new article against the active story centroids,
run one model update, refresh cached representations. The very first
slide is handled by a cold start that clusters mean-pooled sentence
embeddings around adaptively chosen seed articles.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from . import assigner, encoder, metrics, trainer
from .assigner import StoryCentroid
from .domain import (
    Article,
    Assignment,
    EngineConfig,
    NonChronological,
    SentenceMatrix,
    Story,
    day_index,
    validate_stream,
)
from .encoder import EncoderParams
from .numkernel import cos_sim
from .trainer import OptimizerState

log = logging.getLogger("storystream.stream")


class EmptyWindow(ValueError):
    pass


@dataclass
class CachedArticle:
    article: Article
    matrix: SentenceMatrix
    repr: np.ndarray          # current-model representation
    importance: np.ndarray    # encoder attention importance, full length L
    assignment: Assignment

    @property
    def day(self) -> int:
        return self.article.day


@dataclass
class _ActiveStory:
    story_id: int
    member_ids: List[str] = field(default_factory=list)  # in-window, ordered
    centroid: Optional[np.ndarray] = None


class WindowState:
    """Articles and active stories of the current day range."""

    def __init__(self, window_days: int, slide_days: int):
        self.window_days = window_days
        self.slide_days = slide_days
        self.start_day: Optional[int] = None
        self.end_day: Optional[int] = None
        self.articles: Dict[str, CachedArticle] = {}
        self.stories: Dict[int, _ActiveStory] = {}

    @property
    def n_articles(self) -> int:
        return len(self.articles)

    def cached(self) -> List[CachedArticle]:
        return list(self.articles.values())

    def members_of(self, story_id: int) -> List[CachedArticle]:
        return [self.articles[a] for a in self.stories[story_id].member_ids]

    def centroids(self) -> List[StoryCentroid]:
        out = []
        for sid in sorted(self.stories):
            st = self.stories[sid]
            out.append(StoryCentroid(sid, st.centroid, len(st.member_ids)))
        return out

    def add(self, cached: CachedArticle) -> None:
        sid = cached.assignment.story_id
        self.articles[cached.article.id] = cached
        story = self.stories.get(sid)
        if story is None:
            story = _ActiveStory(story_id=sid)
            self.stories[sid] = story
        story.member_ids.append(cached.article.id)
        self._recompute_centroid(sid)

    def _recompute_centroid(self, story_id: int) -> None:
        st = self.stories[story_id]
        st.centroid = assigner.story_representation(
            [self.articles[a].repr for a in st.member_ids]
        )

    def recompute_all_centroids(self) -> None:
        for sid in self.stories:
            self._recompute_centroid(sid)

    def advance(self, start_day: int, end_day: int) -> List[str]:
        """Move the day range; returns evicted article ids."""
        self.start_day, self.end_day = start_day, end_day
        evicted = [a for a, ca in self.articles.items() if ca.day < start_day]
        for a in evicted:
            ca = self.articles.pop(a)
            story = self.stories[ca.assignment.story_id]
            story.member_ids.remove(a)
        for sid, st in self.stories.items():
            if st.member_ids:
                self._recompute_centroid(sid)
        return evicted

    def expire(self) -> List[int]:
        """Drop stories with zero in-window members; returns their ids."""
        dead = [sid for sid, st in self.stories.items() if not st.member_ids]
        for sid in dead:
            del self.stories[sid]
        return dead

    def refresh(self, params: EncoderParams) -> None:
        """Re-encode every cached article with the current model, then
        rebuild every centroid (Eq. 5 is always a function of the
        current model)."""
        for ca in self.articles.values():
            out = encoder.encode_article(ca.matrix, params)
            ca.repr = out.article_repr
            ca.importance = out.attention_importance
        self.recompute_all_centroids()


@dataclass
class SlideResult:
    window_index: int
    end_day: int
    assignments: List[Assignment]
    losses: List[float]
    evicted_ids: List[str]
    expired_story_ids: List[int]
    score: Optional[metrics.WindowScore] = None


class StreamEngine:
    """Single-threaded orchestrator; owns every piece of mutable state."""

    def __init__(
        self,
        provider,
        config: EngineConfig,
        *,
        compute_scores: bool = True,
        probe: Optional[Callable[..., None]] = None,
    ):
        if provider.dim != config.h_e:
            raise ValueError(f"provider dim {provider.dim} != config h_e {config.h_e}")
        self.provider = provider
        self.config = config
        self.compute_scores = compute_scores
        self.probe = probe
        self.params = encoder.init_params(config.rng_seed, config.h_e, config.h_c, config.n_heads)
        self.opt_state: OptimizerState = trainer.init_opt_state(self.params, config.learning_rate)
        self.rng = np.random.default_rng(config.rng_seed + 1)
        self.window = WindowState(config.window_days, config.slide_days)
        self.stories: Dict[int, Story] = {}
        self.next_story_id = 0
        self.window_index = -1
        self.assignment_records: List[dict] = []

    # -- internals ---------------------------------------------------------

    def _emit(self, event: str, **payload) -> None:
        if self.probe is not None:
            self.probe(event, **payload)

    def _fetch(self, article: Article) -> SentenceMatrix:
        return self.provider.get(article.id, self.config.L)

    def _new_story(self, first_member: Article) -> int:
        sid = self.next_story_id
        self.next_story_id += 1
        self.stories[sid] = Story(
            id=sid,
            member_ids=[],
            created_at=first_member.published_at,
            last_updated_at=first_member.published_at,
        )
        return sid

    def _register(self, cached: CachedArticle) -> None:
        a = cached.assignment
        story = self.stories[a.story_id]
        story.member_ids.append(cached.article.id)
        story.last_updated_at = cached.article.published_at
        self.window.add(cached)
        self.assignment_records.append(
            {
                "article_id": a.article_id,
                "story_id": a.story_id,
                "confidence": a.confidence,
                "is_new_story": a.is_new_story,
                "window_index": self.window_index,
            }
        )
        self._emit("assign", article_id=a.article_id, story_id=a.story_id,
                   window_index=self.window_index)

    def _run_update(self) -> List[float]:
        if not self.config.train:
            return []
        losses = trainer.update_epoch(
            self.window, self.params, self.opt_state, self.config, self.rng
        )
        if losses:
            self._emit("train", window_index=self.window_index, steps=len(losses))
        return losses

    def _score(self) -> Optional[metrics.WindowScore]:
        if not self.compute_scores or self.window.n_articles == 0:
            return None
        cached = self.window.cached()
        pred = [ca.assignment.story_id for ca in cached]
        truth = [ca.article.true_story_label for ca in cached]
        reprs = np.asarray([ca.repr for ca in cached])
        return metrics.score_window(self.window_index, pred, truth, reprs)

    # -- spec operations ----------------------------------------------------

    def cold_start(
        self, first_window_articles: Sequence[Article], end_day: Optional[int] = None
    ) -> SlideResult:
        """Seed the very first window.

        Articles are embedded by mean pooling their sentence vectors;
        seed articles are picked by squared-distance weighting (restricted
        to articles not yet covered at cosine > delta, so the assignment
        invariant holds), adding seeds until coverage or until the
        configured fixed count; remaining articles join the nearest seed
        above delta or open their own story. One model update follows.
        """
        if not first_window_articles:
            raise EmptyWindow("cold start needs at least one article")
        if self.window_index >= 0:
            raise RuntimeError("cold_start may only run once, on the first slide")
        self.window_index = 0
        cfg = self.config

        arts = list(first_window_articles)
        if end_day is None:
            end_day = max(a.day for a in arts)
        self.window.advance(end_day - cfg.window_days + 1, end_day)

        matrices = [self._fetch(a) for a in arts]
        base = np.asarray([encoder.mean_pool_baseline(m) for m in matrices])

        seed_order = self._select_seeds(base)
        seed_set = set(seed_order)

        # seed stories first, in selection order; the logged confidence of
        # seed k is its best cosine against seeds 0..k-1 (<= delta by
        # construction), -1 for the very first
        assignments: Dict[int, Assignment] = {}
        seed_story_ids: List[int] = []
        for pos, idx in enumerate(seed_order):
            conf = -1.0
            if pos > 0:
                conf = max(cos_sim(base[idx], base[s]) for s in seed_order[:pos])
            sid = self._new_story(arts[idx])
            seed_story_ids.append(sid)
            assignments[idx] = Assignment(arts[idx].id, sid, conf, True)

        targets = [
            StoryCentroid(sid, base[idx], 1)
            for sid, idx in zip(seed_story_ids, seed_order)
        ]
        for idx, article in enumerate(arts):
            if idx in seed_set:
                continue
            decision = assigner.assign(
                base[idx],
                targets,
                cfg.delta,
                new_story_id=self.next_story_id,
                article_id=article.id,
            )
            if decision.is_new_story:
                sid = self._new_story(article)
                decision = Assignment(article.id, sid, decision.confidence, True)
                targets.append(StoryCentroid(sid, base[idx], 1))
            assignments[idx] = decision

        slide_assignments = []
        for idx, article in enumerate(arts):
            if self.config.train:
                out = encoder.encode_article(matrices[idx], self.params)
                importance = out.attention_importance
            else:
                importance = np.zeros(matrices[idx].rows.shape[0])
            cached = CachedArticle(
                article=article,
                matrix=matrices[idx],
                repr=base[idx],
                importance=importance,
                assignment=assignments[idx],
            )
            self._register(cached)
            slide_assignments.append(assignments[idx])

        losses = self._run_update()
        return SlideResult(
            window_index=0,
            end_day=end_day,
            assignments=slide_assignments,
            losses=losses,
            evicted_ids=[],
            expired_story_ids=[],
            score=self._score(),
        )

    def _select_seeds(self, base: np.ndarray) -> List[int]:
        """Squared-cosine-distance weighted seed picking over uncovered
        articles; stops at full coverage (cos > delta to some seed) or at
        the configured fixed seed count."""
        cfg = self.config
        n = base.shape[0]
        limit = min(cfg.cold_start_k, n) if cfg.cold_start_k is not None else n
        seeds = [int(self.rng.integers(n))]
        best = np.array([cos_sim(base[i], base[seeds[0]]) for i in range(n)])
        best[seeds[0]] = 1.0
        while len(seeds) < limit:
            uncovered = np.flatnonzero(best <= cfg.delta)
            if uncovered.size == 0:
                break
            weights = (1.0 - best[uncovered]) ** 2
            total = float(weights.sum())
            if total <= 0.0:
                probs = np.full(uncovered.size, 1.0 / uncovered.size)
            else:
                probs = weights / total
            pick = int(uncovered[self.rng.choice(uncovered.size, p=probs)])
            seeds.append(pick)
            sims = np.array([cos_sim(base[i], base[pick]) for i in range(n)])
            best = np.maximum(best, sims)
            best[pick] = 1.0
        return seeds

    def process_slide(self, new_articles: Sequence[Article]) -> SlideResult:
        """One slide: advance and evict, assign new articles in order,
        train, refresh. New articles must postdate the current window end."""
        if self.window_index < 0:
            raise RuntimeError("process_slide before cold_start")
        cfg = self.config
        self.window_index += 1
        new_end = self.window.end_day + cfg.slide_days
        for a in new_articles:
            if not (self.window.end_day < a.day <= new_end):
                raise NonChronological(
                    f"article {a.id!r} (day {a.day}) outside slide "
                    f"({self.window.end_day}, {new_end}]",
                    a.id,
                )

        evicted = self.window.advance(new_end - cfg.window_days + 1, new_end)
        expired = self.window.expire()
        self._emit("slide", window_index=self.window_index, evicted=len(evicted),
                   expired=len(expired))

        slide_assignments = []
        for article in new_articles:
            matrix = self._fetch(article)
            if self.config.train:
                out = encoder.encode_article(matrix, self.params)
                repr_now = out.article_repr
                importance = out.attention_importance
            else:
                # ablation: the learned encoder stays inert, the engine keeps
                # running on the cold-start mean-pooling representation
                repr_now = encoder.mean_pool_baseline(matrix)
                importance = np.zeros(matrix.rows.shape[0])
            decision = assigner.assign(
                repr_now,
                self.window.centroids(),
                cfg.delta,
                new_story_id=self.next_story_id,
                article_id=article.id,
            )
            if decision.is_new_story:
                sid = self._new_story(article)
                decision = Assignment(article.id, sid, decision.confidence, True)
            cached = CachedArticle(
                article=article,
                matrix=matrix,
                repr=repr_now,
                importance=importance,
                assignment=decision,
            )
            self._register(cached)
            slide_assignments.append(decision)

        losses = self._run_update() if self.window.n_articles > 0 else []
        return SlideResult(
            window_index=self.window_index,
            end_day=new_end,
            assignments=slide_assignments,
            losses=losses,
            evicted_ids=evicted,
            expired_story_ids=expired,
            score=self._score(),
        )

    def expire(self) -> List[int]:
        return self.window.expire()

    def run(self, articles: Sequence[Article]) -> Iterable[SlideResult]:
        """Validate, group by slide, and drive the whole stream."""
        arts = list(articles)
        validate_stream(arts)
        if not arts:
            return
        cfg = self.config
        by_day: Dict[int, List[Article]] = {}
        for a in arts:
            by_day.setdefault(a.day, []).append(a)
        first_day = min(by_day)
        last_day = max(by_day)

        end = first_day + cfg.slide_days - 1
        first_slide = [a for d in range(first_day, end + 1) for a in by_day.get(d, [])]
        yield self.cold_start(first_slide, end_day=end)
        while end < last_day:
            end += cfg.slide_days
            batch = [
                a
                for d in range(end - cfg.slide_days + 1, end + 1)
                for a in by_day.get(d, [])
            ]
            yield self.process_slide(batch)


def corpus_embedding_metrics(
    articles: Sequence[Article],
    provider,
    params: Optional[EncoderParams],
    L: int,
) -> Tuple[Optional[float], Optional[float]]:
    """Alignment/uniformity of one model over a whole labeled corpus.

    Encodes every article with the given (usually final) parameters and
    groups by true label; ``params=None`` evaluates the mean-pooling
    baseline instead. Returns (None, None) when labels are missing.
    """
    labeled = [a for a in articles if a.true_story_label is not None]
    if len(labeled) < 2:
        return None, None
    if params is None:
        reprs = np.asarray(
            [encoder.mean_pool_baseline(provider.get(a.id, L)) for a in labeled]
        )
    else:
        reprs = np.asarray(
            [encoder.encode_article(provider.get(a.id, L), params).article_repr for a in labeled]
        )
    groups: Dict[str, List[np.ndarray]] = {}
    for a, r in zip(labeled, reprs):
        groups.setdefault(a.true_story_label, []).append(r)
    group_arrays = {k: np.asarray(v) for k, v in groups.items()}
    align = None
    if any(v.shape[0] >= 2 for v in group_arrays.values()):
        align = metrics.alignment(group_arrays)
    return align, metrics.uniformity(reprs)
