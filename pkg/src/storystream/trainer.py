"""Contrastive objective and Adam updates for the encoder.

One update runs per window slide: build a batch, re-encode every batch
matrix and every in-window story member on a fresh tape (centroids are
recomputed on the tape so gradients flow through both sides of each
article-story pair), backpropagate, apply Adam, then refresh the
window's cached representations.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import numkernel as nk
from . import replay
from .assigner import StoryCentroid
from .domain import EngineConfig
from .encoder import EncoderParams, encode_article_node
from .numkernel import Tape, Tensor
from .replay import TrainSample

log = logging.getLogger("storystream.trainer")

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class EmptyBatch(ValueError):
    pass


class NoStories(ValueError):
    pass


@dataclass
class OptimizerState:
    """Adam accumulators aligned with ``EncoderParams.tensors()`` order."""

    learning_rate: float
    first_moment: List[np.ndarray]
    second_moment: List[np.ndarray]
    step: int = 0
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS


def init_opt_state(params: EncoderParams, learning_rate: float) -> OptimizerState:
    tensors = params.tensors()
    return OptimizerState(
        learning_rate=learning_rate,
        first_moment=[np.zeros_like(t.data) for t in tensors],
        second_moment=[np.zeros_like(t.data) for t in tensors],
    )


def adam_step(params: EncoderParams, grads: Dict[Tensor, np.ndarray], state: OptimizerState) -> None:
    state.step += 1
    t = state.step
    bias1 = 1.0 - state.beta1**t
    bias2 = 1.0 - state.beta2**t
    for i, p in enumerate(params.tensors()):
        g = grads.get(p)
        if g is None:
            g = np.zeros_like(p.data)
        m = state.first_moment[i]
        v = state.second_moment[i]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.data = p.data - state.learning_rate * (m / bias1) / (np.sqrt(v / bias2) + state.eps)


ReprLike = Union[np.ndarray, Tensor]


def loss_from_reprs(
    sample_reprs: Sequence[Tuple[ReprLike, int]],
    centroids: Sequence[Tuple[int, ReprLike]],
    tau: float,
    tape: Optional[Tape] = None,
) -> Tensor:
    """Sum over samples of -log softmax(cos(sample, story)/tau) at the
    pseudo story, softmax taken over every active story."""
    if not sample_reprs:
        raise EmptyBatch("no training samples")
    if not centroids:
        raise NoStories("no active stories to contrast against")
    if tau <= 0:
        raise ValueError("tau must be positive")

    cent: List[Tuple[int, Tensor]] = [
        (sid, r if isinstance(r, Tensor) else nk.constant(r)) for sid, r in sorted(centroids)
    ]
    index_of = {sid: i for i, (sid, _) in enumerate(cent)}
    inv_tau = 1.0 / tau

    terms = []
    for r, sid in sample_reprs:
        if sid not in index_of:
            raise NoStories(f"pseudo story {sid} is not an active story")
        node = r if isinstance(r, Tensor) else nk.constant(r)
        sims = [nk.scale(nk.cosine(node, c, tape), inv_tau, tape) for _, c in cent]
        lse = nk.logsumexp(nk.concat_cols(sims, tape), tape)
        terms.append(nk.add(lse, nk.scale(sims[index_of[sid]], -1.0, tape), tape=tape))
    return terms[0] if len(terms) == 1 else nk.add(*terms, tape=tape)


def contrastive_loss(
    batch: Sequence[TrainSample],
    centroids: Sequence[StoryCentroid],
    params: EncoderParams,
    tau: float,
    tape: Optional[Tape] = None,
) -> Tensor:
    """Loss with centroids held fixed (evaluation form)."""
    if not batch:
        raise EmptyBatch("no training samples")
    node_cache: Dict[str, Tensor] = {}
    sample_reprs = []
    for s in batch:
        key = s.sentence_matrix.article_id
        if key not in node_cache:
            node_cache[key] = encode_article_node(s.sentence_matrix, params, tape)
        sample_reprs.append((node_cache[key], s.pseudo_story_id))
    return loss_from_reprs(
        sample_reprs, [(c.story_id, c.repr) for c in centroids], tau, tape
    )


def build_training_graph(
    window,
    batch: Sequence[TrainSample],
    params: EncoderParams,
    tau: float,
    tape: Optional[Tape],
) -> Tensor:
    """Full objective with story centroids recomputed on the tape from
    member encodings, so the story side of every pair receives gradient."""
    if not batch:
        raise EmptyBatch("no training samples")
    centroids = window.centroids()
    if not centroids:
        raise NoStories("window has no active stories")

    member_nodes: Dict[str, Tensor] = {}
    centroid_nodes: List[Tuple[int, Tensor]] = []
    for c in centroids:
        nodes = []
        for ca in window.members_of(c.story_id):
            node = member_nodes.get(ca.article.id)
            if node is None:
                node = encode_article_node(ca.matrix, params, tape)
                member_nodes[ca.article.id] = node
            nodes.append(node)
        summed = nodes[0] if len(nodes) == 1 else nk.add(*nodes, tape=tape)
        centroid_nodes.append((c.story_id, nk.scale(summed, 1.0 / len(nodes), tape)))

    sample_reprs = []
    aug_cache: Dict[str, Tensor] = {}
    for s in batch:
        key = s.sentence_matrix.article_id
        node = member_nodes.get(key)
        if node is None:
            node = aug_cache.get(key)
        if node is None:
            node = encode_article_node(s.sentence_matrix, params, tape)
            aug_cache[key] = node
        sample_reprs.append((node, s.pseudo_story_id))
    return loss_from_reprs(sample_reprs, centroid_nodes, tau, tape)


def train_step(
    batch: Sequence[TrainSample],
    params: EncoderParams,
    opt_state: OptimizerState,
    window,
    tau: float,
) -> float:
    """One forward, one backward, one Adam update; returns pre-update loss."""
    tape = Tape()
    loss = build_training_graph(window, batch, params, tau, tape)
    value = loss.item()
    grads = nk.backward(tape, loss, wrt=params.tensors())
    adam_step(params, grads, opt_state)
    return value


def update_epoch(
    window,
    params: EncoderParams,
    opt_state: OptimizerState,
    config: EngineConfig,
    rng: np.random.Generator,
) -> List[float]:
    """Per-slide model update: one batch + one step per epoch, then
    refresh every cached representation and centroid. Returns the loss
    per step; empty when the window cannot train (no articles/stories)."""
    if window.n_articles == 0 or not window.centroids():
        log.debug("skipping update: empty window")
        return []
    losses = []
    for _ in range(config.epochs):
        batch = replay.build_batch(window, config, rng)
        losses.append(train_step(batch, params, opt_state, window, config.tau))
    window.refresh(params)
    return losses
