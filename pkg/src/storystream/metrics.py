"""Clustering-quality and embedding-quality metrics.

All functions are pure. Clustering scores (B-cubed, ARI, AMI) compare a
predicted labeling against a reference labeling of the same items;
embedding scores (alignment, uniformity) assess representations on the
unit hypersphere, lower being better for both.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .numkernel import NORM_GUARD, ZeroVector


class LengthMismatch(ValueError):
    pass


class NoPositivePairs(ValueError):
    pass


class TooFew(ValueError):
    pass


@dataclass
class WindowScore:
    window_index: int
    n_articles: int
    n_pred_stories: int
    n_true_stories: int
    b3_precision: Optional[float] = None
    b3_recall: Optional[float] = None
    b3_f1: Optional[float] = None
    ari: Optional[float] = None
    ami: Optional[float] = None
    alignment: Optional[float] = None
    uniformity: Optional[float] = None

    def as_dict(self) -> dict:
        return {
            "window_index": self.window_index,
            "n_articles": self.n_articles,
            "n_pred_stories": self.n_pred_stories,
            "n_true_stories": self.n_true_stories,
            "b3_precision": self.b3_precision,
            "b3_recall": self.b3_recall,
            "b3_f1": self.b3_f1,
            "ari": self.ari,
            "ami": self.ami,
            "alignment": self.alignment,
            "uniformity": self.uniformity,
        }


def _check_lengths(pred: Sequence, truth: Sequence, minimum: int) -> int:
    if len(pred) != len(truth):
        raise LengthMismatch(f"label lists differ in length: {len(pred)} vs {len(truth)}")
    if len(pred) < minimum:
        raise LengthMismatch(f"need at least {minimum} items, got {len(pred)}")
    return len(pred)


def _contingency(pred: Sequence, truth: Sequence) -> np.ndarray:
    pred_ids = {label: i for i, label in enumerate(dict.fromkeys(pred))}
    true_ids = {label: i for i, label in enumerate(dict.fromkeys(truth))}
    table = np.zeros((len(pred_ids), len(true_ids)), dtype=np.int64)
    for p, t in zip(pred, truth):
        table[pred_ids[p], true_ids[t]] += 1
    return table


def b_cubed(pred: Sequence, truth: Sequence) -> Tuple[float, float, float]:
    """Item-averaged B-cubed precision/recall and their harmonic mean."""
    n = _check_lengths(pred, truth, 1)
    pair_counts: Dict[tuple, int] = {}
    pred_sizes: Dict[object, int] = {}
    true_sizes: Dict[object, int] = {}
    for p, t in zip(pred, truth):
        pair_counts[(p, t)] = pair_counts.get((p, t), 0) + 1
        pred_sizes[p] = pred_sizes.get(p, 0) + 1
        true_sizes[t] = true_sizes.get(t, 0) + 1
    precision = 0.0
    recall = 0.0
    for p, t in zip(pred, truth):
        overlap = pair_counts[(p, t)]
        precision += overlap / pred_sizes[p]
        recall += overlap / true_sizes[t]
    precision /= n
    recall /= n
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return precision, recall, f1


def ari(pred: Sequence, truth: Sequence) -> float:
    """Adjusted Rand index via the pair-counting contingency formula."""
    _check_lengths(pred, truth, 2)
    table = _contingency(pred, truth)
    n = table.sum()

    def comb2(x):
        return x * (x - 1) / 2.0

    sum_cells = comb2(table.astype(np.float64)).sum()
    sum_pred = comb2(table.sum(axis=1).astype(np.float64)).sum()
    sum_true = comb2(table.sum(axis=0).astype(np.float64)).sum()
    total = comb2(float(n))
    expected = sum_pred * sum_true / total
    maximum = 0.5 * (sum_pred + sum_true)
    if maximum == expected:
        # both partitions degenerate in the same way (all-ones or all-singleton)
        return 1.0
    return float((sum_cells - expected) / (maximum - expected))


def _entropy(sizes: np.ndarray, n: int) -> float:
    p = sizes[sizes > 0] / n
    return float(-(p * np.log(p)).sum())


def _mutual_info(table: np.ndarray, n: int) -> float:
    a = table.sum(axis=1)
    b = table.sum(axis=0)
    mi = 0.0
    for i in range(table.shape[0]):
        for j in range(table.shape[1]):
            nij = table[i, j]
            if nij > 0:
                mi += (nij / n) * math.log(n * nij / (a[i] * b[j]))
    return mi


def _expected_mutual_info(table: np.ndarray, n: int) -> float:
    """E[MI] under the permutation model (hypergeometric cell counts)."""
    a = table.sum(axis=1)
    b = table.sum(axis=0)
    lg = math.lgamma
    emi = 0.0
    for ai in a:
        for bj in b:
            lo = max(1, ai + bj - n)
            hi = min(ai, bj)
            for nij in range(lo, hi + 1):
                term = (nij / n) * math.log(n * nij / (ai * bj))
                log_p = (
                    lg(ai + 1)
                    + lg(bj + 1)
                    + lg(n - ai + 1)
                    + lg(n - bj + 1)
                    - lg(n + 1)
                    - lg(nij + 1)
                    - lg(ai - nij + 1)
                    - lg(bj - nij + 1)
                    - lg(n - ai - bj + nij + 1)
                )
                emi += term * math.exp(log_p)
    return emi


def _identical_partitions(table: np.ndarray) -> bool:
    # a permutation-structured contingency means the partitions coincide
    return (
        table.shape[0] == table.shape[1]
        and (np.count_nonzero(table, axis=0) == 1).all()
        and (np.count_nonzero(table, axis=1) == 1).all()
    )


def ami(pred: Sequence, truth: Sequence) -> float:
    """Adjusted mutual information, arithmetic-mean normalization."""
    n = _check_lengths(pred, truth, 2)
    table = _contingency(pred, truth)
    if _identical_partitions(table):
        # covers the all-singleton degenerate case where the adjusted
        # denominator vanishes exactly
        return 1.0
    h_pred = _entropy(table.sum(axis=1), n)
    h_true = _entropy(table.sum(axis=0), n)
    mi = _mutual_info(table, n)
    emi = _expected_mutual_info(table, n)
    denom = 0.5 * (h_pred + h_true) - emi
    # mirror the conventional guard against an (almost) vanishing denominator
    eps = np.finfo(np.float64).eps
    denom = max(denom, eps) if denom >= 0 else min(denom, -eps)
    return float((mi - emi) / denom)


def _normalize_rows(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1)
    if (norms < NORM_GUARD).any():
        raise ZeroVector("cannot L2-normalize a (near-)zero representation")
    return x / norms[:, None]


def alignment(groups: Mapping[object, np.ndarray] | Iterable[np.ndarray]) -> float:
    """Mean squared distance between normalized same-story pairs."""
    arrays = list(groups.values()) if isinstance(groups, Mapping) else list(groups)
    total = 0.0
    count = 0
    for arr in arrays:
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 2:
            continue
        f = _normalize_rows(arr)
        for i in range(f.shape[0]):
            for j in range(i + 1, f.shape[0]):
                d = f[i] - f[j]
                total += float(d @ d)
                count += 1
    if count == 0:
        raise NoPositivePairs("no story holds two or more articles")
    return total / count


def uniformity(reprs: np.ndarray) -> float:
    """log mean over distinct pairs of exp(-2 * squared distance), normalized reps."""
    reprs = np.asarray(reprs, dtype=np.float64)
    if reprs.ndim != 2 or reprs.shape[0] < 2:
        raise TooFew("uniformity needs at least 2 representations")
    f = _normalize_rows(reprs)
    sq = ((f[:, None, :] - f[None, :, :]) ** 2).sum(axis=2)
    iu = np.triu_indices(f.shape[0], k=1)
    return float(np.log(np.exp(-2.0 * sq[iu]).mean()))


_AVERAGED_FIELDS = (
    "b3_precision",
    "b3_recall",
    "b3_f1",
    "ari",
    "ami",
    "alignment",
    "uniformity",
)


def prequential_average(scores: Sequence[WindowScore]) -> dict:
    """Unweighted per-metric mean across windows; windows missing a metric
    are excluded from that metric's mean."""
    if len(scores) == 0:
        raise LengthMismatch("need at least one window score")
    summary: dict = {"n_windows": len(scores)}
    for name in _AVERAGED_FIELDS:
        values = [getattr(s, name) for s in scores if getattr(s, name) is not None]
        summary[name] = float(np.mean(values)) if values else None
    summary["n_articles"] = float(np.mean([s.n_articles for s in scores]))
    summary["n_pred_stories"] = float(np.mean([s.n_pred_stories for s in scores]))
    summary["n_true_stories"] = float(np.mean([s.n_true_stories for s in scores]))
    return summary


def score_window(
    window_index: int,
    pred: Sequence,
    truth: Sequence[Optional[str]],
    reprs: Optional[np.ndarray] = None,
) -> WindowScore:
    """Assemble a WindowScore; clustering metrics need every truth label."""
    n = len(pred)
    score = WindowScore(
        window_index=window_index,
        n_articles=n,
        n_pred_stories=len(set(pred)),
        n_true_stories=len({t for t in truth if t is not None}),
    )
    labeled = all(t is not None for t in truth) and n >= 1
    if labeled:
        p, r, f1 = b_cubed(pred, truth)
        score.b3_precision, score.b3_recall, score.b3_f1 = p, r, f1
        if n >= 2:
            score.ari = ari(pred, truth)
            score.ami = ami(pred, truth)
    if reprs is not None and labeled and n >= 2:
        groups: Dict[object, list] = {}
        for t, row in zip(truth, np.asarray(reprs)):
            groups.setdefault(t, []).append(row)
        group_arrays = {k: np.asarray(v) for k, v in groups.items()}
        if any(v.shape[0] >= 2 for v in group_arrays.values()):
            score.alignment = alignment(group_arrays)
        score.uniformity = uniformity(np.asarray(reprs))
    return score
