"""Leave-one-out ranking evaluation with frozen negative candidates.

Each evaluated user has one held-out record; its item is scored against the
user's frozen negative list and ranked pessimistically (ties count against
the model: rank = #strictly-better + #equal among the negatives). Metrics:

* recall@K: fraction of users whose held-out item landed in the top K;
* ndcg@K:  mean of 1/log2(rank+2) for users with rank < K, else 0.

Keeping the negative lists frozen in the split makes comparisons between
models paired; ``negatives_digest`` fingerprints them so a report can prove
two evaluations saw the same candidates.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .data import BehaviorRecord, DatasetSplit

ScoreItemsFn = Callable[[int, np.ndarray], np.ndarray]


def rank_from_scores(test_score: float, negative_scores: np.ndarray) -> int:
    """Pessimistic rank of the test item among its negatives (0 = top)."""
    greater = int(np.sum(negative_scores > test_score))
    equal = int(np.sum(negative_scores == test_score))
    return greater + equal


def rank_test_item(score_items: ScoreItemsFn, split: DatasetSplit, user: int) -> int:
    record = split.test[user]
    negatives = split.eval_negatives[user]
    scores = score_items(user, np.concatenate([[record.item], negatives]))
    return rank_from_scores(float(scores[0]), scores[1:])


@dataclass
class MetricReport:
    ks: tuple[int, ...]
    recall: dict[int, float]
    ndcg: dict[int, float]
    num_users: int
    ranks: np.ndarray

    def __post_init__(self):
        ks = sorted(self.ks)
        for a, b in zip(ks, ks[1:]):
            assert self.recall[a] <= self.recall[b] + 1e-12, "recall must grow with K"
            assert self.ndcg[a] <= self.ndcg[b] + 1e-12, "ndcg must grow with K"
        for k in ks:
            assert self.ndcg[k] <= self.recall[k] + 1e-12, "per-user ndcg <= recall"

    def to_dict(self) -> dict:
        return {
            "num_users": self.num_users,
            "recall": {str(k): self.recall[k] for k in self.ks},
            "ndcg": {str(k): self.ndcg[k] for k in self.ks},
        }

    def text(self) -> str:
        lines = [f"users={self.num_users}"]
        for k in self.ks:
            lines.append(f"recall@{k}={self.recall[k]:.6f}\tndcg@{k}={self.ndcg[k]:.6f}")
        return "\n".join(lines)


def compute_metrics(ranks: np.ndarray, ks: tuple[int, ...]) -> MetricReport:
    ranks = np.asarray(ranks, dtype=np.int64)
    if ranks.size == 0:
        raise ValueError("no ranks to aggregate")
    recall = {}
    ndcg = {}
    gains = 1.0 / np.log2(ranks + 2.0)
    for k in ks:
        hit = ranks < k
        recall[k] = float(np.mean(hit))
        ndcg[k] = float(np.mean(np.where(hit, gains, 0.0)))
    return MetricReport(tuple(ks), recall, ndcg, int(ranks.size), ranks)


def evaluate_ranking(
    score_items: ScoreItemsFn,
    records: dict[int, BehaviorRecord],
    negatives: dict[int, np.ndarray],
    ks: tuple[int, ...],
) -> MetricReport:
    """Rank every user's held-out item; users iterate in ascending id order."""
    users = sorted(records)
    ranks = np.empty(len(users), dtype=np.int64)
    for i, u in enumerate(users):
        cand = np.concatenate([[records[u].item], negatives[u]])
        scores = score_items(u, cand)
        ranks[i] = rank_from_scores(float(scores[0]), scores[1:])
    return compute_metrics(ranks, ks)


def negatives_digest(negatives: dict[int, np.ndarray]) -> str:
    """Order-independent fingerprint of the frozen candidate lists."""
    h = hashlib.sha256()
    for u in sorted(negatives):
        h.update(str(u).encode())
        h.update(b":")
        h.update(np.ascontiguousarray(negatives[u], dtype=np.int64).tobytes())
        h.update(b";")
    return h.hexdigest()


# ---------------------------------------------------------------------------
# view-agreement diagnostics


@dataclass
class ViewSimilarity:
    cosines: np.ndarray
    histogram: np.ndarray
    bin_edges: np.ndarray
    skipped_zero_vectors: int


def view_similarity(a: np.ndarray, b: np.ndarray, bins: int = 20) -> ViewSimilarity:
    """Row-wise cosine similarity between two embedding matrices.

    Rows where either side is the zero vector have no defined angle; they
    are skipped and counted instead of polluting the histogram.
    """
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a.astype(np.float64), axis=1)
    nb = np.linalg.norm(b.astype(np.float64), axis=1)
    ok = (na > 0) & (nb > 0)
    dots = np.einsum("nd,nd->n", a[ok].astype(np.float64), b[ok].astype(np.float64))
    cos = np.clip(dots / (na[ok] * nb[ok]), -1.0, 1.0)
    hist, edges = np.histogram(cos, bins=bins, range=(-1.0, 1.0))
    return ViewSimilarity(cos, hist, edges, int(np.sum(~ok)))
