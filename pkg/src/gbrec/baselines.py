"""Propagation-free reference models sharing the training and eval pipeline.

Two baselines, both plain embedding tables scored without any graph
propagation:

* ``mf``: classic pairwise-ranked matrix factorization. Group structure is
  erased up front: every record is flattened to plain user-item pairs
  (initiator role, participant roles, or both), all marked successful, and
  the trainer is run with the social weight, the failure weight, and the
  two-role mixing all zeroed. Only ``mf_score``'s single inner product
  remains.

* ``gbmf``: the same embedding tables, but keeping the group-buying
  supervision -- original records, the composite two-role scoring rule, and
  the failure-flipped terms. Equivalent to the full model with propagation
  removed.

Both reuse the trainer's optimizers and the evaluator verbatim, so metric
deltas against the graph model reflect the model change only.
"""

from __future__ import annotations

import numpy as np

from .data import BehaviorLog, BehaviorRecord, SocialGraph
from .model import FlatParams, flat_embeddings

FLATTEN_ROLES = ("initiator", "participant", "both")


def flatten_interactions(log: BehaviorLog, roles: str = "both") -> BehaviorLog:
    """Convert group records to plain user-item pairs for single-view training.

    Each kept (user, item) occurrence becomes its own record with no
    participants and a success flag, so downstream sampling and loss code see
    an ordinary implicit-feedback dataset. Occurrences are kept with
    multiplicity: a user appearing in three groups for an item yields three
    pairs.
    """
    if roles not in FLATTEN_ROLES:
        raise ValueError(f"roles must be one of {FLATTEN_ROLES}, got {roles!r}")
    flat: list[BehaviorRecord] = []
    for rec in log.records:
        if roles in ("initiator", "both"):
            flat.append(BehaviorRecord(rec.initiator, rec.item, (), True))
        if roles in ("participant", "both"):
            for p in rec.participants:
                flat.append(BehaviorRecord(p, rec.item, (), True))
    return BehaviorLog(flat, log.num_users, log.num_items)


def _check_ids(params: FlatParams, user: int, item: int) -> None:
    P = params.user_emb.shape[0]
    Q = params.item_emb.shape[0]
    if not 0 <= user < P:
        raise IndexError(f"user id {user} out of range [0, {P})")
    if not 0 <= item < Q:
        raise IndexError(f"item id {item} out of range [0, {Q})")


def mf_score(params: FlatParams, user: int, item: int) -> float:
    """Single inner product between the raw user and item embeddings."""
    _check_ids(params, user, item)
    return float(params.user_emb[user] @ params.item_emb[item])


def gbmf_score(params: FlatParams, social: SocialGraph, alpha: float, user: int, item: int) -> float:
    """Composite two-role score over raw embeddings, no propagation.

    (1-alpha) times the user's own inner product plus alpha times the mean of
    the user's friends' inner products with the item; the friend term is zero
    when the user has no friends.
    """
    _check_ids(params, user, item)
    emb = flat_embeddings(params.user_emb, params.item_emb, social, alpha)
    return emb.predict(user, item)
