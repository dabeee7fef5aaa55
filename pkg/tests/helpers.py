"""Deterministic instance builders shared across test modules."""

from __future__ import annotations

import numpy as np

from gbrec.data import BehaviorLog, BehaviorRecord, SocialGraph
from gbrec.graphs import build_graphs
from gbrec.model import Hyperparams, init_params

import oracles


def make_records(
    rng: np.random.Generator,
    num_users: int,
    num_items: int,
    n: int,
    success_p: float = 0.6,
    max_participants: int = 3,
) -> list[BehaviorRecord]:
    records = []
    for _ in range(n):
        initiator = int(rng.integers(0, num_users))
        item = int(rng.integers(0, num_items))
        k = int(rng.integers(0, max_participants + 1))
        pool = np.array([u for u in range(num_users) if u != initiator])
        take = min(k, len(pool))
        participants = tuple(int(p) for p in rng.choice(pool, size=take, replace=False)) if take else ()
        records.append(BehaviorRecord(initiator, item, participants, bool(rng.random() < success_p)))
    return records


def make_social(rng: np.random.Generator, num_users: int, n_pairs: int) -> SocialGraph:
    return SocialGraph.from_edges(num_users, rng.integers(0, num_users, size=(n_pairs, 2)))


def edges_from_records(records, failed_participant_edges: bool = True):
    """Re-derive the three edge sets straight from the record rules."""
    launch, join, share = set(), set(), set()
    for r in records:
        launch.add((r.initiator, r.item))
        if r.success or failed_participant_edges:
            for p in r.participants:
                join.add((p, r.item))
                share.add((r.initiator, p))
    return sorted(launch), sorted(join), sorted(share)


def small_instance(
    num_users: int = 10,
    num_items: int = 8,
    n_records: int = 15,
    n_social_pairs: int = 14,
    data_seed: int = 42,
    param_seed: int = 3,
    hp: Hyperparams | None = None,
    dtype=np.float64,
    clear_kinks: bool = False,
):
    """One self-consistent toy problem: log, graphs, params, and oracle edges.

    With ``clear_kinks`` the bias columns are nudged so no activation input
    sits near the kink (required before finite-difference checks).
    """
    if hp is None:
        hp = Hyperparams(
            dim=4, num_layers=2, alpha=0.6, beta=0.05, l2_coeff=1e-3, social_reg_coeff=1e-3
        )
    rng = np.random.default_rng(data_seed)
    records = make_records(rng, num_users, num_items, n_records)
    log = BehaviorLog(records, num_users, num_items)
    social = make_social(rng, num_users, n_social_pairs)
    bundle = build_graphs(log, hp.failed_participant_edges)
    params = init_params(num_users, num_items, hp, seed=param_seed, dtype=dtype)
    launch_e, join_e, share_e = edges_from_records(records, hp.failed_participant_edges)
    if clear_kinks:
        weights = {n: getattr(params, n) for n in params.tensors() if n.startswith("w_")}
        biases = {"w_" + n[2:]: getattr(params, n) for n in params.tensors() if n.startswith("b_")}
        oracles.clear_activation_kinks(
            num_users, num_items, launch_e, join_e, share_e,
            params.user_emb, params.item_emb, weights, biases, hp.num_layers,
        )
    return {
        "log": log,
        "records": records,
        "social": social,
        "bundle": bundle,
        "params": params,
        "hp": hp,
        "edges": (launch_e, join_e, share_e),
        "rng": rng,
    }


def oracle_blocks(inst) -> dict:
    """Dense-oracle forward pass over a ``small_instance`` dict."""
    launch_e, join_e, share_e = inst["edges"]
    params, hp = inst["params"], inst["hp"]
    weights = {n: getattr(params, n) for n in params.tensors() if n.startswith("w_")}
    biases = {"w_" + n[2:]: getattr(params, n) for n in params.tensors() if n.startswith("b_")}
    return oracles.dense_forward_oracle(
        inst["log"].num_users,
        inst["log"].num_items,
        launch_e,
        join_e,
        share_e,
        params.user_emb,
        params.item_emb,
        weights,
        biases,
        hp.num_layers,
        hp.activation,
        hp.activation_slope,
    )
