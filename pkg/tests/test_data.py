"""Parsing, id remapping, splitting, and negative sampling."""

import numpy as np
import pytest

from gbrec.data import (
    BehaviorLog,
    BehaviorRecord,
    DatasetStats,
    IngestError,
    SocialGraph,
    ingest,
    load_split_dir,
    parse_behavior_file,
    parse_social_file,
    sample_negatives,
    save_split_dir,
    split_leave_one_out,
    user_interactions,
    write_behaviors,
    write_social,
)

import helpers


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return str(p)


# ---------------------------------------------------------------------------
# behavior grammar


def test_parse_behavior_basic(tmp_path):
    path = write(tmp_path, "b.tsv", "7\t3\t9,11\t1\n\n5\t3\t-\t0\n")
    records, dropped, deduped = parse_behavior_file(path)
    assert dropped == 0 and deduped == 0
    assert records == [
        BehaviorRecord(7, 3, (9, 11), True),
        BehaviorRecord(5, 3, (), False),
    ]


def test_parse_behavior_dedupes_participants_keeping_order(tmp_path):
    path = write(tmp_path, "b.tsv", "1\t2\t5,4,5,4,6\t1\n")
    records, dropped, deduped = parse_behavior_file(path)
    assert records[0].participants == (5, 4, 6)
    assert deduped == 2


def test_parse_behavior_drops_record_when_initiator_joins_itself(tmp_path):
    path = write(tmp_path, "b.tsv", "1\t2\t1,3\t1\n4\t2\t-\t1\n")
    records, dropped, _ = parse_behavior_file(path)
    assert dropped == 1
    assert [r.initiator for r in records] == [4]


@pytest.mark.parametrize(
    "line,fragment",
    [
        ("1\t2\t3", "expected 4"),
        ("1\t2\t3\t1\t9", "expected 4"),
        ("x\t2\t-\t1", "not an integer"),
        ("-1\t2\t-\t1", "negative id"),
        ("1\t2\t\t1", "empty participant"),
        ("1\t2\t-\t2", "success flag"),
        ("1\t2\t3,y\t0", "not an integer"),
    ],
)
def test_parse_behavior_rejects_malformed(tmp_path, line, fragment):
    path = write(tmp_path, "b.tsv", line + "\n")
    with pytest.raises(IngestError, match=fragment):
        parse_behavior_file(path)


def test_parse_errors_carry_file_and_line(tmp_path):
    path = write(tmp_path, "b.tsv", "1\t2\t-\t1\nbad line\n")
    with pytest.raises(IngestError, match=r"b\.tsv:2"):
        parse_behavior_file(path)


def test_parse_social(tmp_path):
    path = write(tmp_path, "s.tsv", "1\t2\n\n3\t4\n")
    np.testing.assert_array_equal(parse_social_file(path), [[1, 2], [3, 4]])
    with pytest.raises(IngestError, match="expected 2"):
        parse_social_file(write(tmp_path, "bad.tsv", "1\t2\t3\n"))


# ---------------------------------------------------------------------------
# ingest: dense remapping and statistics


def test_ingest_remaps_ids_densely_and_counts(tmp_path):
    behaviors = write(
        tmp_path,
        "b.tsv",
        "100\t50\t200,300\t1\n"  # users {100,200,300}, item 50
        "300\t70\t-\t0\n",
    )
    social = write(
        tmp_path,
        "s.tsv",
        "100\t300\n"  # kept
        "100\t100\n"  # self loop
        "100\t999\n"  # unknown user
        "300\t100\n",  # duplicate of the first after symmetrization
    )
    logb, graph, stats = ingest(behaviors, social)
    # dense ids follow sorted original ids: 100->0, 200->1, 300->2; 50->0, 70->1
    assert logb.num_users == 3 and logb.num_items == 2
    assert logb.records == [
        BehaviorRecord(0, 0, (1, 2), True),
        BehaviorRecord(2, 1, (), False),
    ]
    np.testing.assert_array_equal(stats.user_ids, [100, 200, 300])
    np.testing.assert_array_equal(stats.item_ids, [50, 70])
    assert stats.num_behaviors == 2
    assert stats.num_success == 1 and stats.num_failed == 1
    assert stats.num_social_edges == 1
    assert stats.dropped_social_edges == 1
    assert stats.dropped_social_self_loops == 1
    np.testing.assert_array_equal(graph.friends(0), [2])
    np.testing.assert_array_equal(graph.friends(2), [0])
    np.testing.assert_array_equal(graph.friends(1), [])


def test_ingest_without_social_file(tmp_path):
    behaviors = write(tmp_path, "b.tsv", "1\t1\t-\t1\n")
    logb, graph, stats = ingest(behaviors, None)
    assert graph.num_edges == 0
    assert stats.num_social_edges == 0


def test_ingest_empty_file_is_an_error(tmp_path):
    with pytest.raises(IngestError, match="no usable"):
        ingest(write(tmp_path, "b.tsv", "\n"), None)


def test_behavior_round_trip(tmp_path, rng):
    records = helpers.make_records(rng, 12, 9, 30)
    path = str(tmp_path / "b.tsv")
    write_behaviors(path, records)
    parsed, dropped, deduped = parse_behavior_file(path)
    assert parsed == records and dropped == 0 and deduped == 0


def test_social_round_trip(tmp_path, rng):
    graph = helpers.make_social(rng, 15, 25)
    path = str(tmp_path / "s.tsv")
    write_social(path, graph)
    rebuilt = SocialGraph.from_edges(15, parse_social_file(path))
    np.testing.assert_array_equal(rebuilt.indptr, graph.indptr)
    np.testing.assert_array_equal(rebuilt.indices, graph.indices)


# ---------------------------------------------------------------------------
# social graph container


def test_social_graph_symmetrizes_and_dedupes():
    pairs = np.array([[0, 1], [1, 0], [2, 2], [1, 3]])
    g = SocialGraph.from_edges(4, pairs)
    np.testing.assert_array_equal(g.friends(0), [1])
    np.testing.assert_array_equal(g.friends(1), [0, 3])
    np.testing.assert_array_equal(g.friends(2), [])
    assert g.num_edges == 2
    np.testing.assert_array_equal(g.degrees, [1, 2, 0, 1])
    np.testing.assert_array_equal(g.undirected_pairs(), [[0, 1], [1, 3]])
    with pytest.raises(IndexError):
        g.friends(4)


def test_user_interactions_covers_both_roles():
    log = BehaviorLog(
        [BehaviorRecord(0, 5, (1,), True), BehaviorRecord(1, 2, (0,), False)], 3, 6
    )
    touched = user_interactions(log)
    assert touched[0] == {5, 2}
    assert touched[1] == {5, 2}
    assert touched[2] == set()


# ---------------------------------------------------------------------------
# leave-one-out split


def build_log_with_counts(counts, num_items=30):
    """User u initiates counts[u] records, each on a distinct item."""
    records = []
    item = 0
    for u, c in enumerate(counts):
        for _ in range(c):
            records.append(BehaviorRecord(u, item % num_items, (), True))
            item += 1
    return BehaviorLog(records, len(counts), num_items)


def test_split_thresholds_by_initiator_count():
    log = build_log_with_counts([1, 2, 3, 5])
    split = split_leave_one_out(log, seed=0)
    assert 0 not in split.test and 0 not in split.validation  # one record: train only
    assert 1 in split.test and 1 not in split.validation
    assert 2 in split.test and 2 in split.validation
    assert 3 in split.test and 3 in split.validation
    # every user keeps at least one training record
    train_initiators = {r.initiator for r in split.train.records}
    assert train_initiators == {0, 1, 2, 3}


def test_split_held_out_records_leave_training(rng):
    records = helpers.make_records(rng, 10, 12, 80)
    log = BehaviorLog(records, 10, 12)
    split = split_leave_one_out(log, seed=3)
    assert len(split.train.records) + len(split.test) + len(split.validation) == len(records)
    train_pairs = [(r.initiator, r.item, r.participants, r.success) for r in split.train.records]
    for u, rec in list(split.test.items()) + list(split.validation.items()):
        assert rec.initiator == u
        key = (rec.initiator, rec.item, rec.participants, rec.success)
        # the held-out record occupies no training slot (multiset accounting)
        assert train_pairs.count(key) < [
            (r.initiator, r.item, r.participants, r.success) for r in records
        ].count(key)


def test_split_negatives_are_untouched_sorted_and_capped(rng):
    records = helpers.make_records(rng, 8, 10, 60)
    log = BehaviorLog(records, 8, 10)
    split = split_leave_one_out(log, seed=1, num_negatives=4)
    touched = user_interactions(log)
    for u in split.test:
        negs = split.eval_negatives[u]
        complement = sorted(set(range(10)) - touched[u])
        assert len(negs) == min(4, len(complement))
        assert set(negs) <= set(complement)
        assert list(negs) == sorted(negs)
        assert len(set(negs.tolist())) == len(negs)


def test_split_negatives_cap_at_full_complement():
    # user 0 touches items 0..3 of 6; only 2 candidates exist, fewer than requested
    records = [BehaviorRecord(0, i, (), True) for i in range(4)]
    log = BehaviorLog(records, 1, 6)
    split = split_leave_one_out(log, seed=0, num_negatives=999)
    np.testing.assert_array_equal(split.eval_negatives[0], [4, 5])


def test_split_deterministic_by_seed(rng):
    records = helpers.make_records(rng, 10, 12, 70)
    log = BehaviorLog(records, 10, 12)
    a = split_leave_one_out(log, seed=5)
    b = split_leave_one_out(log, seed=5)
    assert {u: r.item for u, r in a.test.items()} == {u: r.item for u, r in b.test.items()}
    for u in a.eval_negatives:
        np.testing.assert_array_equal(a.eval_negatives[u], b.eval_negatives[u])


# ---------------------------------------------------------------------------
# training-time negative sampling


def test_sample_negatives_avoid_touched_items(rng):
    records = helpers.make_records(rng, 6, 9, 40)
    log = BehaviorLog(records, 6, 9)
    touched = user_interactions(log)
    negs = sample_negatives(log, k=2, rng=np.random.default_rng(2))
    assert negs.shape == (len(records), 2)
    for rec, row in zip(records, negs):
        # draws avoid the user's touched items whenever at least k untouched
        # items exist; below that the only guarantee is avoiding the positive
        enough_free = 9 - len(touched[rec.initiator]) >= 2
        for n in row:
            if enough_free:
                assert n not in touched[rec.initiator]
            assert n != rec.item


def test_sample_negatives_distinct_within_row():
    # plenty of untouched items: draws within a row must not repeat
    records = [BehaviorRecord(0, 0, (), True)]
    log = BehaviorLog(records, 1, 50)
    negs = sample_negatives(log, k=10, rng=np.random.default_rng(0))
    assert len(set(negs[0].tolist())) == 10


def test_sample_negatives_when_user_touched_everything():
    records = [BehaviorRecord(0, i, (), True) for i in range(3)]
    log = BehaviorLog(records, 1, 3)
    negs = sample_negatives(log, k=2, rng=np.random.default_rng(0))
    for rec, row in zip(records, negs):
        assert all(n != rec.item for n in row)


# ---------------------------------------------------------------------------
# split directory round trip


def test_split_dir_round_trip(tmp_path, rng):
    records = helpers.make_records(rng, 10, 12, 70)
    log = BehaviorLog(records, 10, 12)
    social = helpers.make_social(rng, 10, 16)
    split = split_leave_one_out(log, seed=4)
    stats = DatasetStats(
        num_users=10,
        num_items=12,
        num_behaviors=len(records),
        num_success=sum(r.success for r in records),
        num_failed=sum(not r.success for r in records),
        num_social_edges=social.num_edges,
    )

    outdir = str(tmp_path / "split")
    save_split_dir(outdir, split, social, stats, seed=4)
    loaded, social2, stats2 = load_split_dir(outdir)

    assert loaded.num_users == split.num_users and loaded.num_items == split.num_items
    assert loaded.train.records == split.train.records
    assert loaded.test == split.test
    assert loaded.validation == split.validation
    assert sorted(loaded.eval_negatives) == sorted(split.eval_negatives)
    for u in split.eval_negatives:
        np.testing.assert_array_equal(loaded.eval_negatives[u], split.eval_negatives[u])
    np.testing.assert_array_equal(social2.indptr, social.indptr)
    np.testing.assert_array_equal(social2.indices, social.indices)
    assert stats2["num_behaviors"] == stats.num_behaviors
