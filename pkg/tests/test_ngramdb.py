"""Tests for database build, merge, query and ensembles."""

import pytest

from typegram.corpus.types import Bitness, Split, Vocabulary
from typegram.errors import EmptyCorpusError, ParameterMismatchError
from typegram.lexer.contexts import variable_window
from typegram.lexer.tokens import tokenize
from typegram.ngramdb.builder import (
    SHARD_BINARIES,
    build_database,
    build_ensemble,
    merge_databases,
)
from typegram.ngramdb.database import NGramDatabase
from typegram.ngramdb.ensemble import DatabaseEnsemble, check_portfolio
from typegram.ngramdb.labels import U32_MAX, LabelTable, sort_pairs

from tests.factories import make_corpus, make_function, make_signature_library

KEY = 0xDEADBEEF


def _db(entries, names, frequency=None, n=2, bitness=Bitness.B64):
    labels = LabelTable(tuple(names), tuple(frequency or [1] * len(names)))
    return NGramDatabase(
        n=n,
        bitness=bitness,
        vocabulary=Vocabulary.TYPES,
        labels=labels,
        entries={key: sort_pairs(pairs) for key, pairs in entries.items()},
    )


def _key(code, identifier, n, occurrence=0):
    stream = tokenize(code)
    return variable_window(stream, stream.occurrences[identifier][occurrence], n).key


def test_identical_contexts_accumulate():
    corpus = make_corpus([make_function("a x b a x b", {"x": "int32_t"})])
    db = build_database(corpus, 1, Bitness.B64)
    assert len(db) == 1
    result = db.query(_key("a x b", "x", 1))
    assert result.candidates == ((db.labels.ids["int32_t"], 2),)
    assert result.distinct_label_count == 1
    assert db.labels.frequency_of(0) == 2


def test_same_key_different_labels():
    corpus = make_corpus(
        [
            make_function("a x b", {"x": "int32_t"}),
            make_function("a y b", {"y": "char*"}, address=0x2000),
        ]
    )
    db = build_database(corpus, 1, Bitness.B64)
    assert len(db) == 1
    result = db.query(_key("a x b", "x", 1))
    assert result.distinct_label_count == 2
    assert db.labels.names == ("char*", "int32_t")
    assert result.candidates == ((0, 1), (1, 1))


def test_only_train_split_is_indexed():
    corpus = make_corpus(
        [
            make_function("a x b", {"x": "int32_t"}),
            make_function("c x d", {"x": "S"}, address=0x2000, split=Split.TEST),
        ]
    )
    db = build_database(corpus, 1, Bitness.B64)
    assert db.labels.names == ("int32_t",)
    assert db.query(_key("c x d", "x", 1)).candidates == ()


def test_build_for_missing_bitness_fails():
    corpus = make_corpus(
        [make_function("a x b", {"x": "int32_t"}, bitness=Bitness.B32)]
    )
    with pytest.raises(EmptyCorpusError):
        build_database(corpus, 2, Bitness.B64)


def test_keys_are_invisible_across_bitness():
    corpus = make_corpus(
        [
            make_function("a x b", {"x": "int32_t"}, bitness=Bitness.B32),
            make_function("c x d", {"x": "int64_t"}, address=0x2000),
        ]
    )
    db32 = build_database(corpus, 1, Bitness.B32)
    db64 = build_database(corpus, 1, Bitness.B64)
    assert db64.query(_key("a x b", "x", 1)).candidates == ()
    assert db32.query(_key("c x d", "x", 1)).candidates == ()
    assert db32.labels.names == ("int32_t",)


def test_signature_annotations_skipped_in_type_build(caplog):
    corpus = make_corpus(
        [make_function("a x b", {"x": "sigA"})],
        signature_library=make_signature_library(["sigA"]),
    )
    with caplog.at_level("WARNING"):
        db = build_database(corpus, 1, Bitness.B64)
    assert len(db) == 0
    assert "other vocabulary" in caplog.text


def test_query_top_k_with_tie_order():
    db = _db({KEY: [(0, 5), (2, 2), (1, 2), (3, 1)]}, ["A", "B", "C", "D"])
    result = db.query(KEY, 3)
    assert result.candidates == ((0, 5), (1, 2), (2, 2))
    assert result.distinct_label_count == 4


def test_query_absent_key():
    db = _db({KEY: [(0, 1)]}, ["A"])
    result = db.query(KEY + 1)
    assert result.candidates == ()
    assert result.distinct_label_count == 0


def test_query_k1_tie_prefers_lower_id():
    db = _db({KEY: [(1, 5), (0, 5)]}, ["A", "B"])
    assert db.query(KEY, 1).candidates == ((0, 5),)


def test_query_rejects_k_below_one():
    with pytest.raises(ValueError):
        _db({}, []).query(KEY, 0)


def test_merge_sums_counts():
    a = _db({KEY: [(0, 3)]}, ["T"], [3])
    b = _db({KEY: [(0, 3)]}, ["T"], [3])
    merged = merge_databases(a, b)
    assert merged.entries == {KEY: ((0, 6),)}
    assert merged.labels.frequency == (6,)


def test_merge_with_empty_is_identity():
    db = _db({KEY: [(0, 3), (1, 1)], 7: [(1, 2)]}, ["A", "B"], [3, 3])
    empty = NGramDatabase(n=2, bitness=Bitness.B64, vocabulary=Vocabulary.TYPES)
    merged = merge_databases(db, empty)
    assert merged.entries == db.entries
    assert merged.labels == db.labels


def test_merge_is_commutative_after_relabelling():
    a = _db({KEY: [(0, 2), (1, 1)]}, ["A", "B"], [2, 1])
    b = _db({KEY: [(0, 4)], 9: [(1, 1)]}, ["B", "C"], [4, 1])
    ab, ba = merge_databases(a, b), merge_databases(b, a)
    assert ab.labels == ba.labels == LabelTable(("A", "B", "C"), (2, 5, 1))
    assert ab.entries == ba.entries
    assert ab.entries[KEY] == ((1, 5), (0, 2))


def test_merge_saturates_counts():
    a = _db({KEY: [(0, U32_MAX - 1)]}, ["T"])
    b = _db({KEY: [(0, 5)]}, ["T"])
    assert merge_databases(a, b).entries[KEY] == ((0, U32_MAX),)


def test_merge_rejects_parameter_mismatch():
    with pytest.raises(ParameterMismatchError):
        merge_databases(_db({}, [], n=2), _db({}, [], n=4))
    with pytest.raises(ParameterMismatchError):
        merge_databases(_db({}, []), _db({}, [], bitness=Bitness.B32))


def test_ensemble_members_share_labels():
    corpus = make_corpus(
        [
            make_function("a x b ; c y d", {"x": "int32_t", "y": "S"}),
            make_function("e z f", {"z": "char*"}, address=0x2000),
        ]
    )
    ensemble = build_ensemble(corpus, (1, 2, 4), Bitness.B64)
    assert ensemble.ns == (1, 2, 4)
    assert ensemble.n_max == 4
    assert ensemble.labels.names == ("S", "char*", "int32_t")
    assert all(db.labels == ensemble.labels for db in ensemble.databases)


def test_sharded_build_matches_single_process():
    functions = [
        make_function(
            f"p{i % 5} x = q{i % 3} ;",
            {"x": ("int32_t", "char*", "S")[i % 3]},
            binary_id=f"bin{i}",
        )
        for i in range(SHARD_BINARIES * 2 + 3)
    ]
    corpus = make_corpus(functions)
    single = build_ensemble(corpus, (1, 2), Bitness.B64, threads=1)
    sharded = build_ensemble(corpus, (1, 2), Bitness.B64, threads=3)
    for a, b in zip(single.databases, sharded.databases):
        assert a.labels == b.labels
        assert a.entries == b.entries


@pytest.mark.parametrize("portfolio", [(), (4, 2), (2, 2), (0, 2)])
def test_check_portfolio_rejects(portfolio):
    with pytest.raises(ValueError):
        check_portfolio(portfolio)


def test_ensemble_rejects_mixed_members():
    a = _db({}, ["A"], n=2)
    b = _db({}, ["A"], n=4, bitness=Bitness.B32)
    with pytest.raises(ParameterMismatchError):
        DatabaseEnsemble((a, b), a.labels, Bitness.B64, Vocabulary.TYPES)
    c = _db({}, ["B"], n=4)
    with pytest.raises(ParameterMismatchError):
        DatabaseEnsemble((a, c), a.labels, Bitness.B64, Vocabulary.TYPES)
    unsorted = (_db({}, ["A"], n=4), a)
    with pytest.raises(ParameterMismatchError):
        DatabaseEnsemble(unsorted, a.labels, Bitness.B64, Vocabulary.TYPES)
