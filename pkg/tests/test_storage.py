"""Tests for database files, memory-mapped reads and ensemble manifests."""

import json
import pickle
import random
import time

import pytest

from typegram.corpus.types import Bitness, Vocabulary
from typegram.errors import DatabaseFormatError, ParameterMismatchError
from typegram.ngramdb.builder import build_ensemble
from typegram.ngramdb.ensemble import (
    MANIFEST_NAME,
    database_filename,
    load_ensemble,
    save_ensemble,
)
from typegram.ngramdb.storage import HEADER, HEADER_SIZE, open_mapped, serialize

from tests.factories import make_corpus, random_database, unique_context_functions


def _assert_query_identical(db, mapped):
    assert len(mapped) == len(db)
    assert list(mapped.keys()) == sorted(db.entries)
    for key, pairs in db.entries.items():
        assert tuple(mapped._lookup(key)) == pairs
        assert mapped.query(key, 3) == db.query(key, 3)


def test_roundtrip_is_query_identical(tmp_path):
    db = random_database(1000)
    path = tmp_path / "db.tgdb"
    written = serialize(db, path)
    assert written == path.stat().st_size
    with open_mapped(path) as mapped:
        assert (mapped.n, mapped.bitness, mapped.vocabulary) == (
            4,
            Bitness.B32,
            Vocabulary.SIGNATURES,
        )
        assert mapped.labels == db.labels
        assert mapped.pair_count == db.pair_count
        _assert_query_identical(db, mapped)
        assert mapped.query(0, 3).candidates == ()


def test_flipped_byte_fails_checksum(tmp_path):
    path = tmp_path / "db.tgdb"
    serialize(random_database(50), path)
    image = bytearray(path.read_bytes())
    image[-1] ^= 0xFF
    path.write_bytes(bytes(image))
    with pytest.raises(DatabaseFormatError, match="checksum"):
        open_mapped(path)
    # Without verification the header still parses.
    with open_mapped(path, verify=False) as mapped:
        assert len(mapped) == 50


def test_truncated_file_rejected(tmp_path):
    path = tmp_path / "db.tgdb"
    serialize(random_database(50), path)
    image = path.read_bytes()
    path.write_bytes(image[: len(image) // 2])
    with pytest.raises(DatabaseFormatError, match="truncated"):
        open_mapped(path)
    path.write_bytes(image[: HEADER_SIZE - 1])
    with pytest.raises(DatabaseFormatError, match="truncated"):
        open_mapped(path)


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "db.tgdb"
    serialize(random_database(5), path)
    image = bytearray(path.read_bytes())
    image[:4] = b"NOPE"
    path.write_bytes(bytes(image))
    with pytest.raises(DatabaseFormatError, match="not a typegram database"):
        open_mapped(path)


def test_missing_file_rejected(tmp_path):
    with pytest.raises(DatabaseFormatError):
        open_mapped(tmp_path / "absent.tgdb")


def test_mapped_database_pickles_by_path(tmp_path):
    db = random_database(20)
    path = tmp_path / "db.tgdb"
    serialize(db, path)
    with open_mapped(path) as mapped:
        clone = pickle.loads(pickle.dumps(mapped))
        try:
            _assert_query_identical(db, clone)
        finally:
            clone.close()


def test_ensemble_manifest_roundtrip(tmp_path):
    corpus = make_corpus(unique_context_functions(10))
    ensemble = build_ensemble(corpus, (1, 2, 8), Bitness.B64)
    manifest = save_ensemble(ensemble, tmp_path / "types-64")
    assert manifest.name == MANIFEST_NAME
    member = database_filename(Vocabulary.TYPES, Bitness.B64, 8)
    assert member == "types-64-n8.tgdb"
    assert (tmp_path / "types-64" / member).exists()
    loaded = load_ensemble(manifest)
    try:
        assert loaded.ns == (1, 2, 8)
        assert loaded.labels == ensemble.labels
        for built, mapped in zip(ensemble.databases, loaded.databases):
            _assert_query_identical(built, mapped)
    finally:
        loaded.close()


def test_manifest_disagreeing_with_member_rejected(tmp_path):
    corpus = make_corpus(unique_context_functions(3))
    manifest = save_ensemble(build_ensemble(corpus, (1, 2), Bitness.B64), tmp_path)
    document = json.loads(manifest.read_text())
    document["databases"][0]["n"] = 3
    manifest.write_text(json.dumps(document))
    with pytest.raises(ParameterMismatchError):
        load_ensemble(manifest)


def test_manifest_version_checked(tmp_path):
    corpus = make_corpus(unique_context_functions(3))
    manifest = save_ensemble(build_ensemble(corpus, (1,), Bitness.B64), tmp_path)
    document = json.loads(manifest.read_text())
    document["format_version"] = 99
    manifest.write_text(json.dumps(document))
    with pytest.raises(DatabaseFormatError, match="version"):
        load_ensemble(manifest)


@pytest.mark.slow
def test_large_roundtrip_and_fast_open(tmp_path):
    db = random_database(100_000, seed=11)
    path = tmp_path / "large.tgdb"
    serialize(db, path)
    started = time.perf_counter()
    mapped = open_mapped(path, verify=False)
    assert time.perf_counter() - started < 0.1
    try:
        _assert_query_identical(db, mapped)
    finally:
        mapped.close()


# Header field positions: key_count 5, label_count 6, names_offset 8,
# names_size 9, keys_offset 11, starts_offset 12.
@pytest.mark.parametrize(
    "field, value",
    [(11, 2**40), (12, 0), (9, 2**50), (8, 2**62), (6, 2**31), (5, 2**40), (5, 49)],
)
def test_corrupt_header_offsets_rejected(tmp_path, field, value):
    path = tmp_path / "db.tgdb"
    serialize(random_database(50), path)
    image = path.read_bytes()
    fields = list(HEADER.unpack_from(image, 0))
    fields[field] = value
    path.write_bytes(HEADER.pack(*fields) + image[HEADER_SIZE:])
    with pytest.raises(DatabaseFormatError, match="corrupt header"):
        open_mapped(path, verify=False)


def _expected_batch(db, keys, k):
    rows, label_ids, counts, distinct = [], [], [], []
    for row, key in enumerate(keys):
        result = db.query(key, k)
        for label_id, count in result.candidates:
            rows.append(row)
            label_ids.append(label_id)
            counts.append(count)
            distinct.append(result.distinct_label_count)
    return rows, label_ids, counts, distinct


@pytest.mark.parametrize("k", [1, 3, 10])
def test_batch_queries_match_single_queries(tmp_path, k):
    db = random_database(300)
    rng = random.Random(k)
    stored = sorted(db.entries)
    keys = [rng.choice(stored) for _ in range(200)]
    keys += [rng.getrandbits(64) for _ in range(50)] + [0, 2**64 - 1, keys[0]]
    rng.shuffle(keys)
    path = tmp_path / "db.tgdb"
    serialize(db, path)
    with open_mapped(path) as mapped:
        for store in (db, mapped):
            batch = store.query_many(keys, k)
            assert (
                batch.rows.tolist(),
                batch.label_ids.tolist(),
                batch.counts.tolist(),
                batch.distinct.tolist(),
            ) == _expected_batch(db, keys, k)
            with pytest.raises(ValueError):
                store.query_many(keys, 0)


def test_batch_query_on_empty_database(tmp_path):
    path = tmp_path / "db.tgdb"
    serialize(random_database(0), path)
    with open_mapped(path) as mapped:
        assert len(mapped.query_many([1, 2, 3])) == 0
