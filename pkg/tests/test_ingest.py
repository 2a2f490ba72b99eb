import gzip
import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from repurpose.ingest import (
    IngestStats,
    MalformedRecord,
    NullSink,
    RawRecord,
    ingest_stream,
    parse_record,
    parse_timestamp,
)
from repurpose.store import SnapshotStore


def tweet_payload(
    user_id="101",
    screen_name="alpha",
    created_at="Wed Aug 27 13:08:45 +0000 2014",
    tweet_id="9001",
    retweeted=None,
    **user_overrides,
):
    user = {
        "id_str": user_id,
        "screen_name": screen_name,
        "name": "Alpha User",
        "description": "likes dogs",
        "location": "Atlantis",
        "url": "https://a.example",
        "lang": "en",
        "followers_count": 10,
        "friends_count": 5,
        "statuses_count": 100,
        "favourites_count": 2,
        "created_at": "Mon Jan 05 10:00:00 +0000 2009",
    }
    user.update(user_overrides)
    obj = {
        "id_str": tweet_id,
        "created_at": created_at,
        "text": "hello #World",
        "source": "Test Client",
        "lang": "en",
        "entities": {"hashtags": [{"text": "World"}]},
        "user": user,
    }
    if retweeted is not None:
        obj["retweeted_status"] = retweeted
    return obj


def as_line(obj) -> str:
    return json.dumps(obj)


def test_parse_timestamp_known_value():
    # 2008-08-27T13:08:45Z (verified against datetime.strptime in UTC)
    import datetime

    s = "Wed Aug 27 13:08:45 +0000 2008"
    expected = int(
        datetime.datetime.strptime(s, "%a %b %d %H:%M:%S %z %Y").timestamp()
    )
    assert parse_timestamp(s) == expected


def test_parse_timestamp_nonzero_offset():
    import datetime

    s = "Wed Aug 27 13:08:45 +0230 2008"
    expected = int(datetime.datetime.strptime(s, "%a %b %d %H:%M:%S %z %Y").timestamp())
    assert parse_timestamp(s) == expected


def test_parse_timestamp_garbage():
    with pytest.raises(MalformedRecord):
        parse_timestamp("not a date")


def test_simple_record_yields_one_snapshot():
    pairs = parse_record(RawRecord(1, as_line(tweet_payload())))
    assert len(pairs) == 1
    snapshot, tweet = pairs[0]
    assert snapshot.user_id == "101"
    assert snapshot.screen_name == "alpha"
    assert snapshot.observed_at == snapshot.captured_at == parse_timestamp(
        "Wed Aug 27 13:08:45 +0000 2014"
    )
    assert snapshot.name == "Alpha User"
    assert snapshot.description == "likes dogs"
    assert snapshot.followers_count == 10
    assert tweet.tweet_id == "9001"
    assert tweet.hashtags == ["world"]
    assert tweet.source == "Test Client"


def test_retweet_yields_two_snapshots_with_correct_timestamps():
    original = tweet_payload(
        user_id="202",
        screen_name="beta",
        tweet_id="8000",
        created_at="Sat Jan 04 08:00:00 +0000 2014",
    )
    record = tweet_payload(retweeted=original)
    pairs = parse_record(RawRecord(1, as_line(record)))
    assert len(pairs) == 2
    (poster, _), (original_author, original_tweet) = pairs
    assert poster.user_id == "101"
    assert original_author.user_id == "202"
    capture_time = parse_timestamp("Wed Aug 27 13:08:45 +0000 2014")
    # embedded profile: observed at the original tweet's time, captured now
    assert original_author.observed_at == parse_timestamp("Sat Jan 04 08:00:00 +0000 2014")
    assert original_author.captured_at == capture_time
    assert original_tweet.posted_at == original_author.observed_at
    assert original_tweet.tweet_id == "8000"


def test_not_json_returns_empty():
    assert parse_record(RawRecord(1, "not json")) == []
    with pytest.raises(MalformedRecord):
        parse_record(RawRecord(1, "not json"), strict=True)


@pytest.mark.parametrize(
    "mutate",
    [
        lambda obj: obj.pop("created_at"),
        lambda obj: obj.pop("user"),
        lambda obj: obj["user"].pop("id_str"),
        lambda obj: obj["user"].pop("screen_name"),
        lambda obj: obj.pop("id_str"),
    ],
)
def test_missing_fields_are_malformed(mutate):
    obj = tweet_payload()
    mutate(obj)
    assert parse_record(RawRecord(1, as_line(obj))) == []


def test_tweet_predating_account_is_malformed():
    obj = tweet_payload(created_at="Wed Jan 02 00:00:00 +0000 2008")  # account made 2009
    assert parse_record(RawRecord(1, as_line(obj))) == []


def write_fixture(path, lines):
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def test_ingest_counts_malformed(tmp_path):
    lines = [as_line(tweet_payload(tweet_id=str(i), user_id=str(i))) for i in range(8)]
    lines.insert(3, "garbage {")
    lines.insert(6, '{"also": "bad"}')
    source = tmp_path / "archive.jsonl"
    write_fixture(source, lines)
    stats = ingest_stream([source], NullSink())
    assert stats.records_read == 10
    assert stats.records_malformed == 2
    assert stats.snapshots_emitted == 8
    assert stats.tweets_emitted == 8
    assert stats.distinct_users == 8
    assert stats.records_read == stats.records_malformed + 8


def test_ingest_idempotent(tmp_path):
    lines = [
        as_line(tweet_payload(tweet_id=str(i), screen_name="alpha")) for i in range(3)
    ]
    source = tmp_path / "archive.jsonl"
    write_fixture(source, lines)
    with SnapshotStore(tmp_path / "store") as store:
        ingest_stream([source], store)
        first_pass = store.timeline("101")
        ingest_stream([source], store)
        assert store.timeline("101") == first_pass
        assert store.snapshot_count() == 1  # same user/time/screen_name collapses
        assert store.tweet_count() == 3


def test_ingest_gzip_and_plain_mixed(tmp_path):
    plain = tmp_path / "a.jsonl"
    write_fixture(plain, [as_line(tweet_payload(user_id="1", tweet_id="1"))])
    gz = tmp_path / "b.jsonl.gz"
    with gzip.open(gz, "wt", encoding="utf-8") as fh:
        fh.write(as_line(tweet_payload(user_id="2", tweet_id="2")) + "\n")
    disguised = tmp_path / "c.jsonl"  # gzip bytes without the .gz suffix
    with gzip.open(disguised, "wt", encoding="utf-8") as fh:
        fh.write(as_line(tweet_payload(user_id="3", tweet_id="3")) + "\n")
    stats = ingest_stream([plain, gz, disguised], NullSink())
    assert stats.snapshots_emitted == 3
    assert stats.distinct_users == 3


def test_ingest_empty_source_list():
    stats = ingest_stream([], NullSink())
    assert stats.records_read == 0
    assert stats.snapshots_emitted == 0
    assert stats.distinct_users == 0


def test_ingest_unreadable_file_continues(tmp_path):
    good = tmp_path / "good.jsonl"
    write_fixture(good, [as_line(tweet_payload())])
    stats = ingest_stream([tmp_path / "missing.jsonl", good], NullSink())
    assert len(stats.file_errors) == 1
    assert "missing.jsonl" in stats.file_errors[0]
    assert stats.snapshots_emitted == 1


def test_ingest_never_aborts_on_arbitrary_bytes(tmp_path):
    source = tmp_path / "junk.bin"
    source.write_bytes(bytes(range(256)) + b"\n\x00\xff\xfe\n" + b'{"a": 1}\n')
    stats = ingest_stream([source], NullSink())
    assert stats.records_read == stats.records_malformed + 0  # nothing valid inside
    assert stats.snapshots_emitted == 0


@settings(max_examples=60, deadline=None)
@given(st.binary(max_size=4000))
def test_ingest_any_byte_stream(blob, tmp_path_factory):
    # malformed + parsed always partitions the nonblank lines, never aborts
    path = tmp_path_factory.mktemp("junk") / "stream.bin"
    path.write_bytes(blob)
    stats = ingest_stream([path], NullSink())
    assert stats.records_malformed <= stats.records_read
    assert stats.bytes_processed == len(blob) or blob[:2] == b"\x1f\x8b"


def test_parallel_ingest_matches_serial(tmp_path):
    files = []
    for f in range(3):
        lines = [
            as_line(tweet_payload(user_id=str(u), tweet_id=f"{f}-{u}", screen_name=f"sn{u}"))
            for u in range(10)
        ]
        path = tmp_path / f"part-{f}.jsonl"
        write_fixture(path, lines)
        files.append(path)
    with SnapshotStore(tmp_path / "serial") as serial_store:
        serial_stats = ingest_stream(files, serial_store, workers=1)
    with SnapshotStore(tmp_path / "parallel") as parallel_store:
        parallel_stats = ingest_stream(files, parallel_store, workers=3)
    assert serial_stats.records_read == parallel_stats.records_read
    assert serial_stats.distinct_users == parallel_stats.distinct_users
    for uid in serial_store.user_ids():
        assert serial_store.timeline(uid) == parallel_store.timeline(uid)


def test_stats_to_dict_has_throughput():
    stats = IngestStats(bytes_processed=10_000_000, elapsed=2.0)
    assert stats.to_dict()["throughput_mb_s"] == pytest.approx(5.0)
