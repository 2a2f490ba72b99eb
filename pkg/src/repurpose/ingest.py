"""Stream-parse archived tweet records into profile snapshots and tweets.

Input is line-delimited JSON in the classic v1.1 tweet shape (plain or
gzip-compressed files; gzip is detected from magic bytes, not the name).
Each record yields a snapshot of the posting user, and an embedded
retweeted status additionally yields a snapshot of the original author.

The parser never aborts on bad input: any line that cannot produce a
coherent record (unparseable JSON, missing user id or screen name, missing
or incoherent timestamps) is counted as malformed and skipped.  Records
that do parse always satisfy the snapshot invariants, so appends cannot
half-fail.

Snapshot timestamps: ``observed_at`` is the creation time of the tweet the
profile rode in on (for retweeted users, the ORIGINAL tweet's time) while
``captured_at`` is when the archive stream actually saw the record.
Timeline reconstruction orders by ``captured_at``.
"""

from __future__ import annotations

import gzip
import io
import json
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import date

from .models import ProfileSnapshot, TweetObservation

_GZIP_MAGIC = b"\x1f\x8b"
_MONTHS = {
    "Jan": 1, "Feb": 2, "Mar": 3, "Apr": 4, "May": 5, "Jun": 6,
    "Jul": 7, "Aug": 8, "Sep": 9, "Oct": 10, "Nov": 11, "Dec": 12,
}
_EPOCH_ORDINAL = date(1970, 1, 1).toordinal()


class MalformedRecord(ValueError):
    """The payload cannot produce a coherent record."""


@dataclass(slots=True)
class RawRecord:
    line_number: int
    payload: str | bytes


@dataclass
class IngestStats:
    records_read: int = 0
    records_malformed: int = 0
    snapshots_emitted: int = 0
    tweets_emitted: int = 0
    distinct_users: int = 0
    bytes_processed: int = 0
    elapsed: float = 0.0
    file_errors: list[str] = field(default_factory=list)

    @property
    def throughput_mb_s(self) -> float:
        return self.bytes_processed / 1e6 / self.elapsed if self.elapsed > 0 else 0.0

    def to_dict(self) -> dict:
        return {
            "records_read": self.records_read,
            "records_malformed": self.records_malformed,
            "snapshots_emitted": self.snapshots_emitted,
            "tweets_emitted": self.tweets_emitted,
            "distinct_users": self.distinct_users,
            "bytes_processed": self.bytes_processed,
            "elapsed": self.elapsed,
            "throughput_mb_s": self.throughput_mb_s,
            "file_errors": self.file_errors,
        }


class NullSink:
    """Sink that discards records; used to benchmark the parser path."""

    def append_snapshot(self, snapshot) -> bool:
        return True

    def append_tweet(self, tweet) -> bool:
        return True


def parse_timestamp(value: str) -> int:
    """'EEE MMM dd HH:mm:ss Z yyyy' (e.g. 'Wed Aug 27 13:08:45 +0000 2008')
    to UTC epoch seconds."""
    try:
        month = _MONTHS[value[4:7]]
        day = int(value[8:10])
        hour = int(value[11:13])
        minute = int(value[14:16])
        second = int(value[17:19])
        offset = value[20:25]
        year = int(value[26:30])
        ts = (
            (date(year, month, day).toordinal() - _EPOCH_ORDINAL) * 86_400
            + hour * 3600
            + minute * 60
            + second
        )
        if offset != "+0000":
            shift = int(offset[1:3]) * 3600 + int(offset[3:5]) * 60
            ts = ts - shift if offset[0] == "+" else ts + shift
        return ts
    except (KeyError, ValueError, IndexError, TypeError) as exc:
        raise MalformedRecord(f"bad timestamp {value!r}") from exc


class _TimestampCache(dict):
    """Timestamp strings repeat heavily (per user creation date, per stream
    second), so memoize the parse.  Bounded: cleared when it grows large."""

    def __missing__(self, key: str) -> int:
        if len(self) > 300_000:
            self.clear()
        ts = parse_timestamp(key)
        self[key] = ts
        return ts


_ts_cache = _TimestampCache()


def _count(value) -> int:
    """Nonnegative counter with tolerance for junk values."""
    if type(value) is int:
        return value if value >= 0 else 0
    try:
        return max(0, int(value or 0))
    except (TypeError, ValueError):
        return 0


def _snapshot_and_tweet(
    obj: dict, observed_at: int, captured_at: int
) -> tuple[ProfileSnapshot, TweetObservation]:
    user = obj.get("user")
    if not isinstance(user, dict):
        raise MalformedRecord("record has no user object")
    user_id = user.get("id_str") or user.get("id")
    if not user_id:
        raise MalformedRecord("user id missing")
    screen_name = user.get("screen_name")
    if not screen_name:
        raise MalformedRecord("screen name missing")
    created = user.get("created_at")
    if created and type(created) is not str:
        raise MalformedRecord("bad account creation timestamp")
    account_created_at = _ts_cache[created] if created else 0
    if observed_at < account_created_at:
        raise MalformedRecord("tweet predates the account")
    snapshot = ProfileSnapshot(
        str(user_id),
        observed_at,
        captured_at,
        screen_name,
        user.get("name") or "",
        user.get("description") or "",
        user.get("location") or "",
        user.get("url") or "",
        user.get("lang") or "",
        _count(user.get("followers_count")),
        _count(user.get("friends_count")),
        _count(user.get("statuses_count")),
        _count(user.get("favourites_count")),
        account_created_at,
        user.get("profile_image_url") or "",
    )
    tweet_id = obj.get("id_str") or obj.get("id")
    if not tweet_id:
        raise MalformedRecord("tweet id missing")
    entities = obj.get("entities")
    hashtags = []
    if isinstance(entities, dict):
        for tag in entities.get("hashtags") or ():
            text = tag.get("text") if isinstance(tag, dict) else None
            if text:
                hashtags.append(text.lower())
    tweet = TweetObservation(
        snapshot.user_id,
        str(tweet_id),
        observed_at,
        obj.get("text") or "",
        hashtags,
        obj.get("source") or "",
        obj.get("lang") or "",
    )
    return snapshot, tweet


def _parse_payload(payload: str | bytes) -> list[tuple[ProfileSnapshot, TweetObservation]]:
    if type(payload) is not str:
        try:
            payload = payload.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedRecord(f"payload is not UTF-8: {exc}") from exc
    try:
        obj = json.loads(payload)
    except ValueError as exc:
        raise MalformedRecord(f"unparseable payload: {exc}") from exc
    if type(obj) is not dict:
        raise MalformedRecord("payload is not a JSON object")
    created = obj.get("created_at")
    if not created or type(created) is not str:
        raise MalformedRecord("tweet timestamp missing")
    captured_at = _ts_cache[created]
    out = [_snapshot_and_tweet(obj, captured_at, captured_at)]
    retweeted = obj.get("retweeted_status")
    if isinstance(retweeted, dict):
        rt_created = retweeted.get("created_at")
        if not rt_created or type(rt_created) is not str:
            raise MalformedRecord("retweeted status timestamp missing")
        # original tweet's time is when the profile was observed; the
        # archive captured it at the retweet's time
        out.append(_snapshot_and_tweet(retweeted, _ts_cache[rt_created], captured_at))
    return out


def parse_record(
    record: RawRecord, strict: bool = False
) -> list[tuple[ProfileSnapshot, TweetObservation]]:
    """Snapshot/tweet pairs for one archived record: one for the posting
    user, plus one for the retweeted user when a retweet is embedded.

    Malformed payloads yield an empty list (pass strict=True to raise
    MalformedRecord with the reason instead).
    """
    try:
        return _parse_payload(record.payload)
    except MalformedRecord:
        if strict:
            raise
        return []


def open_archive(path) -> io.BufferedIOBase:
    """Binary line stream over a plain or gzip file (sniffed, not by name)."""
    fh = open(path, "rb")
    try:
        magic = fh.read(2)
        fh.seek(0)
    except OSError:
        fh.close()
        raise
    if magic == _GZIP_MAGIC:
        return gzip.open(fh, "rb")
    return fh


def _ingest_one_file(path, sink, stats: IngestStats, seen_users: set[str]) -> None:
    # hot path: counters in locals, bound methods hoisted
    nbytes = records = malformed = snapshots = tweets = 0
    parse = _parse_payload
    append_snapshot = sink.append_snapshot
    append_tweet = sink.append_tweet
    add_user = seen_users.add
    try:
        with open_archive(path) as fh:
            for raw in fh:
                nbytes += len(raw)
                line = raw.strip()
                if not line:
                    continue
                records += 1
                try:
                    pairs = parse(line)
                except MalformedRecord:
                    malformed += 1
                    continue
                for snapshot, tweet in pairs:
                    add_user(snapshot.user_id)
                    append_snapshot(snapshot)
                    snapshots += 1
                    append_tweet(tweet)
                    tweets += 1
    finally:
        stats.bytes_processed += nbytes
        stats.records_read += records
        stats.records_malformed += malformed
        stats.snapshots_emitted += snapshots
        stats.tweets_emitted += tweets


def _parse_file_worker(path):
    """Parse one file fully; returns (pairs, stats, user_ids) for merging."""
    stats = IngestStats()
    seen: set[str] = set()
    batch: list[tuple[ProfileSnapshot, TweetObservation]] = []
    with open_archive(path) as fh:
        for raw in fh:
            stats.bytes_processed += len(raw)
            line = raw.strip()
            if not line:
                continue
            stats.records_read += 1
            try:
                pairs = _parse_payload(line)
            except MalformedRecord:
                stats.records_malformed += 1
                continue
            batch.extend(pairs)
            for snapshot, _ in pairs:
                seen.add(snapshot.user_id)
    return batch, stats, seen


def ingest_stream(sources, sink, workers: int = 1) -> IngestStats:
    """Parse every source file into the sink; returns ingestion stats.

    Unreadable files are recorded in ``file_errors`` and the remaining
    files are still processed.  Re-ingesting the same input is a no-op for
    store contents (the sink deduplicates on its snapshot/tweet keys).
    With workers > 1, files are parsed in parallel processes and appended
    by this process; final store contents match sequential ingestion.
    """
    stats = IngestStats()
    seen_users: set[str] = set()
    paths = list(sources)
    started = time.perf_counter()
    if workers > 1 and len(paths) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [(path, pool.submit(_parse_file_worker, path)) for path in paths]
            for path, future in futures:
                try:
                    batch, file_stats, seen = future.result()
                except Exception as exc:  # per-file isolation
                    stats.file_errors.append(f"{path}: {exc}")
                    continue
                stats.records_read += file_stats.records_read
                stats.records_malformed += file_stats.records_malformed
                stats.bytes_processed += file_stats.bytes_processed
                seen_users |= seen
                for snapshot, tweet in batch:
                    sink.append_snapshot(snapshot)
                    stats.snapshots_emitted += 1
                    sink.append_tweet(tweet)
                    stats.tweets_emitted += 1
    else:
        for path in paths:
            try:
                _ingest_one_file(path, sink, stats, seen_users)
            except (OSError, EOFError, zlib.error) as exc:  # bad file or bad gzip stream
                stats.file_errors.append(f"{path}: {exc}")
    stats.distinct_users = len(seen_users)
    stats.elapsed = time.perf_counter() - started
    return stats
