"""Durable per-user snapshot timelines and change-event extraction.

On-disk layout: a directory holding ``meta.json`` plus 16 append-only
partition files for snapshots and 16 for tweets (partition = crc32 of the
user id).  Records are one compact JSON object per line.  An in-memory
index over all records is rebuilt on open; appends are buffered and made
durable by flush()/close().

Deduplication keys: snapshots collapse on (user_id, observed_at,
screen_name), tweets on (user_id, tweet_id).  Because ordering is applied
at read time, the final store contents are independent of append order,
which makes re-ingestion and concurrent appends safe.

A note on tweet sets: the archive stream only ever reveals a sample of an
account's tweets, so ``tweets_before``/``tweets_after`` on a change event
are the *observed* subsets, not the account's full history.  Analyses that
need deletion signals use the statuses counter deltas instead.
"""

from __future__ import annotations

import json
import threading
import zlib
from pathlib import Path

from .models import ChangeEvent, ProfileSnapshot, TweetObservation, ValidationError

STORE_FORMAT = "repurpose-store"
STORE_VERSION = 1
N_PARTITIONS = 16


class StoreError(RuntimeError):
    pass


class CorruptStoreError(StoreError):
    pass


class ScanResult:
    """Users with at least one screen-name change, plus global counts."""

    def __init__(self, changed_user_ids: list[str], total_users: int, total_events: int):
        self.changed_user_ids = changed_user_ids
        self.total_users = total_users
        self.total_events = total_events

    def __iter__(self):
        return iter(self.changed_user_ids)

    @property
    def changed_users(self) -> int:
        return len(self.changed_user_ids)


def _partition(user_id: str) -> int:
    return zlib.crc32(user_id.encode("utf-8")) % N_PARTITIONS


class SnapshotStore:
    """Append-only store of profile snapshots and tweet observations."""

    def __init__(self, root, create: bool = True):
        self.root = Path(root)
        self._lock = threading.Lock()
        self._snapshots: dict[str, list[ProfileSnapshot]] = {}
        self._snapshot_keys: set[tuple[str, int, str]] = set()
        self._tweets: dict[str, list[TweetObservation]] = {}
        self._tweet_keys: set[tuple[str, str]] = set()
        self._buffers: dict[str, list[str]] = {}
        self._closed = False
        meta_path = self.root / "meta.json"
        if meta_path.exists():
            self._load()
        elif create:
            self.root.mkdir(parents=True, exist_ok=True)
            meta_path.write_text(
                json.dumps({"format": STORE_FORMAT, "version": STORE_VERSION,
                            "partitions": N_PARTITIONS}) + "\n",
                encoding="utf-8",
            )
        else:
            raise StoreError(f"no store at {self.root}")

    # -- lifecycle --------------------------------------------------------

    def _load(self) -> None:
        meta_path = self.root / "meta.json"
        try:
            meta = json.loads(meta_path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise CorruptStoreError(f"unreadable store metadata: {exc}") from exc
        if meta.get("format") != STORE_FORMAT:
            raise CorruptStoreError(f"{self.root} is not a {STORE_FORMAT} directory")
        if meta.get("version") != STORE_VERSION:
            raise CorruptStoreError(f"unsupported store version {meta.get('version')}")
        for path in sorted(self.root.glob("snapshots-*.jsonl")):
            self._replay(path, kind="snapshot")
        for path in sorted(self.root.glob("tweets-*.jsonl")):
            self._replay(path, kind="tweet")

    def _replay(self, path: Path, kind: str) -> None:
        with open(path, encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    record = json.loads(line)
                    if kind == "snapshot":
                        self._index_snapshot(ProfileSnapshot.from_dict(record))
                    else:
                        self._index_tweet(TweetObservation.from_dict(record))
                except (ValueError, TypeError) as exc:
                    raise CorruptStoreError(f"{path}:{line_no}: bad record: {exc}") from exc

    def flush(self) -> None:
        with self._lock:
            for filename, lines in self._buffers.items():
                if not lines:
                    continue
                with open(self.root / filename, "a", encoding="utf-8") as fh:
                    fh.writelines(lines)
                lines.clear()

    def close(self) -> None:
        if not self._closed:
            self.flush()
            self._closed = True

    def __enter__(self) -> "SnapshotStore":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()

    # -- appends ----------------------------------------------------------

    def _index_snapshot(self, snapshot: ProfileSnapshot) -> bool:
        key = snapshot.dedup_key
        if key in self._snapshot_keys:
            return False
        self._snapshot_keys.add(key)
        self._snapshots.setdefault(snapshot.user_id, []).append(snapshot)
        return True

    def _index_tweet(self, tweet: TweetObservation) -> bool:
        key = tweet.dedup_key
        if key in self._tweet_keys:
            return False
        self._tweet_keys.add(key)
        self._tweets.setdefault(tweet.user_id, []).append(tweet)
        return True

    def append_snapshot(self, snapshot: ProfileSnapshot) -> bool:
        """Index and stage one snapshot; duplicates silently collapse.

        Returns True when the snapshot was new.  Raises ValidationError for
        records violating the snapshot invariants.
        """
        snapshot.validate()
        with self._lock:
            if not self._index_snapshot(snapshot):
                return False
            line = json.dumps(snapshot.to_dict(), ensure_ascii=False,
                              separators=(",", ":")) + "\n"
            self._buffers.setdefault(
                f"snapshots-{_partition(snapshot.user_id):02d}.jsonl", []
            ).append(line)
            return True

    def append_tweet(self, tweet: TweetObservation) -> bool:
        if not tweet.user_id or not tweet.tweet_id:
            raise ValidationError("tweet requires user_id and tweet_id")
        with self._lock:
            if not self._index_tweet(tweet):
                return False
            line = json.dumps(tweet.to_dict(), ensure_ascii=False,
                              separators=(",", ":")) + "\n"
            self._buffers.setdefault(
                f"tweets-{_partition(tweet.user_id):02d}.jsonl", []
            ).append(line)
            return True

    # -- reads --------------------------------------------------------------

    def user_ids(self) -> list[str]:
        return sorted(self._snapshots)

    def snapshot_count(self) -> int:
        return len(self._snapshot_keys)

    def tweet_count(self) -> int:
        return len(self._tweet_keys)

    def timeline(self, user_id: str) -> list[ProfileSnapshot]:
        """Snapshots ordered by captured_at (ties: observed_at, screen_name)."""
        return sorted(self._snapshots.get(user_id, ()), key=lambda s: s.sort_key)

    def tweets(self, user_id: str) -> list[TweetObservation]:
        return sorted(self._tweets.get(user_id, ()), key=lambda t: (t.posted_at, t.tweet_id))

    def extract_change_events(self, user_id: str) -> list[ChangeEvent]:
        """One event per adjacent pair of distinct screen-name runs.

        Screen names are compared case-insensitively, so a pure case change
        is not a change event.  The event pairs the LAST snapshot of the old
        run with the FIRST snapshot of the new run.
        """
        snapshots = self.timeline(user_id)
        if not snapshots:
            return []
        runs: list[list[ProfileSnapshot]] = []
        for snapshot in snapshots:
            if runs and runs[-1][-1].screen_name.lower() == snapshot.screen_name.lower():
                runs[-1].append(snapshot)
            else:
                runs.append([snapshot])
        if len(runs) < 2:
            return []
        tweets = self.tweets(user_id)
        events = []
        for prev_run, next_run in zip(runs, runs[1:]):
            prev, nxt = prev_run[-1], next_run[0]
            events.append(
                ChangeEvent(
                    user_id=user_id,
                    prev=prev,
                    next=nxt,
                    tweets_before=[t for t in tweets if t.posted_at <= prev.captured_at],
                    tweets_after=[t for t in tweets if t.posted_at >= nxt.captured_at],
                )
            )
        return events

    def scan_changed_users(self) -> ScanResult:
        """All users with at least one change event, in sorted user order."""
        changed = []
        total_events = 0
        for user_id in self.user_ids():
            events = self.extract_change_events(user_id)
            if events:
                changed.append(user_id)
                total_events += len(events)
        return ScanResult(changed, total_users=len(self._snapshots), total_events=total_events)


# --- change-event export ------------------------------------------------------------


def write_events_jsonl(events, path) -> int:
    """One event per line, fixed schema (see ChangeEvent.to_dict)."""
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for event in events:
            fh.write(event.to_json_line() + "\n")
            count += 1
    return count


def read_events_jsonl(path) -> list[ChangeEvent]:
    events = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                events.append(ChangeEvent.from_json_line(line))
            except (ValueError, TypeError, KeyError) as exc:
                raise CorruptStoreError(f"{path}:{line_no}: bad event record: {exc}") from exc
    return events
