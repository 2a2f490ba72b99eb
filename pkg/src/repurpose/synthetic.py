"""Seeded synthetic archive generator with planted ground truth.

Builds a line-delimited tweet archive of ~N accounts in three groups:

  * repurposed changers: one screen-name change with a drastic name and
    description rewrite, a statuses-count drop, a long dormancy gap, a
    higher follower count, and (for a subset) follow-back hashtags in the
    old-era tweets;
  * benign changers: a screen-name change with only slight profile edits,
    short dormancy, and a growing statuses count;
  * stable accounts: no screen-name change (some of them get retweeted,
    which exercises the embedded-profile path).

Ground truth is computed by ingesting the generated archive through the
real store and labeling each extracted change event by its account's
planted group, so the truth file always agrees with what the pipeline will
extract.  The generator verifies the planted separability margins (drastic
rewrites really do exceed the baseline thresholds, slight edits stay well
under) and raises if a draw cannot be made to satisfy them.
"""

from __future__ import annotations

import csv
import gzip
import json
import random
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

from .forest import BASELINE_DESCRIPTION_THRESHOLD, BASELINE_NAME_THRESHOLD
from .ingest import ingest_stream
from .store import SnapshotStore
from .textsim import nld

DAY = 86_400

_FIRST = ["alex", "sam", "maria", "chen", "aylin", "lukas", "emre", "nina", "pavel",
          "june", "omar", "ida", "leo", "mara", "tomas", "zoe", "arda", "lena"]
_LAST = ["rivera", "kaya", "smith", "novak", "demir", "larsen", "moreau", "tan",
         "weber", "costa", "yilmaz", "petrov", "silva", "hansen", "rossi", "berg"]
_OLD_TOPICS = [
    ["cat", "videos", "daily", "purring", "kittens", "naps", "yarn", "whiskers"],
    ["travel", "photos", "mountains", "beaches", "backpacking", "sunsets", "maps", "trains"],
    ["coffee", "espresso", "beans", "roasting", "latte", "brews", "mornings", "mugs"],
    ["football", "matches", "goals", "highlights", "transfers", "derby", "fans", "league"],
    ["poetry", "verses", "quotes", "notebooks", "ink", "letters", "stories", "margins"],
    ["gaming", "streams", "ranked", "clutch", "patch", "speedrun", "loot", "guild"],
]
_NEW_TOPICS = [
    ["crypto", "signals", "pump", "profit", "exchange", "wallet", "airdrop", "moon"],
    ["patriots", "unite", "truth", "media", "borders", "freedom", "ballots", "rally"],
    ["discount", "deals", "shoponline", "freeshipping", "coupon", "megasale", "order", "promo"],
    ["followers", "growth", "promo", "boost", "viral", "engagement", "reach", "blueprint"],
]
_CITIES = ["Springfield", "Riverton", "Lakeview", "Ankara", "Lyon", "Porto", "Tampere", ""]
_SOURCES = ["Web Client", "Phone App", "Tablet App", "Desk Suite"]
_LANGS = ["en", "tr", "fr"]
_FOLLOWBACK = ["ff", "follow", "ifollowback", "teamfollowback"]

_WEEKDAYS = ["Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun"]
_MONTH_NAMES = ["Jan", "Feb", "Mar", "Apr", "May", "Jun",
                "Jul", "Aug", "Sep", "Oct", "Nov", "Dec"]


def _archive_time(ts: int) -> str:
    from datetime import datetime, timezone

    dt = datetime.fromtimestamp(ts, tz=timezone.utc)
    return (
        f"{_WEEKDAYS[dt.weekday()]} {_MONTH_NAMES[dt.month - 1]} "
        f"{dt.day:02d} {dt.hour:02d}:{dt.minute:02d}:{dt.second:02d} +0000 {dt.year}"
    )


@dataclass
class SyntheticConfig:
    accounts: int = 1000
    seed: int = 7
    repurposed_fraction: float = 0.3
    benign_fraction: float = 0.3
    start: int = 1_388_534_400  # 2014-01-01T00:00:00Z
    gzip_output: bool = False


@dataclass
class SyntheticTruth:
    archive_path: Path
    labels: dict[str, str]  # event_ref -> positive/negative
    user_groups: dict[str, str]  # user_id -> repurposed/benign/stable
    records_written: int
    events: list = field(default_factory=list)

    def write_labels_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["event_ref", "label"])
            for ref in sorted(self.labels):
                writer.writerow([ref, self.labels[ref]])


@dataclass
class _Profile:
    name: str
    screen_name: str
    description: str
    location: str
    url: str
    lang: str
    followers: int
    friends: int
    statuses: int
    favourites: int


@dataclass
class _Account:
    user_id: str
    group: str  # repurposed | benign | stable
    created_at: int
    old: _Profile
    new: _Profile | None
    change_at: int | None
    source: str
    followback: bool
    old_topic: list[str]
    new_topic: list[str]


def _sentence(rng: random.Random, words: list[str], n: int) -> str:
    return " ".join(rng.choice(words) for _ in range(n)).capitalize() + "."


def _description(rng: random.Random, words: list[str]) -> str:
    return " ".join(rng.choice(words) for _ in range(rng.randint(6, 9)))


def _persona(rng: random.Random, uid: int, topic: list[str], followers: int) -> _Profile:
    first, last = rng.choice(_FIRST), rng.choice(_LAST)
    name = f"{first.capitalize()} {last.capitalize()}"
    screen = f"{first}_{last}_{uid}"
    return _Profile(
        name=name,
        screen_name=screen,
        description=_description(rng, topic),
        location=rng.choice(_CITIES),
        url=f"https://{last}.example/{first}" if rng.random() < 0.6 else "",
        lang=rng.choice(_LANGS),
        followers=followers,
        friends=rng.randint(50, 900),
        statuses=rng.randint(1500, 9000),
        favourites=rng.randint(0, 3000),
    )


def _drastic_rewrite(rng: random.Random, old: _Profile, uid: int, topic: list[str]) -> _Profile:
    """New identity whose name/description clear the baseline margins."""
    for _ in range(200):
        brand = f"{rng.choice(topic).capitalize()} {rng.choice(topic).capitalize()}"
        description = _description(rng, topic)
        if (
            nld(old.name, brand) > BASELINE_NAME_THRESHOLD + 0.03
            and nld(old.description, description) > BASELINE_DESCRIPTION_THRESHOLD + 0.03
        ):
            return _Profile(
                name=brand,
                screen_name=f"{topic[0]}_{uid}",
                description=description,
                location=rng.choice(_CITIES),
                url=f"https://{topic[0]}.example/{uid}" if rng.random() < 0.7 else "",
                lang=old.lang,
                followers=max(100, int(old.followers * rng.uniform(0.9, 1.05))),
                friends=rng.randint(10, 400),
                statuses=max(10, int(old.statuses * rng.uniform(0.04, 0.6))),
                favourites=old.favourites,
            )
    raise RuntimeError("could not draw a drastic rewrite above the baseline margins")


def _slight_edit(rng: random.Random, old: _Profile, uid: int, topic: list[str]) -> _Profile:
    """Same persona, new handle: small name tweak, one description word swapped."""
    words = old.description.split()
    words[rng.randrange(len(words))] = rng.choice(topic)
    description = " ".join(words)
    name = old.name + (" " + rng.choice(["Jr", "II", "R"]) if rng.random() < 0.5 else "!")
    if nld(old.description, description) > 0.5 or nld(old.name, name) > 0.5:
        raise RuntimeError("slight edit drifted too far from the old profile")
    return _Profile(
        name=name,
        screen_name=f"{old.screen_name}_v{rng.randint(2, 99)}",
        description=description,
        location=old.location,
        url=old.url,
        lang=old.lang,
        followers=max(10, int(old.followers * rng.uniform(0.95, 1.1))),
        friends=old.friends,
        statuses=old.statuses + rng.randint(5, 300),
        favourites=old.favourites + rng.randint(0, 50),
    )


def _make_accounts(config: SyntheticConfig) -> list[_Account]:
    rng = random.Random(config.seed)
    accounts = []
    n_repurposed = int(config.accounts * config.repurposed_fraction)
    n_benign = int(config.accounts * config.benign_fraction)
    for i in range(config.accounts):
        uid = 1_000_000 + i
        group = (
            "repurposed" if i < n_repurposed
            else "benign" if i < n_repurposed + n_benign
            else "stable"
        )
        old_topic = rng.choice(_OLD_TOPICS)
        new_topic = rng.choice(_NEW_TOPICS)
        # repurposing targets popular accounts: plant a higher follower mean
        followers = (
            int(rng.lognormvariate(9.2, 0.7)) if group == "repurposed"
            else int(rng.lognormvariate(8.0, 0.8))
        )
        created_at = config.start - rng.randint(800, 2000) * DAY
        old = _persona(rng, uid, old_topic, followers)
        change_at = None
        new = None
        if group == "repurposed":
            change_at = config.start + rng.randint(30, 200) * DAY
            new = _drastic_rewrite(rng, old, uid, new_topic)
        elif group == "benign":
            change_at = config.start + rng.randint(30, 200) * DAY
            new = _slight_edit(rng, old, uid, old_topic)
        accounts.append(
            _Account(
                user_id=str(uid),
                group=group,
                created_at=created_at,
                old=old,
                new=new,
                change_at=change_at,
                source=rng.choice(_SOURCES),
                followback=group == "repurposed" and rng.random() < 0.4,
                old_topic=old_topic,
                new_topic=new_topic,
            )
        )
    return accounts


def _user_object(account: _Account, profile: _Profile) -> dict:
    return {
        "id_str": account.user_id,
        "screen_name": profile.screen_name,
        "name": profile.name,
        "description": profile.description,
        "location": profile.location,
        "url": profile.url,
        "lang": profile.lang,
        "followers_count": profile.followers,
        "friends_count": profile.friends,
        "statuses_count": profile.statuses,
        "favourites_count": profile.favourites,
        "created_at": _archive_time(account.created_at),
        "profile_image_url": f"https://img.example/{account.user_id}/{profile.screen_name}.png",
    }


def _tweet_record(
    account: _Account, profile: _Profile, ts: int, tweet_id: int, text: str,
    hashtags: list[str],
) -> dict:
    return {
        "id_str": str(tweet_id),
        "created_at": _archive_time(ts),
        "text": text,
        "source": account.source,
        "lang": profile.lang,
        "entities": {"hashtags": [{"text": tag} for tag in hashtags]},
        "user": _user_object(account, profile),
    }


def _build_records(accounts: list[_Account], config: SyntheticConfig) -> list[tuple[int, dict]]:
    rng = random.Random(config.seed + 1)
    records: list[tuple[int, dict]] = []
    next_tweet_id = 5_000_000
    stable_pool = [a for a in accounts if a.group == "stable"]
    for account in accounts:
        n_before = rng.randint(3, 6)
        n_after = rng.randint(3, 6)
        if account.group == "stable":
            t = config.start + rng.randint(0, 30) * DAY
            for _ in range(n_before + n_after):
                text = _sentence(rng, account.old_topic, rng.randint(5, 9))
                tags = [rng.choice(account.old_topic)] if rng.random() < 0.3 else []
                records.append(
                    (t, _tweet_record(account, account.old, t, next_tweet_id, text, tags))
                )
                next_tweet_id += 1
                t += rng.randint(1, 20) * DAY
            continue
        # changers: old era ends well before change_at, new era starts at it
        dormancy = (
            rng.randint(150, 400) * DAY if account.group == "repurposed"
            else rng.randint(1, 25) * DAY
        )
        last_old = account.change_at - dormancy
        old_times = [last_old]
        for _ in range(n_before - 1):
            old_times.append(old_times[-1] - rng.randint(2, 10) * DAY)
        for ts in reversed(old_times):
            text = _sentence(rng, account.old_topic, rng.randint(5, 9))
            tags = []
            if account.followback and rng.random() < 0.8:
                tags.append(rng.choice(_FOLLOWBACK))
            elif rng.random() < 0.3:
                tags.append(rng.choice(account.old_topic))
            records.append(
                (ts, _tweet_record(account, account.old, ts, next_tweet_id, text, tags))
            )
            next_tweet_id += 1
        topic = account.new_topic if account.group == "repurposed" else account.old_topic
        t = account.change_at
        for _ in range(n_after):
            text = _sentence(rng, topic, rng.randint(5, 9))
            tags = [rng.choice(topic)] if rng.random() < 0.3 else []
            records.append(
                (t, _tweet_record(account, account.new, t, next_tweet_id, text, tags))
            )
            next_tweet_id += 1
            t += rng.randint(1, 15) * DAY
    # retweets among stable accounts: exercises the embedded-profile path
    for _ in range(len(accounts) // 4):
        poster, author = rng.sample(stable_pool, 2)
        original_ts = config.start + rng.randint(0, 40) * DAY
        capture_ts = original_ts + rng.randint(1, 30) * DAY
        original = _tweet_record(
            author, author.old, original_ts, next_tweet_id,
            _sentence(rng, author.old_topic, 6), [],
        )
        next_tweet_id += 1
        retweet = _tweet_record(
            poster, poster.old, capture_ts, next_tweet_id,
            f"RT @{author.old.screen_name}: {original['text']}", [],
        )
        next_tweet_id += 1
        retweet["retweeted_status"] = original
        records.append((capture_ts, retweet))
    records.sort(key=lambda pair: (pair[0], pair[1]["id_str"]))
    return records


def generate_archive(out_dir, config: SyntheticConfig | None = None) -> SyntheticTruth:
    """Write the archive file plus truth labels; returns the truth bundle."""
    if config is None:
        config = SyntheticConfig()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    accounts = _make_accounts(config)
    records = _build_records(accounts, config)
    name = "archive.jsonl.gz" if config.gzip_output else "archive.jsonl"
    archive_path = out / name
    if config.gzip_output:
        with gzip.open(archive_path, "wt", encoding="utf-8") as fh:
            for _, record in records:
                fh.write(json.dumps(record, ensure_ascii=False) + "\n")
    else:
        with open(archive_path, "w", encoding="utf-8") as fh:
            for _, record in records:
                fh.write(json.dumps(record, ensure_ascii=False) + "\n")

    # derive the truth through the real ingestion + extraction path
    groups = {a.user_id: a.group for a in accounts}
    labels: dict[str, str] = {}
    events = []
    with tempfile.TemporaryDirectory() as tmp:
        with SnapshotStore(Path(tmp) / "store") as store:
            stats = ingest_stream([archive_path], store)
            if stats.records_malformed:
                raise RuntimeError(
                    f"generator produced {stats.records_malformed} malformed records"
                )
            for user_id in store.scan_changed_users():
                for event in store.extract_change_events(user_id):
                    group = groups[user_id]
                    if group == "stable":
                        raise RuntimeError(f"unplanned change event for stable user {user_id}")
                    labels[event.event_ref] = (
                        "positive" if group == "repurposed" else "negative"
                    )
                    events.append(event)
    truth = SyntheticTruth(
        archive_path=archive_path,
        labels=labels,
        user_groups=groups,
        records_written=len(records),
        events=events,
    )
    truth.write_labels_csv(out / "labels.csv")
    (out / "truth.json").write_text(
        json.dumps(
            {"seed": config.seed, "accounts": config.accounts,
             "labels": truth.labels, "user_groups": groups},
            indent=2, sort_keys=True,
        ) + "\n",
        encoding="utf-8",
    )
    return truth


# --- bulk fixture for the parser throughput target --------------------------------


_THROUGHPUT_TEMPLATE = (
    '{"id_str":"%d","created_at":"Wed Aug 27 13:08:45 +0000 2014",'
    '"text":"Morning update %d: coffee brewed, projects moving, weather holding steady '
    'over the river and the old town bridge, trains running on time for once, and the '
    'market stalls opening early with fresh bread and late-season fruit #update #daily '
    '#morning #localnews",'
    '"source":"Web Client","lang":"en","truncated":false,"retweet_count":12,'
    '"favorite_count":3,"in_reply_to_status_id_str":null,"in_reply_to_user_id_str":null,'
    '"coordinates":null,"place":null,"contributors":null,"is_quote_status":false,'
    '"entities":{"hashtags":[{"text":"update"},{"text":"daily"},{"text":"morning"},'
    '{"text":"localnews"}],"urls":[],"user_mentions":[],"symbols":[]},'
    '"user":{"id_str":"%d","screen_name":"user_%d","name":"User %d",'
    '"description":"Long-running account posting regular updates about the town, '
    'the weather, football scores, transit delays, municipal council meetings and '
    'the occasional book review; opinions are my own and retweets are not '
    'endorsements of anything in particular",'
    '"location":"Springfield, Westshire","url":"https://example.com/u/%d","lang":"en",'
    '"followers_count":%d,"friends_count":301,"statuses_count":%d,'
    '"favourites_count":87,"listed_count":4,"verified":false,"protected":false,'
    '"geo_enabled":false,"contributors_enabled":false,"is_translator":false,'
    '"profile_image_url":"http://img.example/p/%d_normal.png",'
    '"profile_background_color":"C0DEED","profile_text_color":"333333",'
    '"default_profile":true,"default_profile_image":false,'
    '"created_at":"Mon Jan 05 10:00:00 +0000 2009"}}\n'
)


def write_throughput_fixture(path, target_bytes: int) -> int:
    """Repetitive but well-formed archive lines totalling ~target_bytes.

    Lines carry the field inventory of a realistic v1.1 record (including
    fields the parser ignores), so parser throughput is measured against
    representative input, not a minimal skeleton.
    """
    written = 0
    i = 0
    with open(path, "w", encoding="utf-8", buffering=1 << 20) as fh:
        while written < target_bytes:
            uid = 10_000 + (i % 50_000)
            line = _THROUGHPUT_TEMPLATE % (
                i, i, uid, uid, uid, uid, 1500 + i % 997, 10_000 + i, uid
            )
            fh.write(line)
            written += len(line)
            i += 1
    return i
