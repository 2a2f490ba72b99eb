"""Core domain records shared across the pipeline.

A ProfileSnapshot is one observation of an account's profile attributes,
extracted from an archived tweet record.  Two timestamps are kept per
snapshot: ``observed_at`` is the creation time of the tweet the profile was
attached to, and ``captured_at`` is when the archive actually saw it (these
differ for profiles embedded in retweets).  Timeline ordering always uses
``captured_at``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field


class ValidationError(ValueError):
    """A record violates a structural invariant."""


@dataclass(slots=True)
class ProfileSnapshot:
    user_id: str
    observed_at: int
    captured_at: int
    screen_name: str
    name: str = ""
    description: str = ""
    location: str = ""
    url: str = ""
    profile_language: str = ""
    followers_count: int = 0
    friends_count: int = 0
    statuses_count: int = 0
    favourites_count: int = 0
    account_created_at: int = 0
    profile_image_url: str = ""

    def validate(self) -> None:
        if not self.user_id:
            raise ValidationError("snapshot user_id must be nonempty")
        if not self.screen_name:
            raise ValidationError("snapshot screen_name must be nonempty")
        if self.observed_at < self.account_created_at:
            raise ValidationError(
                f"snapshot observed before account creation "
                f"({self.observed_at} < {self.account_created_at})"
            )
        for fname in ("followers_count", "friends_count", "statuses_count", "favourites_count"):
            if getattr(self, fname) < 0:
                raise ValidationError(f"{fname} must be nonnegative")

    @property
    def dedup_key(self) -> tuple[str, int, str]:
        return (self.user_id, self.observed_at, self.screen_name)

    @property
    def sort_key(self) -> tuple[int, int, str]:
        # captured_at first, ties broken deterministically
        return (self.captured_at, self.observed_at, self.screen_name)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ProfileSnapshot":
        return cls(**d)


@dataclass(slots=True)
class TweetObservation:
    user_id: str
    tweet_id: str
    posted_at: int
    text: str = ""
    hashtags: list[str] = field(default_factory=list)
    source: str = ""
    language: str = ""

    @property
    def dedup_key(self) -> tuple[str, str]:
        return (self.user_id, self.tweet_id)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TweetObservation":
        return cls(**d)


@dataclass(slots=True)
class ChangeEvent:
    """A screen-name change: the last snapshot under the old name paired
    with the first snapshot under the new one."""

    user_id: str
    prev: ProfileSnapshot
    next: ProfileSnapshot
    tweets_before: list[TweetObservation] = field(default_factory=list)
    tweets_after: list[TweetObservation] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.prev.screen_name.lower() == self.next.screen_name.lower():
            raise ValidationError(
                f"change event requires distinct screen names, got "
                f"{self.prev.screen_name!r} -> {self.next.screen_name!r}"
            )
        if self.dormancy < 0:
            raise ValidationError("change event dormancy must be nonnegative")

    @property
    def dormancy(self) -> int:
        """Seconds between the two sides of the change."""
        return self.next.captured_at - self.prev.captured_at

    @property
    def event_ref(self) -> str:
        return f"{self.user_id}:{self.prev.captured_at}:{self.next.captured_at}"

    def to_dict(self) -> dict:
        return {
            "event_ref": self.event_ref,
            "user_id": self.user_id,
            "dormancy_seconds": self.dormancy,
            "prev": self.prev.to_dict(),
            "next": self.next.to_dict(),
            "tweets_before": [t.to_dict() for t in self.tweets_before],
            "tweets_after": [t.to_dict() for t in self.tweets_after],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ChangeEvent":
        return cls(
            user_id=d["user_id"],
            prev=ProfileSnapshot.from_dict(d["prev"]),
            next=ProfileSnapshot.from_dict(d["next"]),
            tweets_before=[TweetObservation.from_dict(t) for t in d.get("tweets_before", [])],
            tweets_after=[TweetObservation.from_dict(t) for t in d.get("tweets_after", [])],
        )

    def to_json_line(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False)

    @classmethod
    def from_json_line(cls, line: str) -> "ChangeEvent":
        return cls.from_dict(json.loads(line))
