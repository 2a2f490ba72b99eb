"""Shared builders for snapshots, tweets, and change events."""

from __future__ import annotations

from repurpose.models import ChangeEvent, ProfileSnapshot, TweetObservation

BASE_TS = 1_400_000_000  # 2014-05-13T16:53:20Z


def make_snapshot(
    user_id: str = "u1",
    captured_at: int = BASE_TS,
    screen_name: str = "old_handle",
    observed_at: int | None = None,
    **overrides,
) -> ProfileSnapshot:
    fields = dict(
        user_id=user_id,
        observed_at=captured_at if observed_at is None else observed_at,
        captured_at=captured_at,
        screen_name=screen_name,
        name="Old Name",
        description="tweets about cats and coffee",
        location="Springfield",
        url="https://example.com/old",
        profile_language="en",
        followers_count=1000,
        friends_count=200,
        statuses_count=5000,
        favourites_count=300,
        account_created_at=BASE_TS - 10_000_000,
    )
    fields.update(overrides)
    return ProfileSnapshot(**fields)


def make_tweet(
    user_id: str = "u1",
    tweet_id: str = "t1",
    posted_at: int = BASE_TS,
    text: str = "hello world",
    **overrides,
) -> TweetObservation:
    fields = dict(
        user_id=user_id,
        tweet_id=tweet_id,
        posted_at=posted_at,
        text=text,
        hashtags=[],
        source="Test Client",
        language="en",
    )
    fields.update(overrides)
    return TweetObservation(**fields)


def make_event(
    prev: ProfileSnapshot | None = None,
    next: ProfileSnapshot | None = None,
    tweets_before=None,
    tweets_after=None,
    dormancy: int = 86_400,
) -> ChangeEvent:
    if prev is None:
        prev = make_snapshot()
    if next is None:
        next = make_snapshot(
            captured_at=prev.captured_at + dormancy,
            screen_name="new_handle",
            name="New Name",
            description="totally different subject now",
            followers_count=900,
            statuses_count=400,
        )
    return ChangeEvent(
        user_id=prev.user_id,
        prev=prev,
        next=next,
        tweets_before=list(tweets_before or []),
        tweets_after=list(tweets_after or []),
    )
