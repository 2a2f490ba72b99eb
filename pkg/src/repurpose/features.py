"""Feature families computed over a screen-name ChangeEvent.

Four composable families, always emitted in this order:

  EDT   edit-distance features over name / description / screen name
  DSIM  similarity of the combined name+screen_name+description texts
        (longest common substring, token overlap, embedding cosine)
  MD    profile-metadata deltas: the four public counters (raw values,
        difference, and difference normalized by the larger value),
        change flags for location / url / language / profile image,
        and dormancy
  STY   tweet-style vectors summed per side, with cosine and euclidean
        distance between the two sides

Feature names and their order are part of the serialization contract:
vectors written by one run are comparable with vectors from any other.
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass

import numpy as np

from .embedding import EmbeddingProvider, cosine_similarity, euclidean_distance
from .models import ChangeEvent, TweetObservation
from .textsim import longest_common_substring, nld, token_overlap

EDT_FEATURES = ("nld_name", "nld_description", "nld_screen_name")
DSIM_FEATURES = (
    "lcs_length",
    "lcs_normalized",
    "common_token_count",
    "token_jaccard",
    "semantic_similarity",
)
_COUNTERS = ("followers", "friends", "statuses", "favourites")
MD_FEATURES = tuple(
    f"{c}_{part}" for c in _COUNTERS for part in ("prev", "next", "diff", "ratio")
) + (
    "location_changed",
    "location_nld",
    "url_changed",
    "url_nld",
    "language_changed",
    "image_changed",
    "dormancy_seconds",
    "dormancy_days",
)
STY_FEATURES = ("sty_available", "sty_cosine", "sty_euclidean")

FAMILY_ORDER = ("EDT", "DSIM", "MD", "STY")
FAMILY_FEATURES = {
    "EDT": EDT_FEATURES,
    "DSIM": DSIM_FEATURES,
    "MD": MD_FEATURES,
    "STY": STY_FEATURES,
}

_SENTENCE_SPLIT = re.compile(r"(?<=[.!?])\s+|\n+")


class FeatureComputationError(RuntimeError):
    """A feature could not be computed (e.g. the embedding provider failed)."""


class StyleUnavailable(FeatureComputationError):
    """The STY family needs at least one tweet on each side of the event."""


@dataclass
class FeatureVector:
    event_ref: str
    values: dict[str, float]
    families_included: tuple[str, ...]

    def __post_init__(self) -> None:
        for name, value in self.values.items():
            if not math.isfinite(value):
                raise ValueError(f"non-finite feature {name}={value!r} for {self.event_ref}")

    def as_array(self, feature_order: list[str] | tuple[str, ...]) -> np.ndarray:
        try:
            return np.array([self.values[name] for name in feature_order], dtype=np.float64)
        except KeyError as exc:
            raise KeyError(f"feature vector {self.event_ref} is missing {exc}") from exc

    @property
    def feature_names(self) -> tuple[str, ...]:
        return tuple(self.values)


@dataclass
class StyleVectors:
    before: np.ndarray
    after: np.ndarray
    cosine: float
    euclidean: float

    @property
    def fused(self) -> np.ndarray:
        """Average of the two sides, for consumers that want one vector."""
        return (self.before + self.after) / 2.0


def normalize_families(families) -> tuple[str, ...]:
    requested = {f.upper() for f in families}
    unknown = requested - set(FAMILY_ORDER)
    if unknown:
        raise ValueError(f"unknown feature families: {sorted(unknown)}")
    return tuple(f for f in FAMILY_ORDER if f in requested)


def edt_features(event: ChangeEvent) -> dict[str, float]:
    prev, nxt = event.prev, event.next
    return {
        "nld_name": nld(prev.name, nxt.name),
        "nld_description": nld(prev.description, nxt.description),
        "nld_screen_name": nld(prev.screen_name, nxt.screen_name),
    }


def combined_identity_text(snapshot) -> str:
    """Name, screen name, and description joined for the DSIM family."""
    return "\n".join((snapshot.name, snapshot.screen_name, snapshot.description))


def semantic_similarity(a: str, b: str, provider: EmbeddingProvider) -> float:
    """Cosine similarity of the provider's embeddings; 0.0 if either is zero."""
    try:
        va = provider.embed(a)
        vb = provider.embed(b)
    except FeatureComputationError:
        raise
    except Exception as exc:
        raise FeatureComputationError(f"embedding provider failed: {exc}") from exc
    return cosine_similarity(va, vb)


def dsim_features(event: ChangeEvent, provider: EmbeddingProvider) -> dict[str, float]:
    a = combined_identity_text(event.prev)
    b = combined_identity_text(event.next)
    length, normalized = longest_common_substring(a, b)
    common, jaccard = token_overlap(a, b)
    return {
        "lcs_length": float(length),
        "lcs_normalized": normalized,
        "common_token_count": float(common),
        "token_jaccard": jaccard,
        "semantic_similarity": semantic_similarity(a, b, provider),
    }


def _counter_block(name: str, prev_value: int, next_value: int) -> dict[str, float]:
    diff = prev_value - next_value
    biggest = max(prev_value, next_value)
    ratio = diff / biggest if biggest > 0 else 0.0
    return {
        f"{name}_prev": float(prev_value),
        f"{name}_next": float(next_value),
        f"{name}_diff": float(diff),
        f"{name}_ratio": ratio,
    }


def md_features(event: ChangeEvent) -> dict[str, float]:
    prev, nxt = event.prev, event.next
    out: dict[str, float] = {}
    out.update(_counter_block("followers", prev.followers_count, nxt.followers_count))
    out.update(_counter_block("friends", prev.friends_count, nxt.friends_count))
    out.update(_counter_block("statuses", prev.statuses_count, nxt.statuses_count))
    out.update(_counter_block("favourites", prev.favourites_count, nxt.favourites_count))
    out["location_changed"] = float(prev.location != nxt.location)
    out["location_nld"] = nld(prev.location, nxt.location)
    out["url_changed"] = float(prev.url != nxt.url)
    out["url_nld"] = nld(prev.url, nxt.url)
    out["language_changed"] = float(prev.profile_language != nxt.profile_language)
    # image change is knowable only when a URL is present on both sides
    out["image_changed"] = float(
        bool(prev.profile_image_url)
        and bool(nxt.profile_image_url)
        and prev.profile_image_url != nxt.profile_image_url
    )
    out["dormancy_seconds"] = float(event.dormancy)
    out["dormancy_days"] = event.dormancy / 86400.0
    return out


def split_sentences(text: str) -> list[str]:
    """Newlines and sentence-final punctuation followed by whitespace."""
    return [s for s in (piece.strip() for piece in _SENTENCE_SPLIT.split(text)) if s]


def _sum_sentence_embeddings(tweets: list[TweetObservation], provider: EmbeddingProvider) -> np.ndarray:
    document = "\n".join(t.text for t in tweets)
    total = np.zeros(provider.dimension, dtype=np.float64)
    for sentence in split_sentences(document):
        try:
            total += provider.embed(sentence)
        except Exception as exc:
            raise FeatureComputationError(f"embedding provider failed: {exc}") from exc
    return total


def style_vectors(event: ChangeEvent, provider: EmbeddingProvider) -> StyleVectors:
    """Per-side summed sentence embeddings and their distance features.

    Raises StyleUnavailable when a side has no tweets at all.
    """
    if not event.tweets_before or not event.tweets_after:
        raise StyleUnavailable(f"event {event.event_ref} lacks tweets on one side")
    before = _sum_sentence_embeddings(event.tweets_before, provider)
    after = _sum_sentence_embeddings(event.tweets_after, provider)
    return StyleVectors(
        before=before,
        after=after,
        cosine=cosine_similarity(before, after),
        euclidean=euclidean_distance(before, after),
    )


def sty_features(event: ChangeEvent, provider: EmbeddingProvider) -> dict[str, float]:
    try:
        sv = style_vectors(event, provider)
    except StyleUnavailable:
        return {"sty_available": 0.0, "sty_cosine": 0.0, "sty_euclidean": 0.0}
    return {"sty_available": 1.0, "sty_cosine": sv.cosine, "sty_euclidean": sv.euclidean}


def assemble(event: ChangeEvent, families, provider: EmbeddingProvider | None = None) -> FeatureVector:
    """Build the feature vector for one event, families in canonical order.

    STY falls back to ``sty_available = 0`` (with zeroed distances) when the
    event has no tweets on a side, so schemas stay identical across events.
    Provider failures propagate as FeatureComputationError.
    """
    selected = normalize_families(families)
    needs_provider = {"DSIM", "STY"} & set(selected)
    if needs_provider and provider is None:
        raise ValueError(f"families {sorted(needs_provider)} require an embedding provider")
    values: dict[str, float] = {}
    for family in selected:
        if family == "EDT":
            values.update(edt_features(event))
        elif family == "DSIM":
            values.update(dsim_features(event, provider))
        elif family == "MD":
            values.update(md_features(event))
        elif family == "STY":
            values.update(sty_features(event, provider))
    return FeatureVector(event_ref=event.event_ref, values=values, families_included=selected)


# --- CSV round trip -----------------------------------------------------------


def write_features_csv(vectors: list[FeatureVector], path) -> None:
    """One row per event; header is event_ref plus every feature name."""
    if not vectors:
        raise ValueError("no feature vectors to write")
    names = vectors[0].feature_names
    for fv in vectors:
        if fv.feature_names != names:
            raise ValueError(f"inconsistent feature schema at {fv.event_ref}")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(("event_ref",) + names)
        for fv in vectors:
            writer.writerow([fv.event_ref] + [repr(fv.values[n]) for n in names])


def read_features_csv(path) -> list[FeatureVector]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[0] != "event_ref":
            raise ValueError(f"{path}: not a feature CSV (header must start with event_ref)")
        names = header[1:]
        families = _families_for(names)
        out = []
        for row in reader:
            values = {name: float(cell) for name, cell in zip(names, row[1:])}
            out.append(FeatureVector(event_ref=row[0], values=values, families_included=families))
    return out


def _families_for(names: list[str]) -> tuple[str, ...]:
    present = set(names)
    return tuple(
        family
        for family in FAMILY_ORDER
        if any(feature in present for feature in FAMILY_FEATURES[family])
    )
