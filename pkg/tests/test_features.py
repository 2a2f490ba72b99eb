import math
import zlib

import numpy as np
import pytest

from repurpose.embedding import HashedNgramEmbedding
from repurpose.features import (
    DSIM_FEATURES,
    EDT_FEATURES,
    MD_FEATURES,
    STY_FEATURES,
    FeatureComputationError,
    FeatureVector,
    StyleUnavailable,
    assemble,
    combined_identity_text,
    dsim_features,
    edt_features,
    md_features,
    read_features_csv,
    semantic_similarity,
    split_sentences,
    style_vectors,
    write_features_csv,
)

from conftest import make_event, make_snapshot, make_tweet


def dp_edit_distance(a, b):
    """Independent oracle, restated from the textbook definition."""
    d = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
    for i in range(len(a) + 1):
        d[i][0] = i
    for j in range(len(b) + 1):
        d[0][j] = j
    for i in range(1, len(a) + 1):
        for j in range(1, len(b) + 1):
            d[i][j] = min(
                d[i - 1][j] + 1,
                d[i][j - 1] + 1,
                d[i - 1][j - 1] + (a[i - 1] != b[j - 1]),
            )
    return d[-1][-1]


def hand_embedding(text, dimension=512, seed=0x5EED):
    """Recompute the default provider's trigram embedding from its definition."""
    vec = np.zeros(dimension)
    if text:
        wrapped = "\x02" + text + "\x03"
        for i in range(len(wrapped) - 2):
            vec[zlib.crc32(wrapped[i : i + 3].encode("utf-8"), seed) % dimension] += 1.0
    return vec


@pytest.fixture(scope="module")
def provider():
    return HashedNgramEmbedding()


# --- EDT ---------------------------------------------------------------------


def test_edt_identical_sides_all_zero():
    snap = make_snapshot()
    twin = make_snapshot(screen_name="other_handle", captured_at=snap.captured_at + 10)
    twin.name = snap.name
    twin.description = snap.description
    event = make_event(prev=snap, next=twin)
    feats = edt_features(event)
    assert feats["nld_name"] == 0.0
    assert feats["nld_description"] == 0.0
    assert feats["nld_screen_name"] > 0.0


def test_edt_disjoint_equal_length_fields():
    prev = make_snapshot(screen_name="aaaa", name="bbbb", description="cccc")
    nxt = make_snapshot(
        screen_name="zzzz", name="yyyy", description="xxxx", captured_at=prev.captured_at + 10
    )
    feats = edt_features(make_event(prev=prev, next=nxt))
    assert feats == {"nld_name": 1.0, "nld_description": 1.0, "nld_screen_name": 1.0}


def test_edt_matches_independent_oracle():
    prev = make_snapshot(name="Jenna The Traveler", description="travel blog and photos")
    nxt = make_snapshot(
        screen_name="new_handle",
        name="Jenna Abrams",
        description="politics enthusiast",
        captured_at=prev.captured_at + 10,
    )
    feats = edt_features(make_event(prev=prev, next=nxt))
    for attr, key in [("name", "nld_name"), ("description", "nld_description")]:
        a, b = getattr(prev, attr), getattr(nxt, attr)
        assert feats[key] == pytest.approx(dp_edit_distance(a, b) / max(len(a), len(b)))


# --- DSIM ---------------------------------------------------------------------


def test_semantic_similarity_identical(provider):
    assert semantic_similarity("same text", "same text", provider) == pytest.approx(1.0)


def test_semantic_similarity_empty_side(provider):
    assert semantic_similarity("", "something", provider) == 0.0


def test_semantic_similarity_matches_hand_recomputation(provider):
    a, b = "cat videos daily", "dog videos daily"
    got = semantic_similarity(a, b, provider)
    va, vb = hand_embedding(a), hand_embedding(b)
    expected = float(va @ vb / (np.linalg.norm(va) * np.linalg.norm(vb)))
    assert 0.0 < got < 1.0
    assert got == pytest.approx(expected)


def test_semantic_similarity_provider_failure_is_explicit():
    class Broken:
        dimension = 4

        def embed(self, text):
            raise ConnectionError("endpoint down")

    with pytest.raises(FeatureComputationError):
        semantic_similarity("a", "b", Broken())


def test_dsim_features_use_combined_text(provider):
    event = make_event()
    feats = dsim_features(event, provider)
    a = combined_identity_text(event.prev)
    b = combined_identity_text(event.next)
    assert a == f"{event.prev.name}\n{event.prev.screen_name}\n{event.prev.description}"
    assert feats["lcs_length"] >= 1.0  # both sides share substrings
    assert 0.0 <= feats["lcs_normalized"] <= 1.0
    assert 0.0 <= feats["token_jaccard"] <= 1.0
    assert -1.0 <= feats["semantic_similarity"] <= 1.0
    from repurpose.textsim import tokenize

    assert feats["common_token_count"] == float(len(set(tokenize(a)) & set(tokenize(b))))


# --- MD -------------------------------------------------------------------------


def test_md_counter_difference_and_ratio():
    prev = make_snapshot(followers_count=100)
    nxt = make_snapshot(screen_name="x2", captured_at=prev.captured_at + 10, followers_count=50)
    feats = md_features(make_event(prev=prev, next=nxt))
    assert feats["followers_prev"] == 100.0
    assert feats["followers_next"] == 50.0
    assert feats["followers_diff"] == 50.0
    assert feats["followers_ratio"] == 0.5


def test_md_ratio_zero_when_both_zero():
    prev = make_snapshot(favourites_count=0)
    nxt = make_snapshot(screen_name="x2", captured_at=prev.captured_at + 10, favourites_count=0)
    feats = md_features(make_event(prev=prev, next=nxt))
    assert feats["favourites_ratio"] == 0.0


def test_md_ratio_negative_when_counter_grows():
    prev = make_snapshot(statuses_count=50)
    nxt = make_snapshot(screen_name="x2", captured_at=prev.captured_at + 10, statuses_count=100)
    feats = md_features(make_event(prev=prev, next=nxt))
    assert feats["statuses_ratio"] == -0.5


def test_md_flags_and_dormancy():
    prev = make_snapshot(location="Paris", url="https://a.example", profile_language="fr")
    nxt = make_snapshot(
        screen_name="x2",
        captured_at=prev.captured_at + 2 * 86_400,
        location="Paris",
        url="https://b.example",
        profile_language="en",
    )
    feats = md_features(make_event(prev=prev, next=nxt))
    assert feats["location_changed"] == 0.0
    assert feats["location_nld"] == 0.0
    assert feats["url_changed"] == 1.0
    assert feats["url_nld"] > 0.0
    assert feats["language_changed"] == 1.0
    assert feats["dormancy_seconds"] == 2 * 86_400.0
    assert feats["dormancy_days"] == 2.0


def test_md_image_flag_requires_both_urls():
    prev = make_snapshot(profile_image_url="http://img/a.png")
    nxt = make_snapshot(screen_name="x2", captured_at=prev.captured_at + 10)
    assert md_features(make_event(prev=prev, next=nxt))["image_changed"] == 0.0
    nxt.profile_image_url = "http://img/b.png"
    assert md_features(make_event(prev=prev, next=nxt))["image_changed"] == 1.0


# --- STY -------------------------------------------------------------------------


def test_sentence_splitting():
    assert split_sentences("One. Two!\nThree? Four") == ["One.", "Two!", "Three?", "Four"]
    assert split_sentences("") == []
    assert split_sentences("no terminal punctuation") == ["no terminal punctuation"]


def test_style_identical_sides(provider):
    tweets = [make_tweet(tweet_id="t1", text="I like cats. They purr!")]
    event = make_event(tweets_before=tweets, tweets_after=list(tweets))
    sv = style_vectors(event, provider)
    assert sv.cosine == pytest.approx(1.0)
    assert sv.euclidean == pytest.approx(0.0)
    assert np.array_equal(sv.fused, sv.before)


def test_style_unavailable_when_side_empty(provider):
    event = make_event(tweets_before=[make_tweet()], tweets_after=[])
    with pytest.raises(StyleUnavailable):
        style_vectors(event, provider)


def test_style_vector_equals_sum_of_sentence_embeddings(provider):
    before = [make_tweet(tweet_id="t1", text="Cats are great. Dogs are fine.")]
    after = [make_tweet(tweet_id="t2", text="Buy crypto now! Limited offer.")]
    event = make_event(tweets_before=before, tweets_after=after)
    sv = style_vectors(event, provider)
    expected_before = hand_embedding("Cats are great.") + hand_embedding("Dogs are fine.")
    expected_after = hand_embedding("Buy crypto now!") + hand_embedding("Limited offer.")
    assert np.array_equal(sv.before, expected_before)
    assert np.array_equal(sv.after, expected_after)


# --- assemble -----------------------------------------------------------------


def test_assemble_edt_only():
    fv = assemble(make_event(), ["EDT"])
    assert fv.feature_names == EDT_FEATURES
    assert fv.families_included == ("EDT",)


def test_assemble_full_vector_all_finite(provider):
    event = make_event(
        tweets_before=[make_tweet(tweet_id="t1", text="old words here.")],
        tweets_after=[make_tweet(tweet_id="t2", text="new words there.")],
    )
    fv = assemble(event, ["STY", "MD", "EDT", "DSIM"], provider)
    assert fv.families_included == ("EDT", "DSIM", "MD", "STY")
    assert fv.feature_names == EDT_FEATURES + DSIM_FEATURES + MD_FEATURES + STY_FEATURES
    assert all(math.isfinite(v) for v in fv.values.values())
    assert fv.values["sty_available"] == 1.0


def test_assemble_sty_fallback_keeps_schema(provider):
    fv = assemble(make_event(), ["EDT", "STY"], provider)
    assert fv.values["sty_available"] == 0.0
    assert fv.values["sty_cosine"] == 0.0
    assert fv.values["sty_euclidean"] == 0.0


def test_assemble_deterministic(provider):
    event = make_event(tweets_before=[make_tweet()], tweets_after=[make_tweet(tweet_id="t9")])
    fv1 = assemble(event, ["EDT", "DSIM", "MD", "STY"], provider)
    fv2 = assemble(event, ["EDT", "DSIM", "MD", "STY"], provider)
    assert fv1.values == fv2.values


def test_assemble_rejects_unknown_family():
    with pytest.raises(ValueError):
        assemble(make_event(), ["EDT", "XYZ"])


def test_assemble_requires_provider_for_dsim():
    with pytest.raises(ValueError):
        assemble(make_event(), ["DSIM"])


def test_feature_vector_rejects_non_finite():
    with pytest.raises(ValueError):
        FeatureVector("e1", {"bad": float("nan")}, ("MD",))


# --- CSV round trip ---------------------------------------------------------------


def test_feature_csv_round_trip(tmp_path, provider):
    events = [
        make_event(),
        make_event(
            prev=make_snapshot(user_id="u2", screen_name="before"),
            next=make_snapshot(
                user_id="u2", screen_name="after", captured_at=make_snapshot().captured_at + 99
            ),
        ),
    ]
    vectors = [assemble(e, ["EDT", "DSIM", "MD"], provider) for e in events]
    path = tmp_path / "features.csv"
    write_features_csv(vectors, path)
    loaded = read_features_csv(path)
    assert [fv.event_ref for fv in loaded] == [fv.event_ref for fv in vectors]
    for got, want in zip(loaded, vectors):
        assert got.values == want.values
        assert got.families_included == ("EDT", "DSIM", "MD")
