"""Statistical characterization of repurposed vs. non-repurposed change events.

Tail probabilities are computed from our own series/continued-fraction
implementations of the regularized incomplete beta and gamma functions, so
the package needs no statistics dependency; the test suite cross-checks
them against an independent library.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from collections import defaultdict
from dataclasses import asdict, dataclass
from pathlib import Path

from .models import ChangeEvent, TweetObservation

logger = logging.getLogger(__name__)

DEFAULT_FOLLOWBACK_HASHTAGS = ("ff", "follow", "ifollowback", "teamfollowback")
QUARTER_YEAR_SECONDS = 90 * 86_400


class DegenerateSampleError(ValueError):
    """The sample cannot support the requested test."""


# --- special functions -----------------------------------------------------------

_MAX_ITER = 300
_EPS = 1e-15
_TINY = 1e-300


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta function (Lentz's method)."""
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _TINY:
        d = _TINY
    d = 1.0 / d
    h = d
    for m in range(1, _MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return h
    raise ArithmeticError(f"incomplete beta did not converge for a={a}, b={b}, x={x}")


def betainc_regularized(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"x must be in [0, 1], got {x}")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def gammainc_upper_regularized(s: float, x: float) -> float:
    """Regularized upper incomplete gamma Q(s, x) for s > 0, x >= 0."""
    if s <= 0.0 or x < 0.0:
        raise ValueError(f"need s > 0 and x >= 0, got s={s}, x={x}")
    if x == 0.0:
        return 1.0
    if x < s + 1.0:
        # lower series, then complement
        term = 1.0 / s
        total = term
        a = s
        for _ in range(_MAX_ITER):
            a += 1.0
            term *= x / a
            total += term
            if abs(term) < abs(total) * _EPS:
                break
        p = total * math.exp(-x + s * math.log(x) - math.lgamma(s))
        return 1.0 - p
    # continued fraction for Q directly
    b = x + 1.0 - s
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER + 1):
        an = -i * (i - s)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return h * math.exp(-x + s * math.log(x) - math.lgamma(s))


def student_t_sf(t: float, df: float) -> float:
    """P(T > t) for Student's t with df degrees of freedom."""
    if df <= 0:
        raise ValueError("df must be positive")
    x = df / (df + t * t)
    tail = 0.5 * betainc_regularized(df / 2.0, 0.5, x)
    return tail if t >= 0 else 1.0 - tail


def chi2_sf(x: float, df: float) -> float:
    """P(X > x) for the chi-squared distribution."""
    if x < 0:
        return 1.0
    return gammainc_upper_regularized(df / 2.0, x / 2.0)


# --- test statistics -----------------------------------------------------------


@dataclass
class GroupStats:
    n: int
    mean: float
    variance: float  # unbiased (n-1 denominator); 0.0 when n == 1
    min: float
    max: float

    @classmethod
    def from_sample(cls, sample) -> "GroupStats":
        values = [float(v) for v in sample]
        if not values:
            raise DegenerateSampleError("empty sample")
        n = len(values)
        mean = sum(values) / n
        variance = sum((v - mean) ** 2 for v in values) / (n - 1) if n > 1 else 0.0
        return cls(n=n, mean=mean, variance=variance, min=min(values), max=max(values))


@dataclass
class WelchResult:
    t: float
    df: float
    p_two_sided: float


@dataclass
class Chi2Result:
    statistic: float
    p: float


@dataclass
class ContingencyTable2x2:
    a: int  # row 1, col 1
    b: int  # row 1, col 2
    c: int  # row 2, col 1
    d: int  # row 2, col 2

    def __post_init__(self) -> None:
        if min(self.a, self.b, self.c, self.d) < 0:
            raise ValueError("contingency counts must be nonnegative")
        if self.total == 0:
            raise ValueError("contingency table must have a positive total")

    @property
    def total(self) -> int:
        return self.a + self.b + self.c + self.d

    def rows(self) -> list[list[int]]:
        return [[self.a, self.b], [self.c, self.d]]


def welch_t_test(x, y) -> WelchResult:
    """Two-sided Welch's t-test with Welch-Satterthwaite degrees of freedom."""
    sx = GroupStats.from_sample(x)
    sy = GroupStats.from_sample(y)
    if sx.n < 2 or sy.n < 2:
        raise DegenerateSampleError("each sample needs at least 2 observations")
    vx = sx.variance / sx.n
    vy = sy.variance / sy.n
    if vx + vy == 0.0:
        raise DegenerateSampleError("both samples have zero variance")
    t = (sx.mean - sy.mean) / math.sqrt(vx + vy)
    df = (vx + vy) ** 2 / (vx**2 / (sx.n - 1) + vy**2 / (sy.n - 1))
    p = 2.0 * student_t_sf(abs(t), df)
    return WelchResult(t=t, df=df, p_two_sided=min(p, 1.0))


def chi_squared_2x2(table: ContingencyTable2x2) -> Chi2Result:
    """Pearson chi-squared on a 2x2 table, no continuity correction, df = 1."""
    row1 = table.a + table.b
    row2 = table.c + table.d
    col1 = table.a + table.c
    col2 = table.b + table.d
    n = table.total
    statistic = 0.0
    for observed, row, col in (
        (table.a, row1, col1),
        (table.b, row1, col2),
        (table.c, row2, col1),
        (table.d, row2, col2),
    ):
        expected = row * col / n
        if expected == 0.0:
            raise DegenerateSampleError("chi-squared needs all expected counts > 0")
        statistic += (observed - expected) ** 2 / expected
    return Chi2Result(statistic=statistic, p=chi2_sf(statistic, df=1.0))


# --- event-level characterization -------------------------------------------------


def _split_by_label(events: list[ChangeEvent], labels: dict[str, str]):
    positive, negative = [], []
    for event in events:
        label = labels.get(event.event_ref)
        if label == "positive":
            positive.append(event)
        elif label == "negative":
            negative.append(event)
    return positive, negative


@dataclass
class FollowerComparison:
    repurposed: GroupStats
    other: GroupStats
    welch: WelchResult


def follower_comparison(events: list[ChangeEvent], labels: dict[str, str]) -> FollowerComparison:
    """Compare prev-side follower counts between the two label groups."""
    positive, negative = _split_by_label(events, labels)
    if len(positive) < 2 or len(negative) < 2:
        raise DegenerateSampleError("need at least 2 events per label")
    pos_followers = [e.prev.followers_count for e in positive]
    neg_followers = [e.prev.followers_count for e in negative]
    return FollowerComparison(
        repurposed=GroupStats.from_sample(pos_followers),
        other=GroupStats.from_sample(neg_followers),
        welch=welch_t_test(pos_followers, neg_followers),
    )


def deletion_ratio(event: ChangeEvent) -> float | None:
    """next/prev statuses count; None when the prev count is zero."""
    if event.prev.statuses_count == 0:
        return None
    return event.next.statuses_count / event.prev.statuses_count


def deletion_flag(event: ChangeEvent) -> bool | None:
    """True when the account lost statuses across the change; None if unknowable."""
    if event.prev.statuses_count == 0:
        return None
    return event.next.statuses_count < event.prev.statuses_count


@dataclass
class DeletionComparison:
    table: ContingencyTable2x2  # rows: repurposed / other; cols: deleted / not
    chi2: Chi2Result
    excluded: int  # events with a zero prev statuses count


def deletion_comparison(events: list[ChangeEvent], labels: dict[str, str]) -> DeletionComparison:
    positive, negative = _split_by_label(events, labels)
    counts = {"positive": [0, 0], "negative": [0, 0]}
    excluded = 0
    for group, name in ((positive, "positive"), (negative, "negative")):
        for event in group:
            flag = deletion_flag(event)
            if flag is None:
                excluded += 1
                logger.warning("event %s has zero prev statuses; excluded", event.event_ref)
                continue
            counts[name][0 if flag else 1] += 1
    table = ContingencyTable2x2(
        a=counts["positive"][0],
        b=counts["positive"][1],
        c=counts["negative"][0],
        d=counts["negative"][1],
    )
    return DeletionComparison(table=table, chi2=chi_squared_2x2(table), excluded=excluded)


def dormancy_cdf(
    durations, bin_seconds: int = QUARTER_YEAR_SECONDS
) -> list[tuple[int, float]]:
    """Cumulative fraction of durations per quarter-year bin.

    Returns (bin upper bound in seconds, cumulative fraction) for every bin
    from the first up to the one containing the maximum duration.  The CDF
    is nondecreasing and ends at exactly 1.0.
    """
    values = sorted(float(d) for d in durations)
    if not values:
        return []
    if values[0] < 0:
        raise ValueError("durations must be nonnegative")
    n_bins = max(1, math.ceil(values[-1] / bin_seconds))
    out = []
    idx = 0
    for k in range(1, n_bins + 1):
        upper = k * bin_seconds
        while idx < len(values) and values[idx] <= upper:
            idx += 1
        out.append((upper, idx / len(values)))
    out[-1] = (out[-1][0], 1.0)  # guard against float edge at the last bin
    return out


def followback_counts(
    tweets: list[TweetObservation],
    labels_by_user: dict[str, str],
    hashtags=DEFAULT_FOLLOWBACK_HASHTAGS,
) -> dict[str, dict[str, int]]:
    """Distinct users per follow-back hashtag, split by the user's label."""
    wanted = {h.lower() for h in hashtags}
    users: dict[tuple[str, str], set[str]] = defaultdict(set)
    for tweet in tweets:
        label = labels_by_user.get(tweet.user_id)
        if label not in ("positive", "negative"):
            continue
        for tag in tweet.hashtags:
            tag = tag.lower()
            if tag in wanted:
                users[(label, tag)].add(tweet.user_id)
    return {
        label: {tag: len(users.get((label, tag), ())) for tag in sorted(wanted)}
        for label in ("positive", "negative")
    }


# --- report ----------------------------------------------------------------------


@dataclass
class CharacterizationReport:
    n_events: int
    n_positive: int
    n_negative: int
    followers: FollowerComparison | None
    deletions: DeletionComparison | None
    dormancy: dict[str, list[tuple[int, float]]]
    followback: dict[str, dict[str, int]]
    errors: dict[str, str]

    def to_dict(self) -> dict:
        return {
            "n_events": self.n_events,
            "n_positive": self.n_positive,
            "n_negative": self.n_negative,
            "followers": None if self.followers is None else asdict(self.followers),
            "deletions": None if self.deletions is None else asdict(self.deletions),
            "dormancy_cdf": {k: [list(p) for p in v] for k, v in self.dormancy.items()},
            "followback": self.followback,
            "errors": self.errors,
        }


def characterize(events: list[ChangeEvent], labels: dict[str, str]) -> CharacterizationReport:
    positive, negative = _split_by_label(events, labels)
    errors: dict[str, str] = {}
    followers = deletions = None
    try:
        followers = follower_comparison(events, labels)
    except DegenerateSampleError as exc:
        errors["followers"] = str(exc)
    try:
        deletions = deletion_comparison(events, labels)
    except (DegenerateSampleError, ValueError) as exc:
        errors["deletions"] = str(exc)
    dormancy = {
        "positive": dormancy_cdf([e.dormancy for e in positive]),
        "negative": dormancy_cdf([e.dormancy for e in negative]),
    }
    tweets = [t for e in positive + negative for t in e.tweets_before]
    labels_by_user = {e.user_id: labels[e.event_ref] for e in positive + negative}
    followback = followback_counts(tweets, labels_by_user)
    return CharacterizationReport(
        n_events=len(events),
        n_positive=len(positive),
        n_negative=len(negative),
        followers=followers,
        deletions=deletions,
        dormancy=dormancy,
        followback=followback,
        errors=errors,
    )


def write_report(
    report: CharacterizationReport,
    events: list[ChangeEvent],
    labels: dict[str, str],
    out_dir,
) -> None:
    """Write report.json, report.txt, and the plot-ready CSVs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(
        json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    (out / "report.txt").write_text(_render_text(report), encoding="utf-8")

    positive, negative = _split_by_label(events, labels)
    with open(out / "followers.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label", "followers_prev"])
        for name, group in (("positive", positive), ("negative", negative)):
            for event in group:
                writer.writerow([name, event.prev.followers_count])
    with open(out / "deletion_ratios.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label", "ratio"])
        for name, group in (("positive", positive), ("negative", negative)):
            for event in group:
                ratio = deletion_ratio(event)
                if ratio is not None:
                    writer.writerow([name, repr(ratio)])
    with open(out / "dormancy_cdf.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label", "bin_upper_seconds", "cumulative_fraction"])
        for name, points in report.dormancy.items():
            for upper, fraction in points:
                writer.writerow([name, upper, repr(fraction)])


def _render_text(report: CharacterizationReport) -> str:
    lines = [
        "Change-event characterization",
        "=============================",
        f"events: {report.n_events} "
        f"(positive {report.n_positive}, negative {report.n_negative})",
        "",
    ]
    if report.followers is not None:
        fc = report.followers
        lines += [
            "Followers before the change:",
            f"  repurposed     n={fc.repurposed.n} mean={fc.repurposed.mean:.1f}",
            f"  non-repurposed n={fc.other.n} mean={fc.other.mean:.1f}",
            f"  Welch t={fc.welch.t:.3f} df={fc.welch.df:.1f} p={fc.welch.p_two_sided:.3g}",
            "",
        ]
    if report.deletions is not None:
        dc = report.deletions
        lines += [
            "Tweet deletions (statuses count dropped across the change):",
            f"  repurposed     {dc.table.a} deleted / {dc.table.a + dc.table.b}",
            f"  non-repurposed {dc.table.c} deleted / {dc.table.c + dc.table.d}",
            f"  chi-squared={dc.chi2.statistic:.2f} p={dc.chi2.p:.3g} "
            f"(excluded {dc.excluded})",
            "",
        ]
    lines.append("Follow-back hashtag usage (distinct users):")
    for label, tags in report.followback.items():
        rendered = ", ".join(f"#{tag}: {count}" for tag, count in tags.items())
        lines.append(f"  {label}: {rendered}")
    for key, message in report.errors.items():
        lines.append(f"  [skipped {key}: {message}]")
    return "\n".join(lines) + "\n"
