"""Human labeling queue, agreement math, and the active-learning loop.

State is an append-only event log (one JSON line per mutation) replayed on
open, which doubles as the audit trail for label overwrites.  Candidates
are handed out deterministically (stratum, then candidate id) and a
candidate is never handed to the same annotator twice, while different
annotators may label the same candidate.

Privacy gate: candidates in the popular strata (top_followers or
random_popular) must have at least 5,000 followers before the change;
events below the floor are rejected at enqueue time.
"""

from __future__ import annotations

import json
import logging
import threading
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from .features import FeatureVector
from .forest import ModelArtifact, TrainConfig, baseline_model, predict, save_model, train_forest
from .models import ChangeEvent

logger = logging.getLogger(__name__)

ANNOTATION_QUESTION = (
    "Did the account change in a way that makes it seem that the account is "
    "now owned by a different person/organization, or has the account "
    "rebranded itself substantially?"
)

LABELS = ("positive", "negative", "unsure")
CODED_CASES = (
    "new_identity",
    "commercial_activity",
    "same_person",
    "purpose_overloading",
    "slight_change",
    "no_purpose",
    "rebranding",
    "non_substantial",
    "person_org_unclear",
    "pseudonym_change",
)
STRATA = ("integrity", "random_popular", "top_followers")
POPULAR_FOLLOWER_FLOOR = 5_000


class AnnotationError(RuntimeError):
    pass


class UnknownAnnotatorError(AnnotationError):
    pass


class UnknownCandidateError(AnnotationError):
    pass


def _utcnow() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _most_common(values) -> str:
    counts = Counter(v for v in values if v)
    if not counts:
        return ""
    top = max(counts.values())
    return sorted(v for v, c in counts.items() if c == top)[0]


def candidate_view(event: ChangeEvent) -> dict:
    """The annotator-visible attributes for both sides of the change."""

    def side(snapshot, tweets):
        return {
            "name": snapshot.name,
            "screen_name": snapshot.screen_name,
            "description": snapshot.description,
            "location": snapshot.location,
            "url": snapshot.url,
            "profile_language": snapshot.profile_language,
            "most_common_tweet_source": _most_common(t.source for t in tweets),
            "most_common_tweet_language": _most_common(t.language for t in tweets),
        }

    return {
        "prev": side(event.prev, event.tweets_before),
        "next": side(event.next, event.tweets_after),
        "followers": {
            "prev": event.prev.followers_count,
            "next": event.next.followers_count,
        },
        "dormancy_seconds": event.dormancy,
    }


@dataclass
class Candidate:
    candidate_id: str
    event_ref: str
    stratum: str
    status: str  # pending | labeled | skipped
    view: dict

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class LabelRecord:
    candidate_id: str
    annotator_id: str
    label: str
    coded_case: str | None = None
    confident: bool | None = None
    submitted_at: str = field(default_factory=_utcnow)

    def validate(self) -> None:
        if self.label not in LABELS:
            raise AnnotationError(f"label must be one of {LABELS}, got {self.label!r}")
        if self.coded_case is not None and self.coded_case not in CODED_CASES:
            raise AnnotationError(f"unknown coded case {self.coded_case!r}")


@dataclass
class FinalDecision:
    candidate_id: str
    resolution: str  # positive | negative | unsure | disagree
    method: str | None  # unanimous | adjudicated | None while disagreeing


@dataclass
class EnqueueResult:
    enqueued: int
    rejected: list[tuple[str, str]] = field(default_factory=list)
    already_present: int = 0


# --- agreement ------------------------------------------------------------------


def cohen_kappa(labels_a, labels_b, mode: str = "include_unsure") -> float:
    """Chance-corrected agreement for two raters over the same items.

    mode='include_unsure' treats unsure as its own category;
    mode='exclude_unsure' drops items where either rater was unsure.
    """
    if mode not in ("include_unsure", "exclude_unsure"):
        raise ValueError(f"bad kappa mode {mode!r}")
    if len(labels_a) != len(labels_b):
        raise ValueError("label lists must be aligned")
    pairs = list(zip(labels_a, labels_b))
    if mode == "exclude_unsure":
        pairs = [(a, b) for a, b in pairs if a != "unsure" and b != "unsure"]
    if not pairs:
        raise AnnotationError("no overlapping labels to compare")
    n = len(pairs)
    observed = sum(1 for a, b in pairs if a == b) / n
    count_a = Counter(a for a, _ in pairs)
    count_b = Counter(b for _, b in pairs)
    expected = sum(count_a[c] * count_b[c] for c in set(count_a) | set(count_b)) / (n * n)
    if expected == 1.0:
        if observed == 1.0:
            return 1.0
        raise AnnotationError("degenerate kappa: chance agreement is 1 without full agreement")
    return (observed - expected) / (1.0 - expected)


def fleiss_kappa(label_matrix) -> float:
    """Multi-rater agreement over per-item category counts.

    ``label_matrix`` is a list of items, each a mapping or list of counts
    per category.  Items with fewer than 2 ratings are excluded with a
    warning.  Handles unequal rater counts via the per-item pairwise
    agreement form (reduces to the standard formula when counts are equal).
    """
    rows: list[list[int]] = []
    categories: list[str] | None = None
    for item in label_matrix:
        if isinstance(item, dict):
            if categories is None:
                categories = sorted({c for it in label_matrix for c in it})
            rows.append([int(item.get(c, 0)) for c in categories])
        else:
            rows.append([int(c) for c in item])
    usable = []
    for i, row in enumerate(rows):
        if sum(row) < 2:
            logger.warning("fleiss_kappa: item %d has <2 ratings; excluded", i)
            continue
        usable.append(row)
    if not usable:
        raise AnnotationError("no items with at least 2 ratings")
    total_ratings = sum(sum(row) for row in usable)
    n_categories = len(usable[0])
    p_per_category = [
        sum(row[j] for row in usable) / total_ratings for j in range(n_categories)
    ]
    agreements = []
    for row in usable:
        n_i = sum(row)
        agreements.append((sum(c * c for c in row) - n_i) / (n_i * (n_i - 1)))
    mean_agreement = sum(agreements) / len(agreements)
    expected = sum(p * p for p in p_per_category)
    if expected == 1.0:
        if mean_agreement == 1.0:
            return 1.0
        raise AnnotationError("degenerate kappa: chance agreement is 1 without full agreement")
    return (mean_agreement - expected) / (1.0 - expected)


# --- store ----------------------------------------------------------------------


class AnnotationStore:
    """Event-sourced annotation state in a single directory."""

    def __init__(self, root, required_annotators: int = 1):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.required_annotators = required_annotators
        self._log_path = self.root / "events.jsonl"
        self._lock = threading.RLock()
        self.annotators: set[str] = set()
        self.candidates: dict[str, Candidate] = {}
        self.labels: dict[tuple[str, str], LabelRecord] = {}
        self.label_history: list[LabelRecord] = []
        self.adjudications: dict[str, str] = {}
        self.model_lineage: list[dict] = []
        if self._log_path.exists():
            self._replay()

    # -- event log ---------------------------------------------------------

    def _replay(self) -> None:
        with open(self._log_path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    self._apply(json.loads(line), record=False)

    def _append(self, event: dict) -> None:
        with open(self._log_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(event, ensure_ascii=False, sort_keys=True) + "\n")

    def _apply(self, event: dict, record: bool = True) -> None:
        kind = event["kind"]
        if kind == "annotator":
            self.annotators.add(event["annotator_id"])
        elif kind == "candidate":
            cand = Candidate(
                candidate_id=event["candidate_id"],
                event_ref=event["event_ref"],
                stratum=event["stratum"],
                status=event["status"],
                view=event["view"],
            )
            self.candidates[cand.candidate_id] = cand
        elif kind == "label":
            rec = LabelRecord(
                candidate_id=event["candidate_id"],
                annotator_id=event["annotator_id"],
                label=event["label"],
                coded_case=event.get("coded_case"),
                confident=event.get("confident"),
                submitted_at=event.get("submitted_at", ""),
            )
            self.labels[(rec.candidate_id, rec.annotator_id)] = rec
            self.label_history.append(rec)
        elif kind == "status":
            self.candidates[event["candidate_id"]].status = event["status"]
        elif kind == "adjudication":
            self.adjudications[event["candidate_id"]] = event["resolution"]
        elif kind == "model":
            self.model_lineage.append(event)
        else:
            raise AnnotationError(f"unknown log event kind {kind!r}")
        if record:
            self._append(event)

    # -- annotators ----------------------------------------------------------

    def register_annotator(self, annotator_id: str) -> None:
        if not annotator_id:
            raise AnnotationError("annotator id must be nonempty")
        with self._lock:
            if annotator_id not in self.annotators:
                self._apply({"kind": "annotator", "annotator_id": annotator_id})

    # -- queue ----------------------------------------------------------------

    def enqueue(
        self,
        events: list[ChangeEvent],
        stratum: str,
        sampler: str = "uniform",
        k: int | None = None,
        seed: int = 0,
    ) -> EnqueueResult:
        """Create pending candidates from events, deterministically.

        Popular strata enforce the follower floor; ineligible events are
        reported as rejected.  Events already enqueued are skipped.
        """
        if stratum not in STRATA:
            raise AnnotationError(f"stratum must be one of {STRATA}")
        if sampler not in ("uniform", "top_k_followers"):
            raise AnnotationError(f"unknown sampler {sampler!r}")
        rejected: list[tuple[str, str]] = []
        eligible: list[ChangeEvent] = []
        for event in events:
            if stratum != "integrity" and event.prev.followers_count < POPULAR_FOLLOWER_FLOOR:
                rejected.append(
                    (
                        event.event_ref,
                        f"below the {POPULAR_FOLLOWER_FLOOR}-follower floor "
                        f"({event.prev.followers_count})",
                    )
                )
                continue
            eligible.append(event)
        if sampler == "top_k_followers":
            eligible.sort(key=lambda e: (-e.prev.followers_count, e.event_ref))
            chosen = eligible if k is None else eligible[:k]
        else:
            eligible.sort(key=lambda e: e.event_ref)
            if k is None or k >= len(eligible):
                chosen = eligible
            else:
                import random as _random

                chosen = _random.Random(seed).sample(eligible, k)
        enqueued = 0
        already = 0
        with self._lock:
            existing_refs = {c.event_ref for c in self.candidates.values()}
            for event in chosen:
                if event.event_ref in existing_refs:
                    already += 1
                    continue
                candidate_id = f"cand:{event.event_ref}"
                self._apply(
                    {
                        "kind": "candidate",
                        "candidate_id": candidate_id,
                        "event_ref": event.event_ref,
                        "stratum": stratum,
                        "status": "pending",
                        "view": candidate_view(event),
                    }
                )
                enqueued += 1
        return EnqueueResult(enqueued=enqueued, rejected=rejected, already_present=already)

    def next_candidate(self, annotator_id: str) -> Candidate | None:
        """The first pending candidate this annotator has not labeled yet."""
        with self._lock:
            if annotator_id not in self.annotators:
                raise UnknownAnnotatorError(f"annotator {annotator_id!r} is not registered")
            pending = sorted(
                (c for c in self.candidates.values() if c.status == "pending"),
                key=lambda c: (c.stratum, c.candidate_id),
            )
            for candidate in pending:
                if (candidate.candidate_id, annotator_id) not in self.labels:
                    return candidate
            return None

    def submit_label(self, record: LabelRecord) -> bool:
        """Store one label; returns True when it overwrote an earlier one.

        The event log keeps every version, so overwrites stay auditable.
        """
        record.validate()
        with self._lock:
            if record.annotator_id not in self.annotators:
                raise UnknownAnnotatorError(f"annotator {record.annotator_id!r} is not registered")
            candidate = self.candidates.get(record.candidate_id)
            if candidate is None:
                raise UnknownCandidateError(f"no candidate {record.candidate_id!r}")
            overwrote = (record.candidate_id, record.annotator_id) in self.labels
            self._apply(
                {
                    "kind": "label",
                    "candidate_id": record.candidate_id,
                    "annotator_id": record.annotator_id,
                    "label": record.label,
                    "coded_case": record.coded_case,
                    "confident": record.confident,
                    "submitted_at": record.submitted_at,
                }
            )
            rater_count = len(
                {a for (cid, a) in self.labels if cid == record.candidate_id}
            )
            if candidate.status == "pending" and rater_count >= self.required_annotators:
                self._apply(
                    {"kind": "status", "candidate_id": record.candidate_id, "status": "labeled"}
                )
            return overwrote

    def skip_candidate(self, candidate_id: str) -> None:
        with self._lock:
            candidate = self.candidates.get(candidate_id)
            if candidate is None:
                raise UnknownCandidateError(f"no candidate {candidate_id!r}")
            if candidate.status == "pending":
                self._apply({"kind": "status", "candidate_id": candidate_id, "status": "skipped"})

    def adjudicate(self, candidate_id: str, resolution: str) -> None:
        if resolution not in LABELS:
            raise AnnotationError(f"adjudicated resolution must be one of {LABELS}")
        with self._lock:
            if candidate_id not in self.candidates:
                raise UnknownCandidateError(f"no candidate {candidate_id!r}")
            self._apply(
                {"kind": "adjudication", "candidate_id": candidate_id, "resolution": resolution}
            )

    # -- readouts ---------------------------------------------------------------

    def labels_for_candidate(self, candidate_id: str) -> list[LabelRecord]:
        return [rec for (cid, _), rec in sorted(self.labels.items()) if cid == candidate_id]

    def decision(self, candidate_id: str) -> FinalDecision | None:
        """Unanimous labels decide; conflicts are 'disagree' until adjudicated."""
        if candidate_id in self.adjudications:
            return FinalDecision(candidate_id, self.adjudications[candidate_id], "adjudicated")
        labels = {rec.label for rec in self.labels_for_candidate(candidate_id)}
        if not labels:
            return None
        if len(labels) == 1:
            return FinalDecision(candidate_id, labels.pop(), "unanimous")
        return FinalDecision(candidate_id, "disagree", None)

    def queue_stats(self) -> dict:
        by_status = Counter(c.status for c in self.candidates.values())
        per_annotator = Counter(annot for (_, annot) in self.labels)
        return {
            "total": len(self.candidates),
            "pending": by_status.get("pending", 0),
            "labeled": by_status.get("labeled", 0),
            "skipped": by_status.get("skipped", 0),
            "labels_by_annotator": dict(sorted(per_annotator.items())),
        }

    def agreement(self, mode: str = "include_unsure") -> dict:
        """Pairwise Cohen kappa for every annotator pair plus Fleiss kappa."""
        per_annotator: dict[str, dict[str, str]] = defaultdict(dict)
        for (cid, annot), rec in self.labels.items():
            per_annotator[annot][cid] = rec.label
        annotators = sorted(per_annotator)
        cohen: dict[str, float | None] = {}
        for i, a in enumerate(annotators):
            for b in annotators[i + 1 :]:
                shared = sorted(set(per_annotator[a]) & set(per_annotator[b]))
                key = f"{a}|{b}"
                if not shared:
                    cohen[key] = None
                    continue
                try:
                    cohen[key] = cohen_kappa(
                        [per_annotator[a][c] for c in shared],
                        [per_annotator[b][c] for c in shared],
                        mode=mode,
                    )
                except AnnotationError:
                    cohen[key] = None
        counts_per_item = []
        for cid in sorted(self.candidates):
            recs = self.labels_for_candidate(cid)
            if mode == "exclude_unsure":
                recs = [r for r in recs if r.label != "unsure"]
            if len(recs) >= 2:
                counts_per_item.append(Counter(r.label for r in recs))
        fleiss: float | None
        try:
            fleiss = fleiss_kappa(counts_per_item) if counts_per_item else None
        except AnnotationError:
            fleiss = None
        distribution = Counter(rec.label for rec in self.labels.values())
        return {
            "mode": mode,
            "cohen": cohen,
            "fleiss": fleiss,
            "label_distribution": dict(sorted(distribution.items())),
        }

    def export_training_rows(
        self, annotator: str | None = None, resolved_only: bool = True
    ) -> list[tuple[str, str]]:
        """(event_ref, label) rows; unsure and disagree are excluded."""
        rows: list[tuple[str, str]] = []
        for cid in sorted(self.candidates):
            candidate = self.candidates[cid]
            if annotator is not None:
                rec = self.labels.get((cid, annotator))
                if rec is not None and rec.label in ("positive", "negative"):
                    rows.append((candidate.event_ref, rec.label))
                continue
            decision = self.decision(cid)
            if decision is None:
                continue
            if resolved_only and decision.resolution not in ("positive", "negative"):
                continue
            rows.append((candidate.event_ref, decision.resolution))
        return rows

    def export_training_csv(self, annotator: str | None = None) -> str:
        lines = ["event_ref,label"]
        lines += [f"{ref},{label}" for ref, label in self.export_training_rows(annotator)]
        return "\n".join(lines) + "\n"

    def record_model(self, entry: dict) -> None:
        with self._lock:
            self._apply({"kind": "model", **entry})


# --- active learning ----------------------------------------------------------------


@dataclass
class CycleResult:
    enqueued: int
    rejected: list[tuple[str, str]]
    scored: int
    trained: bool
    model_path: str | None
    notice: str | None = None


class AnnotationService:
    """Queue + event pool + model registry, as one coordinated unit."""

    def __init__(
        self,
        store: AnnotationStore,
        events: list[ChangeEvent],
        features: dict[str, FeatureVector],
        models_dir,
        model: ModelArtifact | None = None,
        train_config: TrainConfig | None = None,
    ):
        self.store = store
        self.events = {e.event_ref: e for e in events}
        self.features = features
        self.models_dir = Path(models_dir)
        self.models_dir.mkdir(parents=True, exist_ok=True)
        self.model = model if model is not None else baseline_model()
        self.train_config = train_config if train_config is not None else TrainConfig()

    def active_learning_cycle(
        self,
        budget: int,
        stratum: str = "integrity",
        strategy: str = "top",
        sampler_seed: int = 0,
    ) -> CycleResult:
        """Score unlabeled events, enqueue the most informative, retrain.

        strategy 'top' prioritizes the highest positive scores (harvesting
        likely positives); 'boundary' prioritizes scores closest to 0.5.
        """
        if strategy not in ("top", "boundary"):
            raise AnnotationError(f"unknown strategy {strategy!r}")
        if not self.store.labels:
            raise AnnotationError("no labeled batch exists yet; label some candidates first")
        queued_refs = {c.event_ref for c in self.store.candidates.values()}
        pool = [ref for ref in sorted(self.events) if ref not in queued_refs]
        if not pool:
            return CycleResult(
                enqueued=0, rejected=[], scored=0, trained=False, model_path=None,
                notice="no unlabeled events to score",
            )
        scored: list[tuple[float, str]] = []
        for ref in pool:
            fv = self.features.get(ref)
            if fv is None:
                continue
            scored.append((predict(self.model, fv), ref))
        if strategy == "top":
            scored.sort(key=lambda pair: (-pair[0], pair[1]))
        else:
            scored.sort(key=lambda pair: (abs(pair[0] - 0.5), pair[1]))
        chosen = [self.events[ref] for _, ref in scored[:budget]]
        result = self.store.enqueue(chosen, stratum=stratum, sampler="uniform",
                                    seed=sampler_seed)
        trained, model_path, notice = self._retrain()
        return CycleResult(
            enqueued=result.enqueued,
            rejected=result.rejected,
            scored=len(scored),
            trained=trained,
            model_path=model_path,
            notice=notice,
        )

    def _retrain(self) -> tuple[bool, str | None, str | None]:
        rows = self.store.export_training_rows()
        examples = []
        for ref, label in rows:
            fv = self.features.get(ref)
            if fv is not None:
                examples.append((fv, 1 if label == "positive" else 0))
        n_pos = sum(lbl for _, lbl in examples)
        n_neg = len(examples) - n_pos
        if n_pos < 2 or n_neg < 2:
            return False, None, (
                f"not enough resolved labels to retrain ({n_pos} pos / {n_neg} neg)"
            )
        model = train_forest(examples, self.train_config)
        path = self.models_dir / f"model-{len(self.store.model_lineage) + 1:04d}.json"
        save_model(model, path)
        self.model = model
        self.store.record_model(
            {
                "path": str(path),
                "examples": len(examples),
                "positives": n_pos,
                "negatives": n_neg,
                "config": self.train_config.to_dict(),
            }
        )
        return True, str(path), None
