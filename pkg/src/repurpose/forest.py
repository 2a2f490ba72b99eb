"""Decision trees and random forests over named feature vectors.

Trees store feature NAMES at their split nodes, so a serialized model is
self-describing and survives column reordering checks.  Training is
deterministic for a fixed seed: every tree derives its own RNG from the
master seed and its tree index, which also makes parallel and serial
training produce identical forests.

The baseline model is a fixed depth-two tree over the name/description
edit-distance features; it is the reference classifier the forest has to
beat and doubles as a cheap labeling-queue sampler.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from itertools import product

import numpy as np

from .features import FeatureVector
from .metrics import EvalReport, evaluate

logger = logging.getLogger(__name__)

MODEL_FORMAT = "repurpose-model"
MODEL_VERSION = 1

BASELINE_NAME_THRESHOLD = 0.721
BASELINE_DESCRIPTION_THRESHOLD = 0.742


class ClassifierError(RuntimeError):
    pass


class MissingFeatureError(ClassifierError):
    pass


class FeatureOrderMismatch(ClassifierError):
    pass


class TrainingError(ClassifierError):
    pass


class ModelFormatError(ClassifierError):
    """The model file is corrupt or not a model file at all."""


class ModelVersionError(ClassifierError):
    """The model file comes from an unsupported format version."""


@dataclass
class TrainConfig:
    n_trees: int = 100
    max_depth: int = 8
    min_leaf: int = 2
    features_per_split: int | None = None  # None -> ceil(sqrt(#features))
    seed: int = 42

    def resolved_features_per_split(self, n_features: int) -> int:
        if self.features_per_split is not None:
            return max(1, min(self.features_per_split, n_features))
        return max(1, min(math.ceil(math.sqrt(n_features)), n_features))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ModelArtifact:
    kind: str  # "baseline_tree" | "random_forest"
    feature_order: list[str]
    trees: list[dict]
    training_config: dict = field(default_factory=dict)
    created_at: str | None = None

    def __post_init__(self) -> None:
        for tree in self.trees:
            _check_tree(tree, set(self.feature_order))

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "kind": self.kind,
            "feature_order": self.feature_order,
            "training_config": self.training_config,
            "created_at": self.created_at,
            "trees": self.trees,
        }


def _check_tree(node: dict, known_features: set[str]) -> None:
    if "score" in node:
        if not 0.0 <= node["score"] <= 1.0:
            raise ValueError(f"leaf score {node['score']} outside [0, 1]")
        return
    if node["feature"] not in known_features:
        raise ValueError(f"split on unknown feature {node['feature']!r}")
    _check_tree(node["left"], known_features)
    _check_tree(node["right"], known_features)


# --- baseline ------------------------------------------------------------------


def baseline_model() -> ModelArtifact:
    """Depth-two tree: positive iff nld_name and nld_description both exceed
    their fixed thresholds (strict inequalities)."""
    tree = {
        "feature": "nld_name",
        "threshold": BASELINE_NAME_THRESHOLD,
        "left": {"score": 0.0},
        "right": {
            "feature": "nld_description",
            "threshold": BASELINE_DESCRIPTION_THRESHOLD,
            "left": {"score": 0.0},
            "right": {"score": 1.0},
        },
    }
    return ModelArtifact(
        kind="baseline_tree",
        feature_order=["nld_name", "nld_description"],
        trees=[tree],
        training_config={"rule": "nld_name and nld_description threshold pair"},
    )


def baseline_classify(fv: FeatureVector) -> str:
    """'positive' iff both edit-distance features strictly exceed the fixed
    thresholds, else 'negative'."""
    try:
        name_dist = fv.values["nld_name"]
        desc_dist = fv.values["nld_description"]
    except KeyError as exc:
        raise MissingFeatureError(f"baseline needs feature {exc}") from exc
    positive = name_dist > BASELINE_NAME_THRESHOLD and desc_dist > BASELINE_DESCRIPTION_THRESHOLD
    return "positive" if positive else "negative"


# --- prediction ------------------------------------------------------------------


def _tree_score(node: dict, row: np.ndarray, index_of: dict[str, int]) -> float:
    while "score" not in node:
        value = row[index_of[node["feature"]]]
        node = node["left"] if value <= node["threshold"] else node["right"]
    return node["score"]


def predict(model: ModelArtifact, fv: FeatureVector) -> float:
    """Mean of the trees' leaf scores, in [0, 1]."""
    if list(fv.feature_names) != list(model.feature_order):
        # a vector carrying extra features is fine as long as all model
        # features are present; a missing feature is a hard mismatch
        missing = [n for n in model.feature_order if n not in fv.values]
        if missing:
            raise FeatureOrderMismatch(f"vector {fv.event_ref} lacks features {missing}")
    row = fv.as_array(model.feature_order)
    index_of = {name: i for i, name in enumerate(model.feature_order)}
    return float(np.mean([_tree_score(t, row, index_of) for t in model.trees]))


def predict_label(model: ModelArtifact, fv: FeatureVector, threshold: float = 0.5) -> str:
    return "positive" if predict(model, fv) >= threshold else "negative"


def predict_many(model: ModelArtifact, vectors: list[FeatureVector]) -> list[float]:
    return [predict(model, fv) for fv in vectors]


# --- training ------------------------------------------------------------------


def _best_split(X: np.ndarray, y: np.ndarray, feature_ids: np.ndarray, min_leaf: int):
    """Lowest weighted Gini impurity over the candidate features.

    Returns (feature_id, threshold, left_mask) or None when no split leaves
    min_leaf samples on both sides.
    """
    n = len(y)
    total_pos = int(y.sum())
    best = None
    best_impurity = np.inf
    for fid in feature_ids:
        values = X[:, fid]
        order = np.argsort(values, kind="mergesort")
        sv = values[order]
        sy = y[order]
        cum_pos = np.cumsum(sy)
        left_sizes = np.arange(1, n)
        valid = sv[:-1] != sv[1:]
        valid &= (left_sizes >= min_leaf) & (n - left_sizes >= min_leaf)
        if not valid.any():
            continue
        nl = left_sizes[valid].astype(np.float64)
        nr = n - nl
        pos_l = cum_pos[:-1][valid].astype(np.float64)
        pos_r = total_pos - pos_l
        pl = pos_l / nl
        pr = pos_r / nr
        gini = (nl * (2 * pl * (1 - pl)) + nr * (2 * pr * (1 - pr))) / n
        k = int(np.argmin(gini))
        if gini[k] < best_impurity:
            best_impurity = float(gini[k])
            split_at = np.flatnonzero(valid)[k]
            threshold = float(sv[split_at])
            best = (int(fid), threshold, values <= threshold)
    return best


def _grow_tree(
    X: np.ndarray,
    y: np.ndarray,
    rng: np.random.Generator,
    config: TrainConfig,
    feature_names: list[str],
    depth: int = 0,
) -> dict:
    n = len(y)
    pos = int(y.sum())
    if pos == 0 or pos == n or depth >= config.max_depth or n < 2 * config.min_leaf:
        return {"score": pos / n}
    m = config.resolved_features_per_split(X.shape[1])
    feature_ids = np.sort(rng.choice(X.shape[1], size=m, replace=False))
    split = _best_split(X, y, feature_ids, config.min_leaf)
    if split is None:
        return {"score": pos / n}
    fid, threshold, left_mask = split
    return {
        "feature": feature_names[fid],
        "threshold": threshold,
        "left": _grow_tree(X[left_mask], y[left_mask], rng, config, feature_names, depth + 1),
        "right": _grow_tree(X[~left_mask], y[~left_mask], rng, config, feature_names, depth + 1),
    }


def _train_one_tree(X, y, seed: int, tree_index: int, config: TrainConfig, feature_names):
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(tree_index,)))
    sample = rng.integers(0, len(y), size=len(y))
    return _grow_tree(X[sample], y[sample], rng, config, feature_names)


def _as_matrix(vectors: list[FeatureVector]) -> tuple[np.ndarray, list[str]]:
    feature_order = list(vectors[0].feature_names)
    rows = []
    for fv in vectors:
        if list(fv.feature_names) != feature_order:
            raise FeatureOrderMismatch(
                f"vector {fv.event_ref} has a different feature schema than the first vector"
            )
        rows.append(fv.as_array(feature_order))
    return np.vstack(rows), feature_order


def train_forest(
    examples: list[tuple[FeatureVector, int]],
    config: TrainConfig | None = None,
    n_jobs: int = 1,
    created_at: str | None = None,
) -> ModelArtifact:
    """Bagged Gini decision trees with per-split feature subsampling.

    Deterministic for a fixed config.seed regardless of n_jobs.
    """
    if config is None:
        config = TrainConfig()
    if not examples:
        raise TrainingError("no training examples")
    vectors, labels = zip(*examples)
    y = np.asarray(labels, dtype=np.int64)
    if set(np.unique(y)) - {0, 1}:
        raise TrainingError("labels must be binary 0/1")
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos < 2 or n_neg < 2:
        raise TrainingError(f"need at least 2 examples per class, got {n_pos} pos / {n_neg} neg")
    X, feature_order = _as_matrix(list(vectors))

    def build(i: int) -> dict:
        return _train_one_tree(X, y, config.seed, i, config, feature_order)

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            trees = list(pool.map(build, range(config.n_trees)))
    else:
        trees = [build(i) for i in range(config.n_trees)]
    return ModelArtifact(
        kind="random_forest",
        feature_order=feature_order,
        trees=trees,
        training_config=config.to_dict(),
        created_at=created_at,
    )


# --- persistence -----------------------------------------------------------------


def save_model(model: ModelArtifact, path) -> None:
    """Canonical JSON: stable key order, so identical models are identical bytes."""
    payload = json.dumps(model.to_dict(), sort_keys=True, separators=(",", ":")) + "\n"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(payload)


def load_model(path) -> ModelArtifact:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"cannot read model file {path}: {exc}") from exc
    if not isinstance(raw, dict) or raw.get("format") != MODEL_FORMAT:
        raise ModelFormatError(f"{path} is not a {MODEL_FORMAT} file")
    version = raw.get("version")
    if version != MODEL_VERSION:
        raise ModelVersionError(f"{path} has version {version}, supported: {MODEL_VERSION}")
    try:
        return ModelArtifact(
            kind=raw["kind"],
            feature_order=list(raw["feature_order"]),
            trees=raw["trees"],
            training_config=raw.get("training_config", {}),
            created_at=raw.get("created_at"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"model file {path} is malformed: {exc}") from exc


# --- cross-validation and grid search ----------------------------------------------


def stratified_folds(labels, k: int, seed: int) -> list[np.ndarray]:
    """k disjoint folds covering all indices, class ratios within one example."""
    if k < 2:
        raise ValueError("k_folds must be >= 2")
    y = np.asarray(labels, dtype=np.int64)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(0xF01D,)))
    folds: list[list[int]] = [[] for _ in range(k)]
    for cls in (0, 1):
        idx = np.flatnonzero(y == cls)
        rng.shuffle(idx)
        for i, example in enumerate(idx):
            folds[i % k].append(int(example))
    return [np.array(sorted(f), dtype=np.int64) for f in folds]


@dataclass
class GridCell:
    params: dict
    fold_reports: list[EvalReport]
    mean_f1: float
    mean_auc: float | None


@dataclass
class GridSearchResult:
    best_config: TrainConfig
    best_score: float
    metric: str
    cells: list[GridCell]


def grid_search(
    examples: list[tuple[FeatureVector, int]],
    param_grid: dict[str, list],
    k_folds: int = 5,
    seed: int = 42,
    metric: str = "f1",
    threshold: float = 0.5,
) -> GridSearchResult:
    """Exhaustive search over the grid with stratified k-fold CV.

    metric selects the model: 'f1' or 'auc'.  Folds where AUC is undefined
    (single-class) are skipped with a warning.
    """
    if metric not in ("f1", "auc"):
        raise ValueError(f"metric must be 'f1' or 'auc', got {metric!r}")
    unknown = set(param_grid) - set(TrainConfig().to_dict())
    if unknown:
        raise ValueError(f"unknown grid parameters: {sorted(unknown)}")
    labels = np.asarray([label for _, label in examples], dtype=np.int64)
    folds = stratified_folds(labels, k_folds, seed)
    keys = sorted(param_grid)
    cells: list[GridCell] = []
    best_cell: GridCell | None = None
    best_config: TrainConfig | None = None
    best_score = -np.inf
    for combo in product(*(param_grid[k] for k in keys)):
        params = dict(zip(keys, combo))
        config = replace(TrainConfig(seed=seed), **params)
        reports = []
        for fold in folds:
            in_fold = np.zeros(len(examples), dtype=bool)
            in_fold[fold] = True
            train = [examples[i] for i in np.flatnonzero(~in_fold)]
            test = [examples[i] for i in fold]
            model = train_forest(train, config)
            scores = predict_many(model, [fv for fv, _ in test])
            report = evaluate(scores, [label for _, label in test], threshold)
            if report.auc is None:
                logger.warning("fold with a single class: AUC skipped for params %s", params)
            reports.append(report)
        mean_f1 = float(np.mean([r.f1 for r in reports]))
        defined_aucs = [r.auc for r in reports if r.auc is not None]
        mean_auc = float(np.mean(defined_aucs)) if defined_aucs else None
        cell = GridCell(params=params, fold_reports=reports, mean_f1=mean_f1, mean_auc=mean_auc)
        cells.append(cell)
        score = mean_f1 if metric == "f1" else (mean_auc if mean_auc is not None else -np.inf)
        if score > best_score:
            best_score = score
            best_cell = cell
            best_config = config
    assert best_cell is not None and best_config is not None
    return GridSearchResult(
        best_config=best_config, best_score=float(best_score), metric=metric, cells=cells
    )
