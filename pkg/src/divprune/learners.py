"""Base learners, ensemble constructors and weighted plurality voting."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset, bootstrap_sample

MODEL_VERSION = "divprune-model-v1"

# A weighted vote sum with |s| <= TIE_ATOL is a tie. Sums of identical
# float weights can miss exact cancellation by a few ulps.
TIE_ATOL = 1e-12

# Split scores closer than this are equal and resolved by the index order.
_SCORE_TOL = 1e-12


def _uniform(n: int) -> np.ndarray:
    return np.full(n, 1.0 / n)


def _check_weights(d: Dataset, weights) -> np.ndarray:
    if weights is None:
        return _uniform(d.n_instances)
    w = np.asarray(weights, dtype=float)
    if w.shape != (d.n_instances,):
        raise ValueError(
            f"instance_weights has shape {w.shape}, expected ({d.n_instances},)")
    if np.any(w < 0):
        raise ValueError("instance_weights must be nonnegative")
    total = w.sum()
    if total <= 0:
        raise ValueError("instance_weights must have positive total")
    return w / total


def _majority(y: np.ndarray, w: np.ndarray) -> int:
    return 1 if w[y == 1].sum() >= w[y == -1].sum() else -1


def _midpoint(lo: float, hi: float) -> float:
    t = (lo + hi) / 2.0
    # adjacent floats: the midpoint may round onto ``hi``
    return lo if t >= hi else t


# ---------------------------------------------------------------------------
# classifiers


class Stump:
    """One-level threshold classifier.

    Predicts ``polarity`` where ``x[feature] > threshold`` and ``-polarity``
    elsewhere. ``feature == -1`` marks a constant classifier that always
    predicts ``polarity``.
    """

    kind = "stump"

    def __init__(self, feature: int, threshold: float, polarity: int):
        self.feature = int(feature)
        self.threshold = float(threshold)
        self.polarity = int(polarity)

    @classmethod
    def constant(cls, label: int) -> "Stump":
        return cls(-1, 0.0, label)

    @property
    def is_constant(self) -> bool:
        return self.feature < 0

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.is_constant:
            return np.full(X.shape[0], self.polarity, dtype=np.int8)
        above = X[:, self.feature] > self.threshold
        return np.where(above, self.polarity, -self.polarity).astype(np.int8)

    @property
    def descriptor(self) -> str:
        if self.is_constant:
            return f"stump(constant={self.polarity:+d})"
        return (f"stump(feature={self.feature}, threshold={self.threshold!r}, "
                f"polarity={self.polarity:+d})")

    def to_dict(self) -> dict:
        return {"kind": "stump", "feature": self.feature,
                "threshold": self.threshold, "polarity": self.polarity}

    @classmethod
    def from_dict(cls, doc: dict) -> "Stump":
        return cls(doc["feature"], doc["threshold"], doc["polarity"])

    def __repr__(self):
        return self.descriptor


class Tree:
    """Binary decision tree stored as parallel node arrays.

    Leaves have ``feature == -1`` and predict ``value``. Internal nodes send
    ``x[feature] <= threshold`` to ``left`` and the rest to ``right``.
    """

    kind = "tree"

    def __init__(self, feature, threshold, left, right, value, max_depth: int):
        self.feature = [int(v) for v in feature]
        self.threshold = [float(v) for v in threshold]
        self.left = [int(v) for v in left]
        self.right = [int(v) for v in right]
        self.value = [int(v) for v in value]
        self.max_depth = int(max_depth)

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def n_leaves(self) -> int:
        return sum(1 for f in self.feature if f < 0)

    def depth(self) -> int:
        def _d(node):
            if self.feature[node] < 0:
                return 0
            return 1 + max(_d(self.left[node]), _d(self.right[node]))
        return _d(0)

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.empty(X.shape[0], dtype=np.int8)
        stack = [(0, np.arange(X.shape[0]))]
        while stack:
            node, idx = stack.pop()
            f = self.feature[node]
            if f < 0:
                out[idx] = self.value[node]
                continue
            go_left = X[idx, f] <= self.threshold[node]
            stack.append((self.left[node], idx[go_left]))
            stack.append((self.right[node], idx[~go_left]))
        return out

    @property
    def descriptor(self) -> str:
        return f"tree(max_depth={self.max_depth}, leaves={self.n_leaves})"

    def to_dict(self) -> dict:
        return {"kind": "tree", "max_depth": self.max_depth,
                "feature": self.feature, "threshold": self.threshold,
                "left": self.left, "right": self.right, "value": self.value}

    @classmethod
    def from_dict(cls, doc: dict) -> "Tree":
        return cls(doc["feature"], doc["threshold"], doc["left"], doc["right"],
                   doc["value"], doc["max_depth"])

    def __repr__(self):
        return self.descriptor


def classifier_from_dict(doc: dict):
    kind = doc.get("kind")
    if kind == "stump":
        return Stump.from_dict(doc)
    if kind == "tree":
        return Tree.from_dict(doc)
    raise ValueError(f"unknown classifier kind {kind!r}")


# ---------------------------------------------------------------------------
# training


def _stump_search(X: np.ndarray, y: np.ndarray, w: np.ndarray):
    """Exhaustive weighted 0/1 search over midpoint thresholds.

    Returns ``(error, feature, threshold, polarity)`` or ``None`` when no
    feature has two distinct values. Candidate order for ties: feature
    index, then threshold, then polarity +1 before -1.
    """
    best = None
    pos_w = np.where(y == 1, w, 0.0)
    neg_w = np.where(y == -1, w, 0.0)
    total_pos, total_neg = pos_w.sum(), neg_w.sum()
    per_feature = []
    for f in range(X.shape[1]):
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        valid = np.flatnonzero(xs[:-1] < xs[1:])
        if valid.size == 0:
            continue
        left_pos = np.cumsum(pos_w[order])[valid]
        left_neg = np.cumsum(neg_w[order])[valid]
        # polarity +1 predicts -1 on the left, +1 on the right
        err_plus = left_pos + (total_neg - left_neg)
        err_minus = left_neg + (total_pos - left_pos)
        errs = np.column_stack([err_plus, err_minus]).ravel()
        per_feature.append((f, xs, valid, errs))
    if not per_feature:
        return None
    global_min = min(errs.min() for _, _, _, errs in per_feature)
    for f, xs, valid, errs in per_feature:
        hits = np.flatnonzero(errs <= global_min + _SCORE_TOL)
        if hits.size:
            k = int(hits[0])
            i = int(valid[k // 2])
            polarity = 1 if k % 2 == 0 else -1
            best = (float(errs[k]), f, _midpoint(xs[i], xs[i + 1]), polarity)
            break
    return best


def train_stump(d: Dataset, instance_weights=None) -> Stump:
    """Decision stump minimizing weighted 0/1 error.

    Candidates are every midpoint threshold with both polarities plus the
    weighted-majority constant, which only wins when strictly better.
    """
    w = _check_weights(d, instance_weights)
    y = d.labels
    if np.all(y == y[0]):
        return Stump.constant(int(y[0]))
    found = _stump_search(d.features, y, w)
    majority = _majority(y, w)
    constant_err = float(w[y != majority].sum())
    # a split is kept unless the majority constant is strictly better
    if found is None or constant_err < found[0] - _SCORE_TOL:
        return Stump.constant(majority)
    _, f, thr, pol = found
    return Stump(f, thr, pol)


def _gini_split(X, y, w):
    """Best Gini split for one node: ``(child_score, feature, threshold)``.

    ``child_score`` is the weight-scaled impurity of the two children,
    ``W_L * gini_L + W_R * gini_R``.
    """
    pos_w = np.where(y == 1, w, 0.0)
    best = None
    per_feature = []
    for f in range(X.shape[1]):
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        cw = np.cumsum(w[order])
        cp = np.cumsum(pos_w[order])
        total_w, total_p = cw[-1], cp[-1]
        valid = np.flatnonzero(xs[:-1] < xs[1:])
        if valid.size == 0:
            continue
        wl, pl = cw[valid], cp[valid]
        wr, pr = total_w - wl, total_p - pl
        ok = (wl > 0) & (wr > 0)
        if not ok.any():
            continue
        valid, wl, pl, wr, pr = valid[ok], wl[ok], pl[ok], wr[ok], pr[ok]
        nl, nr = wl - pl, wr - pr
        score = (wl - (pl * pl + nl * nl) / wl) + (wr - (pr * pr + nr * nr) / wr)
        per_feature.append((f, xs, valid, score))
    if not per_feature:
        return None
    global_min = min(s.min() for _, _, _, s in per_feature)
    for f, xs, valid, score in per_feature:
        hits = np.flatnonzero(score <= global_min + _SCORE_TOL)
        if hits.size:
            k = int(hits[0])
            i = int(valid[k])
            best = (float(score[k]), f, _midpoint(xs[i], xs[i + 1]))
            break
    return best


def train_tree(d: Dataset, instance_weights=None, max_depth: int = 3) -> Tree:
    """Greedy CART-style tree with weighted Gini impurity.

    A node becomes a leaf at ``max_depth``, when it is pure, or when no
    split separates two positive-weight children. Zero-gain splits are
    accepted, which lets depth-2 trees solve XOR-like layouts.
    """
    if max_depth < 1:
        raise ValueError("max_depth must be >= 1")
    w = _check_weights(d, instance_weights)
    X, y = d.features, d.labels
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node():
        for arr, v in ((feature, -1), (threshold, 0.0), (left, -1), (right, -1), (value, 0)):
            arr.append(v)
        return len(feature) - 1

    root = new_node()
    stack = [(root, np.arange(d.n_instances), 0)]
    while stack:
        node, idx, depth = stack.pop()
        yi, wi = y[idx], w[idx]
        value[node] = _majority(yi, wi)
        live = wi > 0
        if depth >= max_depth or np.all(yi[live] == yi[live][0]):
            continue
        found = _gini_split(X[idx], yi, wi)
        if found is None:
            continue
        _, f, thr = found
        go_left = X[idx, f] <= thr
        feature[node], threshold[node] = f, thr
        left[node], right[node] = new_node(), new_node()
        # push right first so the left subtree gets the smaller node ids
        stack.append((right[node], idx[~go_left], depth + 1))
        stack.append((left[node], idx[go_left], depth + 1))
    return Tree(feature, threshold, left, right, value, max_depth)


@dataclass(frozen=True)
class LearnerSpec:
    """Base learner recipe: ``stump`` or ``tree`` with a depth limit."""

    kind: str = "stump"
    max_depth: int = 3

    def __post_init__(self):
        if self.kind not in ("stump", "tree"):
            raise ValueError(f"unknown base learner {self.kind!r}")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")

    @classmethod
    def parse(cls, text: str) -> "LearnerSpec":
        """``stump``, ``tree`` or ``tree:DEPTH``."""
        kind, _, depth = text.partition(":")
        return cls(kind, int(depth)) if depth else cls(kind)

    def fit(self, d: Dataset, instance_weights=None):
        if self.kind == "stump":
            return train_stump(d, instance_weights)
        return train_tree(d, instance_weights, self.max_depth)

    @property
    def descriptor(self) -> str:
        return "stump" if self.kind == "stump" else f"tree:{self.max_depth}"

    def to_dict(self) -> dict:
        return {"kind": self.kind, "max_depth": self.max_depth}


# ---------------------------------------------------------------------------
# ensembles


@dataclass(frozen=True, eq=False)
class Ensemble:
    """Members combined by weighted plurality vote.

    Weights are normalized to sum to one on construction.
    """

    members: tuple
    weights: np.ndarray
    method: str = "custom"
    base: LearnerSpec | None = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        members = tuple(self.members)
        if not members:
            raise ValueError("an ensemble needs at least one member")
        w = np.array(self.weights, dtype=float).reshape(-1)
        if w.shape[0] != len(members):
            raise ValueError(f"{len(members)} members but {w.shape[0]} weights")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("ensemble weights must be finite and nonnegative")
        total = math.fsum(w)
        if total <= 0:
            raise ValueError("ensemble weights must have positive total")
        w = w / total
        w.setflags(write=False)
        object.__setattr__(self, "members", members)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, members, **kw) -> "Ensemble":
        members = tuple(members)
        return cls(members, _uniform(len(members)), **kw)

    def __len__(self) -> int:
        return len(self.members)

    def subset(self, indices, method: str | None = None) -> "Ensemble":
        """Sub-ensemble of the given members with their weights renormalized."""
        idx = list(indices)
        return Ensemble(tuple(self.members[i] for i in idx), self.weights[idx],
                        method or self.method, self.base, dict(self.info))

    def predict_members(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.vstack([m.predict(X) for m in self.members]).astype(np.int8)

    def decision_function(self, X) -> np.ndarray:
        return self.weights @ self.predict_members(X)

    def vote(self, X) -> np.ndarray:
        """Weighted plurality vote in {-1, 0, +1}; 0 marks a tie."""
        return votes_from_sums(self.decision_function(X))


def votes_from_sums(s: np.ndarray) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    out = np.sign(s).astype(np.int8)
    out[np.abs(s) <= TIE_ATOL] = 0
    return out


def ensemble_vote(e: Ensemble, instance) -> int:
    """sgn of the weighted member sum for one instance (0 on an exact tie)."""
    x = np.asarray(instance, dtype=float).reshape(1, -1)
    return int(e.vote(x)[0])


def train_bagging(d: Dataset, size: int, base: LearnerSpec | str = "stump",
                  seed: int = 0) -> Ensemble:
    """Bagging: each member sees its own bootstrap resample.

    Member ``j`` draws from the ``j``-th child of ``SeedSequence(seed)``, so
    members are independent of training order.
    """
    if size < 1:
        raise ValueError("ensemble size must be >= 1")
    base = LearnerSpec.parse(base) if isinstance(base, str) else base
    children = np.random.SeedSequence(seed).spawn(size)
    members = []
    for child in children:
        idx = bootstrap_sample(d, child)
        members.append(base.fit(d.subset(idx)))
    return Ensemble.uniform(members, method="bagging", base=base,
                            info={"size": size, "seed": seed})


def train_adaboost(d: Dataset, size: int, base: LearnerSpec | str = "stump") -> Ensemble:
    """Discrete AdaBoost with member weights renormalized to sum to one.

    Stops early when a round reaches zero weighted error (that member is
    kept) or error >= 0.5 (that member is dropped, unless it is the first).
    """
    if size < 1:
        raise ValueError("ensemble size must be >= 1")
    base = LearnerSpec.parse(base) if isinstance(base, str) else base
    n = d.n_instances
    y = d.labels.astype(float)
    w = _uniform(n)
    members, alphas, errors = [], [], []
    for t in range(size):
        clf = base.fit(d, w)
        pred = clf.predict(d.features)
        err = float(w[pred != d.labels].sum())
        errors.append(err)
        if err >= 0.5:
            if t == 0:
                members.append(clf)
                alphas.append(1.0)
            break
        members.append(clf)
        if err <= 0.0:
            alphas.append(0.5 * math.log((1 - 1e-10) / 1e-10))
            break
        alpha = 0.5 * math.log((1.0 - err) / err)
        alphas.append(alpha)
        w = w * np.exp(-alpha * y * pred)
        w = w / w.sum()
    return Ensemble(tuple(members), np.array(alphas), method="adaboost", base=base,
                    info={"size": size, "round_errors": errors})


def train_ensemble(d: Dataset, method: str, size: int, base: LearnerSpec | str,
                   seed: int = 0) -> Ensemble:
    if method == "bagging":
        return train_bagging(d, size, base, seed)
    if method == "adaboost":
        return train_adaboost(d, size, base)
    raise ValueError(f"unknown ensemble method {method!r}")


# ---------------------------------------------------------------------------
# cached predictions


@dataclass(frozen=True, eq=False)
class PredictionMatrix:
    """Member predictions: ``values[j, i] = f_j(x_i)``."""

    values: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.int8)
        y = np.array(self.labels, dtype=np.int8)
        if v.ndim != 2 or v.shape[1] != y.shape[0]:
            raise ValueError(f"values {v.shape} inconsistent with {y.shape[0]} labels")
        if not np.all((v == 1) | (v == -1)):
            raise ValueError("predictions must be -1 or +1")
        v.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "labels", y)

    @property
    def n_classifiers(self) -> int:
        return self.values.shape[0]

    @property
    def n_instances(self) -> int:
        return self.values.shape[1]

    @property
    def margins(self) -> np.ndarray:
        """``margins[j, i] = f_j(x_i) * y_i``."""
        return self.values * self.labels

    def rows(self, indices) -> "PredictionMatrix":
        return PredictionMatrix(self.values[list(indices)], self.labels)

    def weighted_sum(self, weights) -> np.ndarray:
        return np.asarray(weights, dtype=float) @ self.values

    def votes(self, weights) -> np.ndarray:
        return votes_from_sums(self.weighted_sum(weights))


def prediction_matrix(e: Ensemble, d: Dataset) -> PredictionMatrix:
    return PredictionMatrix(e.predict_members(d.features), d.labels)


# ---------------------------------------------------------------------------
# serialization


def ensemble_to_dict(e: Ensemble) -> dict:
    return {
        "version": MODEL_VERSION,
        "method": e.method,
        "base": e.base.to_dict() if e.base else None,
        "info": e.info,
        "weights": [float(v) for v in e.weights],
        "members": [m.to_dict() for m in e.members],
    }


def ensemble_from_dict(doc: dict) -> Ensemble:
    if doc.get("version") != MODEL_VERSION:
        raise ValueError(f"unsupported model version {doc.get('version')!r}")
    base = LearnerSpec(**doc["base"]) if doc.get("base") else None
    members = tuple(classifier_from_dict(m) for m in doc["members"])
    return Ensemble(members, np.array(doc["weights"]), doc.get("method", "custom"),
                    base, doc.get("info", {}))


def save_model(e: Ensemble, path, extra: dict | None = None) -> None:
    doc = ensemble_to_dict(e)
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")


def load_model(path) -> Ensemble:
    return ensemble_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
