"""Ensemble pruning: the diversity-driven EPBD selector and ranking baselines.

Every pruner takes a trained ensemble and a pruning set and returns the
indices of the kept members, in selection order. Sub-ensembles vote with
uniform weights 1/|H|, whatever the weights of the source ensemble.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .diversity import DomainError, RiskParams, first_argmin, gamma_margin
from .learners import Ensemble, PredictionMatrix, prediction_matrix, votes_from_sums
from .data import Dataset

METHODS = ("none", "epbd", "es", "kl", "kp", "oo", "drep")


class PruningError(RuntimeError):
    pass


@dataclass(frozen=True)
class PruneConfig:
    method: str = "epbd"
    alpha: float = 0.6
    beta: float = 1.0
    rho: float = 0.5
    epsilon: float = 0.01

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown pruning method {self.method!r}; choose from {METHODS}")
        if not 0 < self.alpha <= 1:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        if self.beta < 0:
            raise ValueError(f"beta must be nonnegative, got {self.beta}")
        if not 0 < self.rho < 1:
            raise ValueError(f"rho must lie in (0, 1), got {self.rho}")
        if not 0 <= self.epsilon < 0.5:
            raise ValueError(f"epsilon must lie in [0, 0.5), got {self.epsilon}")

    def cap(self, n_members: int) -> int:
        # the small slack keeps e.g. 0.7 * 10 from ceiling to 8
        return max(1, math.ceil(self.alpha * n_members - 1e-9))


@dataclass(frozen=True)
class TraceEntry:
    iter: int
    instance: int | None
    classifier: int
    score: float


@dataclass
class PruneResult:
    method: str
    kept_indices: list[int]
    sub_ensemble: Ensemble
    config: PruneConfig
    trace: list[TraceEntry] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    @property
    def size(self) -> int:
        return len(self.kept_indices)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "alpha": self.config.alpha,
            "beta": self.config.beta,
            "kept": list(self.kept_indices),
            "trace": [{"iter": t.iter, "instance": t.instance,
                       "classifier": t.classifier, "score": t.score} for t in self.trace],
            "notes": list(self.notes),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _result(e: Ensemble, cfg: PruneConfig, kept, trace=None, notes=None) -> PruneResult:
    kept = [int(i) for i in kept]
    if len(set(kept)) != len(kept):
        raise PruningError(f"duplicate indices in {kept}")
    sub = Ensemble.uniform([e.members[i] for i in kept], method=f"{e.method}+{cfg.method}",
                           base=e.base, info=dict(e.info))
    return PruneResult(cfg.method, kept, sub, cfg, trace or [], notes or [])


def _uniform_error(values: np.ndarray, labels: np.ndarray) -> float:
    """0/1 error (ties count half) of the uniform vote over ``values`` rows."""
    m = votes_from_sums(values.mean(axis=0)) * labels
    return float(np.mean(0.5 * (1.0 - m)))


# ---------------------------------------------------------------------------
# EPBD


def epbd_candidates(pm: PredictionMatrix, pool: list[int], instance: int) -> list[int]:
    y = pm.labels[instance]
    return [j for j in pool if pm.values[j, instance] == y]


def epbd_eligible(pm: PredictionMatrix, pool: list[int]) -> np.ndarray:
    """Instances on which at least one pool member is still correct."""
    return np.any(pm.margins[pool] == 1, axis=0)


def epbd_score(pm: PredictionMatrix, accuracy: np.ndarray, selected: list[int],
               candidate: int, instance: int, beta: float) -> float:
    """``accuracy(f) + beta * div`` of the uniform sub-ensemble ``H + [f]`` at ``instance``."""
    rows = pm.values[selected + [candidate], instance]
    y = pm.labels[instance]
    s = rows.mean()
    ens = int(votes_from_sums(np.array([s]))[0]) * y
    div = 0.5 * (ens - s * y)
    return float(accuracy[candidate] + beta * div)


def prune_epbd(e: Ensemble, d: Dataset, cfg: PruneConfig,
               pm: PredictionMatrix | None = None) -> PruneResult:
    """Greedy selection around the minimum-margin instance.

    Each round, with uniform weights over the members still in the pool:

    1. find the instance with the smallest noise-adjusted margin, over
       instances that are not ties and on which some pool member is right;
    2. score each pool member that is right there by its pruning-set
       accuracy plus ``beta`` times the diversity of ``H + [f]`` at that
       instance;
    3. move the best-scoring member (lowest index on ties) into ``H``.

    Stops at ``cfg.cap(|F|)`` members or when no instance qualifies.
    """
    pm = prediction_matrix(e, d) if pm is None else pm
    n_members = pm.n_classifiers
    if n_members == 0 or pm.n_instances == 0:
        raise PruningError("EPBD needs a non-empty ensemble and pruning set")
    cap = cfg.cap(n_members)
    params = RiskParams(epsilon=cfg.epsilon, sample_size=pm.n_instances)
    accuracy = np.mean(pm.margins == 1, axis=1)

    pool = list(range(n_members))
    selected: list[int] = []
    trace: list[TraceEntry] = []
    notes: list[str] = []
    while len(selected) < cap and pool:
        sub = pm.rows(pool)
        weights = np.full(len(pool), 1.0 / len(pool))
        try:
            g = gamma_margin(sub, weights, params, eligible=epbd_eligible(pm, pool))
        except DomainError:
            notes.append(f"stopped after {len(selected)} members: every remaining "
                         "instance is a tie or misclassified by the whole pool")
            break
        x_star = g.argmin_index
        cands = epbd_candidates(pm, pool, x_star)
        scores = [epbd_score(pm, accuracy, selected, j, x_star, cfg.beta) for j in cands]
        # sort by score descending, lower original index first on ties
        best = max(range(len(cands)), key=lambda k: (scores[k], -cands[k]))
        chosen = cands[best]
        trace.append(TraceEntry(len(trace), x_star, chosen, scores[best]))
        selected.append(chosen)
        pool.remove(chosen)
    if not selected:
        raise PruningError("EPBD selected no classifier")
    if len(selected) < cap and not notes:
        notes.append(f"pool exhausted after {len(selected)} members")
    return _result(e, cfg, selected, trace, notes)


# ---------------------------------------------------------------------------
# ranking baselines


def prune_none(e: Ensemble, d: Dataset, cfg: PruneConfig, pm=None) -> PruneResult:
    """Identity: the full ensemble with its own weights."""
    return PruneResult(cfg.method, list(range(len(e))), e, cfg)


def prune_es(e: Ensemble, d: Dataset, cfg: PruneConfig, pm=None) -> PruneResult:
    """Early stopping: the first members in training order."""
    return _result(e, cfg, range(cfg.cap(len(e))))


def pairwise_kappa(a: np.ndarray, b: np.ndarray) -> float:
    """Cohen's kappa between two {-1,+1} prediction vectors.

    An undefined denominator (both constant and equal) counts as full
    agreement.
    """
    n = a.shape[0]
    theta1 = np.count_nonzero(a == b) / n
    pa, pb = np.count_nonzero(a == 1) / n, np.count_nonzero(b == 1) / n
    theta2 = pa * pb + (1 - pa) * (1 - pb)
    if 1.0 - theta2 <= 1e-15:
        return 1.0
    return float((theta1 - theta2) / (1.0 - theta2))


def _greedy_pairwise(n: int, cap: int, pair_value, lower_is_better: bool):
    """Start from the best pair, then add the member with the best mean pair
    value against those already kept. Needs ``n >= 2``."""
    sign = 1.0 if lower_is_better else -1.0
    M = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            M[i, j] = M[j, i] = pair_value(i, j)
    best_pair, best_val = None, None
    for i in range(n):
        for j in range(i + 1, n):
            v = sign * M[i, j]
            if best_val is None or v < best_val - 1e-12:
                best_pair, best_val = (i, j), v
    kept = list(best_pair)[:cap]
    while len(kept) < cap:
        rest = [j for j in range(n) if j not in kept]
        vals = np.array([sign * M[j, kept].mean() for j in rest])
        kept.append(rest[first_argmin(vals)])
    return kept, M


def prune_kp(e: Ensemble, d: Dataset, cfg: PruneConfig, pm=None) -> PruneResult:
    """Kappa pruning: grow H from the least-agreeing pair by lowest mean kappa."""
    pm = prediction_matrix(e, d) if pm is None else pm
    n, cap = pm.n_classifiers, cfg.cap(pm.n_classifiers)
    if n == 1:
        return _result(e, cfg, [0])
    kept, _ = _greedy_pairwise(
        n, cap, lambda i, j: pairwise_kappa(pm.values[i], pm.values[j]), True)
    return _result(e, cfg, kept)


def output_distribution(pred: np.ndarray) -> np.ndarray:
    """Add-one smoothed probabilities of predicting (-1, +1)."""
    n_pos = np.count_nonzero(pred == 1)
    n = pred.shape[0]
    return np.array([n - n_pos + 1.0, n_pos + 1.0]) / (n + 2.0)


def symmetric_kl(p: np.ndarray, q: np.ndarray) -> float:
    return float(np.sum(p * np.log(p / q)) + np.sum(q * np.log(q / p)))


def prune_kl(e: Ensemble, d: Dataset, cfg: PruneConfig, pm=None) -> PruneResult:
    """Grow H from the most divergent pair by largest summed output-distribution divergence."""
    pm = prediction_matrix(e, d) if pm is None else pm
    n, cap = pm.n_classifiers, cfg.cap(pm.n_classifiers)
    if n == 1:
        return _result(e, cfg, [0])
    dists = [output_distribution(pm.values[j]) for j in range(n)]
    kept, _ = _greedy_pairwise(n, cap, lambda i, j: symmetric_kl(dists[i], dists[j]), False)
    return _result(e, cfg, kept)


def oo_reference(pm: PredictionMatrix) -> np.ndarray:
    """All-ones direction with the ensemble-average signature projected out."""
    c_ens = pm.margins.mean(axis=0)
    ones = np.ones(pm.n_instances)
    nn = c_ens @ c_ens
    if nn == 0:
        return ones
    return ones - (ones @ c_ens) / nn * c_ens


def prune_oo(e: Ensemble, d: Dataset, cfg: PruneConfig, pm=None) -> PruneResult:
    """Orientation ordering: members whose margin signature points along the
    reference direction (angle below pi/2), smallest angle first."""
    pm = prediction_matrix(e, d) if pm is None else pm
    cap = cfg.cap(pm.n_classifiers)
    ref = oo_reference(pm)
    norm = np.linalg.norm(ref)
    if norm <= 1e-12 * math.sqrt(pm.n_instances):
        res = prune_es(e, d, cfg)
        res.method = "oo"
        res.notes.append("reference direction vanished; fell back to training order")
        return res
    sig = pm.margins.astype(float)
    cos = (sig @ ref) / (np.linalg.norm(sig, axis=1) * norm)
    angles = np.arccos(np.clip(cos, -1.0, 1.0))
    order = sorted(range(pm.n_classifiers), key=lambda j: (angles[j], j))
    kept = [j for j in order if angles[j] < math.pi / 2 - 1e-12][:cap]
    if not kept:
        res = prune_es(e, d, cfg)
        res.method = "oo"
        res.notes.append("no member within pi/2 of the reference; fell back to training order")
        return res
    trace = [TraceEntry(k, None, j, float(angles[j])) for k, j in enumerate(kept)]
    return _result(e, cfg, kept, trace)


def prune_drep(e: Ensemble, d: Dataset, cfg: PruneConfig, pm=None) -> PruneResult:
    """Diversity-regularized greedy selection.

    Starts from the most accurate member. Each step keeps the
    ``ceil(rho * |remaining|)`` members that agree least with the current
    sub-ensemble vote and adds whichever of them lowers the sub-ensemble
    error most. Stops once the error no longer decreases.
    """
    pm = prediction_matrix(e, d) if pm is None else pm
    n, cap = pm.n_classifiers, cfg.cap(pm.n_classifiers)
    V, y = pm.values.astype(float), pm.labels
    errors = np.mean(pm.margins != 1, axis=1)
    kept = [first_argmin(errors)]
    current = _uniform_error(V[kept], y)
    trace = [TraceEntry(0, None, kept[0], current)]
    while len(kept) < cap:
        rest = [j for j in range(n) if j not in kept]
        h_vote = votes_from_sums(V[kept].mean(axis=0))
        agreement = np.array([np.mean(V[j] * h_vote) for j in rest])
        n_cand = math.ceil(cfg.rho * len(rest))
        order = sorted(range(len(rest)), key=lambda k: (agreement[k], rest[k]))
        cands = [rest[k] for k in order[:n_cand]]
        errs = np.array([_uniform_error(V[kept + [j]], y) for j in cands])
        k = first_argmin(errs)
        if errs[k] >= current - 1e-12:
            break
        kept.append(cands[k])
        current = float(errs[k])
        trace.append(TraceEntry(len(trace), None, cands[k], current))
    return _result(e, cfg, kept, trace)


_PRUNERS = {
    "none": prune_none, "epbd": prune_epbd, "es": prune_es, "kl": prune_kl,
    "kp": prune_kp, "oo": prune_oo, "drep": prune_drep,
}


def prune(e: Ensemble, d: Dataset, cfg: PruneConfig,
          pm: PredictionMatrix | None = None) -> PruneResult:
    return _PRUNERS[cfg.method](e, d, cfg, pm)
