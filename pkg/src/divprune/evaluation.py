"""Cross-validated comparison of pruning methods and the significance tests
used to summarize it (paired t-test win/tie/loss counts, Friedman ranks)."""
from __future__ import annotations

import csv
import io
import math
import os
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from ._fmt import fmt, rounded
from .data import Dataset, split_kfold
from .diversity import err01
from .learners import Ensemble, LearnerSpec, prediction_matrix, train_ensemble
from .pruning import PruneConfig, prune


def accuracy(e: Ensemble, d: Dataset) -> float:
    """Fraction correct under the ensemble vote; a tied vote earns half."""
    m = e.vote(d.features) * d.labels
    return 1.0 - float(np.mean(err01(m)))


# ---------------------------------------------------------------------------
# significance tests


@dataclass(frozen=True)
class TTestResult:
    outcome: str  # "win", "tie" or "loss" for the first sample
    t_stat: float
    dof: int
    p_value: float
    note: str = ""


def paired_ttest(a, b, level: float = 0.05) -> TTestResult:
    """Two-tailed paired t-test on ``a - b``.

    Zero-variance differences cannot be tested: all-zero differences are a
    tie, otherwise the sign of the mean decides.
    """
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"paired samples must have equal 1-D shapes, got {a.shape} and {b.shape}")
    k = a.shape[0]
    if k < 2:
        raise ValueError("paired t-test needs at least 2 pairs")
    diff = a - b
    mean = float(diff.mean())
    sd = float(diff.std(ddof=1))
    dof = k - 1
    if sd <= 1e-12 * max(1.0, abs(mean)):
        if np.all(np.abs(diff) <= 1e-12):
            return TTestResult("tie", math.nan, dof, 1.0, "identical samples")
        outcome = "win" if mean > 0 else "loss"
        t = math.copysign(math.inf, mean)
        return TTestResult(outcome, t, dof, 0.0, "constant nonzero difference")
    t = mean / (sd / math.sqrt(k))
    p = float(2.0 * stats.t.sf(abs(t), dof))
    if p < level:
        return TTestResult("win" if t > 0 else "loss", t, dof, p)
    return TTestResult("tie", t, dof, p)


@dataclass(frozen=True)
class FriedmanResult:
    avg_ranks: np.ndarray
    chi_sq: float
    ranks: np.ndarray  # per dataset row


def friedman_ranks(table) -> FriedmanResult:
    """Average ranks (1 = highest accuracy, ties share the mean rank) and
    the Friedman chi-square statistic over datasets x methods."""
    A = np.asarray(table, dtype=float)
    if A.ndim != 2 or A.shape[0] < 2 or A.shape[1] < 2:
        raise ValueError(f"need at least 2 datasets x 2 methods, got shape {A.shape}")
    if np.any(np.isnan(A)):
        raise ValueError("table has absent cells; restrict to methods with complete columns")
    n, k = A.shape
    # round away float noise so mathematically equal accuracies tie
    R = np.vstack([stats.rankdata(-np.round(row, 9), method="average") for row in A])
    avg = R.mean(axis=0)
    chi = 12.0 * n / (k * (k + 1)) * (float(np.sum(avg ** 2)) - k * (k + 1) ** 2 / 4.0)
    return FriedmanResult(avg, chi, R)


# ---------------------------------------------------------------------------
# cross-validation harness


@dataclass(frozen=True)
class ExperimentConfig:
    datasets: tuple
    prune_configs: tuple
    ensemble_method: str = "bagging"
    base: LearnerSpec = LearnerSpec("stump")
    size: int = 21
    folds: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.folds < 2:
            raise ValueError("folds must be >= 2")
        if self.size < 1:
            raise ValueError("ensemble size must be >= 1")
        methods = [c.method for c in self.prune_configs]
        if len(set(methods)) != len(methods):
            raise ValueError(f"duplicate methods in {methods}")

    @property
    def methods(self) -> list[str]:
        return [c.method for c in self.prune_configs]

    def describe(self) -> dict:
        return {
            "datasets": [d.name for d in self.datasets],
            "ensemble": self.ensemble_method,
            "base": self.base.descriptor,
            "size": self.size,
            "folds": self.folds,
            "seed": self.seed,
            "prune": [asdict(c) for c in self.prune_configs],
        }


def fold_seed(master: int, dataset_name: str, fold: int) -> int:
    """Seed for one (dataset, fold) job, independent of scheduling."""
    ss = np.random.SeedSequence([master, zlib.crc32(dataset_name.encode()), fold])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


@dataclass
class Cell:
    per_fold: list[float] | None
    sizes: list[int] | None
    error: str = ""

    @property
    def absent(self) -> bool:
        return self.per_fold is None

    @property
    def mean(self) -> float:
        return float(np.mean(self.per_fold)) if not self.absent else math.nan

    @property
    def sd(self) -> float:
        return float(np.std(self.per_fold, ddof=1)) if not self.absent else math.nan

    @property
    def size_mean(self) -> float:
        return float(np.mean(self.sizes)) if not self.absent else math.nan

    @property
    def size_sd(self) -> float:
        return float(np.std(self.sizes, ddof=1)) if not self.absent else math.nan


@dataclass
class ResultTable:
    datasets: list[str]
    methods: list[str]
    folds: int
    cells: dict = field(default_factory=dict)

    def cell(self, dataset: str, method: str) -> Cell:
        return self.cells[(dataset, method)]

    def accuracy_matrix(self, methods=None) -> np.ndarray:
        methods = methods or self.methods
        return np.array([[self.cell(d, m).mean for m in methods] for d in self.datasets])

    def complete_methods(self) -> list[str]:
        return [m for m in self.methods
                if not any(self.cell(d, m).absent for d in self.datasets)]

    def wtl_against(self, reference: str = "epbd", level: float = 0.05) -> dict:
        """Per method: datasets on which ``reference`` wins, ties or loses."""
        out = {}
        if reference not in self.methods:
            return out
        for m in self.methods:
            if m == reference:
                continue
            counts = {"win": 0, "tie": 0, "loss": 0, "absent": 0}
            for d in self.datasets:
                ref, other = self.cell(d, reference), self.cell(d, m)
                if ref.absent or other.absent:
                    counts["absent"] += 1
                    continue
                counts[paired_ttest(ref.per_fold, other.per_fold, level).outcome] += 1
            out[m] = counts
        return out

    def ranks(self) -> dict | None:
        methods = self.complete_methods()
        if len(methods) < 2 or len(self.datasets) < 2:
            return None
        fr = friedman_ranks(self.accuracy_matrix(methods))
        return {"methods": methods, "average_ranks": dict(zip(methods, fr.avg_ranks.tolist())),
                "chi_sq": fr.chi_sq}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["dataset"] + [f"{m}_{s}" for m in self.methods for s in ("mean", "sd")])
        for d in self.datasets:
            row = [d]
            for m in self.methods:
                c = self.cell(d, m)
                row += ["", ""] if c.absent else [fmt(c.mean), fmt(c.sd)]
            w.writerow(row)
        return buf.getvalue()

    def report(self, reference: str = "epbd") -> dict:
        per_dataset = {}
        for d in self.datasets:
            per_dataset[d] = {}
            for m in self.methods:
                c = self.cell(d, m)
                per_dataset[d][m] = (
                    {"absent": True, "error": c.error} if c.absent else
                    {"mean": c.mean, "sd": c.sd, "per_fold": c.per_fold,
                     "size_mean": c.size_mean, "size_sd": c.size_sd, "sizes": c.sizes})
        return rounded({
            "folds": self.folds,
            "datasets": per_dataset,
            "wtl_vs_" + reference: self.wtl_against(reference),
            "friedman": self.ranks(),
        })


def _worker_count() -> int:
    try:
        return max(1, int(os.environ.get("DIVPRUNE_THREADS", "1")))
    except ValueError:
        return 1


def _run_fold(cfg: ExperimentConfig, d: Dataset, plan, fold: int):
    train = d.subset(plan.train_indices(fold))
    test = d.subset(plan.test_indices(fold))
    ens = train_ensemble(train, cfg.ensemble_method, cfg.size, cfg.base,
                         fold_seed(cfg.seed, d.name, fold))
    pm = prediction_matrix(ens, train)
    out = {}
    for pc in cfg.prune_configs:
        try:
            r = prune(ens, train, pc, pm)
            out[pc.method] = (100.0 * accuracy(r.sub_ensemble, test), r.size, "")
        except Exception as exc:  # one failing method must not sink the run
            out[pc.method] = (None, None, f"fold {fold}: {type(exc).__name__}: {exc}")
    return out


def cross_validate(cfg: ExperimentConfig) -> ResultTable:
    """k-fold CV: per fold, train and prune on the training split and score
    every method on the held-out split."""
    datasets = sorted(cfg.datasets, key=lambda d: d.name)
    names = [d.name for d in datasets]
    if len(set(names)) != len(names):
        raise ValueError(f"dataset names must be unique, got {names}")
    jobs = []
    for d in datasets:
        plan = split_kfold(d, cfg.folds, cfg.seed)
        jobs += [(d, plan, f) for f in range(cfg.folds)]
    workers = min(_worker_count(), len(jobs))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(lambda j: _run_fold(cfg, *j), jobs))
    else:
        results = [_run_fold(cfg, *j) for j in jobs]

    table = ResultTable(names, cfg.methods, cfg.folds)
    for d in datasets:
        fold_out = [r for (dd, _, _), r in zip(jobs, results) if dd is d]
        for m in cfg.methods:
            entries = [fo[m] for fo in fold_out]
            errors = [e for _, _, e in entries if e]
            if errors:
                table.cells[(d.name, m)] = Cell(None, None, "; ".join(errors))
            else:
                table.cells[(d.name, m)] = Cell([a for a, _, _ in entries],
                                                [s for _, s, _ in entries])
    return table
