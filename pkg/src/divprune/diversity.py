"""Margin-based diversity of a voting ensemble and the risk estimate built on it.

Notation used throughout:

* margin of member ``f`` at ``(x, y)``: ``f(x) * y`` in {-1, +1}
* ensemble margin: ``vote(x) * y`` in {-1, 0, +1} (0 on a tie)
* bar margin: weight-averaged member margin, in [-1, 1]
* ``div(x) = (ensemble margin - bar margin) / 2``

The 0/1 error of a margin ``m`` is ``(1 - m) / 2`` and the ensemble error
splits exactly into average member error minus mean ``div``.
"""
from __future__ import annotations

import bisect
import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from ._fmt import fmt
from .learners import PredictionMatrix, votes_from_sums

LN2 = math.log(2.0)

# Values within this distance of the minimum count as tied for argmin.
ARGMIN_TOL = 1e-12


class DomainError(ValueError):
    """Input outside the region where a formula applies."""


class SingularityError(DomainError):
    """Zero margin: the risk estimate and its derivatives diverge."""


class ConsistencyError(RuntimeError):
    """An identity that holds by construction failed (implementation bug)."""


@dataclass(frozen=True)
class RiskParams:
    """delta bounds the feature-map norm, epsilon is the label-noise rate,
    sample_size is |S| and confidence is the PAC failure probability."""

    delta: float = 1.0
    epsilon: float = 0.01
    sample_size: int = 200
    confidence: float = 0.05

    def __post_init__(self):
        if not self.delta > 0:
            raise DomainError(f"delta must be positive, got {self.delta}")
        if not 0 <= self.epsilon < 0.5:
            raise DomainError(f"epsilon must lie in [0, 0.5), got {self.epsilon}")
        if self.sample_size < 1:
            raise DomainError(f"sample_size must be >= 1, got {self.sample_size}")
        if not 0 < self.confidence <= 1:
            raise DomainError(f"confidence must lie in (0, 1], got {self.confidence}")

    @property
    def noise_factor(self) -> float:
        return 1.0 - 2.0 * self.epsilon

    def with_sample_size(self, n: int) -> "RiskParams":
        return RiskParams(self.delta, self.epsilon, int(n), self.confidence)


# ---------------------------------------------------------------------------
# per-instance quantities


def margin_individual(prediction: int, label: int) -> int:
    if prediction not in (-1, 1) or label not in (-1, 1):
        raise DomainError(f"prediction and label must be -1 or +1, got {prediction}, {label}")
    return prediction * label


def err01(margin_value):
    """0/1 loss of a margin: -1 -> 1, 0 -> 0.5, +1 -> 0.

    Accepts a scalar or an array.
    """
    m = np.asarray(margin_value)
    if not np.all((m == -1) | (m == 0) | (m == 1)):
        raise DomainError(f"margin must be -1, 0 or +1, got {margin_value!r}")
    out = -0.5 * (m - 1.0)
    return float(out) if out.ndim == 0 else out


def _weights(pm: PredictionMatrix, weights) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    if w.shape != (pm.n_classifiers,):
        raise ValueError(f"{w.shape[0] if w.ndim else 1} weights for "
                         f"{pm.n_classifiers} classifiers")
    if np.any(w < 0) or abs(math.fsum(w) - 1.0) > 1e-9:
        raise ValueError("weights must be nonnegative and sum to 1")
    return w


def bar_margins(pm: PredictionMatrix, weights) -> np.ndarray:
    return _weights(pm, weights) @ pm.margins


def ensemble_margins(pm: PredictionMatrix, weights) -> np.ndarray:
    return votes_from_sums(pm.weighted_sum(_weights(pm, weights))) * pm.labels


def div_values(pm: PredictionMatrix, weights) -> np.ndarray:
    w = _weights(pm, weights)
    return 0.5 * (ensemble_margins(pm, w) - bar_margins(pm, w))


def bar_margin(pm: PredictionMatrix, weights, instance_index: int) -> float:
    return float(bar_margins(pm, weights)[instance_index])


def div_instance(pm: PredictionMatrix, weights, instance_index: int) -> float:
    return float(div_values(pm, weights)[instance_index])


def lambda_of(div_value: float, vote: int | None = None, label: int | None = None) -> int:
    """Sign indicator linking div to the bar margin (``bar = lambda - 2 div``).

    Off zero it is the sign of ``div``. At ``div == 0`` the piecewise rule
    gives 0; when the vote and label are supplied the ensemble margin is
    returned instead, which separates the unanimous-right (+1) and
    unanimous-wrong (-1) cases and keeps the identity exact.
    """
    if not -0.5 <= div_value <= 0.5:
        raise DomainError(f"div must lie in [-1/2, 1/2], got {div_value}")
    if vote is not None and label is not None:
        return int(vote) * int(label)
    if div_value > 0:
        return 1
    if div_value < 0:
        return -1
    return 0


@dataclass(frozen=True, eq=False)
class DiversityProfile:
    per_instance_div: np.ndarray
    per_instance_lambda: np.ndarray
    per_instance_bar_margin: np.ndarray
    ties: np.ndarray
    g_bar: float
    a_bar: float
    d_bar: float

    @property
    def n_instances(self) -> int:
        return self.per_instance_div.shape[0]

    @property
    def n_ties(self) -> int:
        return int(self.ties.sum())

    def to_dict(self) -> dict:
        return {"G": self.g_bar, "A": self.a_bar, "D": self.d_bar,
                "n_instances": self.n_instances, "n_ties": self.n_ties}


def decompose(pm: PredictionMatrix, weights, check_tol: float = 1e-9) -> DiversityProfile:
    """Ensemble error = weighted member error - mean diversity.

    Each term is computed from its own definition and the identity is then
    checked; a violation beyond ``check_tol`` raises ConsistencyError.
    """
    w = _weights(pm, weights)
    ens = ensemble_margins(pm, w)
    bar = bar_margins(pm, w)
    div = 0.5 * (ens - bar)
    g_bar = float(np.mean(err01(ens)))
    a_bar = float(w @ np.mean(err01(pm.margins), axis=1))
    d_bar = float(np.mean(div))
    if abs(g_bar - (a_bar - d_bar)) > check_tol:
        raise ConsistencyError(
            f"decomposition identity violated: G={g_bar!r}, A={a_bar!r}, D={d_bar!r}")
    for arr in (div, ens, bar):
        arr.setflags(write=False)
    ties = ens == 0
    ties.setflags(write=False)
    return DiversityProfile(div, ens.astype(np.int8), bar, ties, g_bar, a_bar, d_bar)


# ---------------------------------------------------------------------------
# ensemble margin and the risk bound


@dataclass(frozen=True)
class GammaResult:
    gamma: float
    argmin_index: int
    div_at_argmin: float
    lambda_at_argmin: int
    n_excluded: int

    @property
    def margin_at_argmin(self) -> float:
        """``lambda - 2 div`` at the minimizer (the noise-free bar margin)."""
        return self.lambda_at_argmin - 2.0 * self.div_at_argmin


def first_argmin(values: np.ndarray, tol: float = ARGMIN_TOL) -> int:
    """Lowest index whose value is within ``tol`` of the minimum."""
    v = np.asarray(values, dtype=float)
    return int(np.flatnonzero(v <= v.min() + tol)[0])


def gamma_margin(pm: PredictionMatrix, weights, params: RiskParams,
                 eligible: np.ndarray | None = None) -> GammaResult:
    """Noise-adjusted ensemble margin ``min_i (1-2eps)(lambda_i - 2 div_i)``.

    Tie instances never take part. ``eligible`` optionally restricts the
    search further. Raises DomainError if no instance is left.
    """
    prof = decompose(pm, weights)
    mask = ~prof.ties
    if eligible is not None:
        mask &= np.asarray(eligible, dtype=bool)
    if not mask.any():
        raise DomainError("no eligible non-tie instance to take the margin over")
    lam = prof.per_instance_lambda.astype(float)
    scores = params.noise_factor * (lam - 2.0 * prof.per_instance_div)
    candidates = np.flatnonzero(mask)
    i = int(candidates[first_argmin(scores[candidates])])
    div_star = float(prof.per_instance_div[i])
    lam_star = int(prof.per_instance_lambda[i])
    gamma = params.noise_factor * (lam_star - 2.0 * div_star)
    return GammaResult(gamma, i, div_star, lam_star, int((~mask).sum()))


def kappa_of(gamma: float, delta: float) -> int:
    if not gamma > 0:
        raise DomainError(f"the margin bound needs a positive margin, got gamma={gamma}")
    return math.ceil((8.0 * delta / gamma) ** 2)


def margin_threshold(params: RiskParams) -> float:
    """Smallest margin for which the PAC bound applies."""
    return math.sqrt(32.0 * params.delta ** 2 / params.sample_size)


def risk_bound(gamma: float, params: RiskParams) -> float:
    """Full margin bound on the true risk, with the ceiled kappa."""
    threshold = margin_threshold(params)
    if not gamma > threshold:
        raise DomainError(
            f"margin bound requires gamma > sqrt(32 delta^2/|S|) = {threshold:.6f}, "
            f"got {gamma}")
    s = params.sample_size
    k = kappa_of(gamma, params.delta)
    return (2.0 / s) * (k * math.log2(8 * math.e * s / k) * math.log2(32 * s)
                        + math.log2(2 * s / params.confidence))


def _margin_term(div_star: float, lam: int) -> float:
    if lam not in (-1, 1):
        raise DomainError(f"lambda must be -1 or +1 for the risk estimate, got {lam}")
    m = lam - 2.0 * div_star
    if m == 0:
        raise SingularityError(f"zero margin at div={div_star}, lambda={lam}")
    return m


def _log_arg(m: float, params: RiskParams) -> float:
    """``8|S| (gamma / 8 delta)^2`` for margin term ``m``."""
    u = params.noise_factor * m / (8.0 * params.delta)
    return 8.0 * params.sample_size * u * u


def _scale(params: RiskParams) -> float:
    return (8.0 * params.delta / params.noise_factor) ** 2


def estimated_risk(div_star: float, lam: int, params: RiskParams) -> float:
    """Smooth dominant term ``kappa log2(8e|S|/kappa)`` with ``kappa = (8 delta/gamma)^2``."""
    m = _margin_term(div_star, lam)
    kappa = _scale(params) / (m * m)
    return kappa * math.log2(8.0 * math.e * params.sample_size / kappa)


def risk_first_derivative(div_star: float, lam: int, params: RiskParams) -> float:
    m = _margin_term(div_star, lam)
    return 4.0 * _scale(params) / m ** 3 * math.log2(_log_arg(m, params))


def risk_second_derivative(div_star: float, lam: int, params: RiskParams) -> float:
    m = _margin_term(div_star, lam)
    return (8.0 / LN2) * _scale(params) / m ** 4 * (3.0 * math.log(_log_arg(m, params)) - 2.0)


def risk_third_derivative(div_star: float, lam: int, params: RiskParams) -> float:
    m = _margin_term(div_star, lam)
    return (8.0 / LN2) * _scale(params) / m ** 5 * (24.0 * math.log(_log_arg(m, params)) - 28.0)


# ---------------------------------------------------------------------------
# critical points and monotone intervals


@dataclass(frozen=True)
class CriticalPoints:
    q1: float
    q2: float
    q3: float
    q4: float
    q5: float
    q6: float
    implied_condition_ok: bool

    @property
    def ordered(self) -> bool:
        """The layout ``q1 < q6 < q5 < q2 < q3`` assumed by the interval table."""
        return self.q1 < self.q6 < self.q5 < self.q2 < self.q3

    def to_dict(self) -> dict:
        return {"q1": self.q1, "q2": self.q2, "q3": self.q3, "q4": self.q4,
                "q5": self.q5, "q6": self.q6, "implied_ok": self.implied_condition_ok}


def critical_points(params: RiskParams) -> CriticalPoints:
    eps, nf = params.epsilon, params.noise_factor
    t = params.delta / nf * math.sqrt(8.0 / params.sample_size)
    q2 = 0.5 * (1.0 - t)
    return CriticalPoints(
        q1=eps,
        q2=q2,
        q3=0.5 * (1.0 - eps / nf),
        q4=q2,
        q5=0.5 * (1.0 - t * math.exp(1.0 / 3.0)),
        q6=0.5 * (1.0 - t * math.exp(7.0 / 12.0)),
        implied_condition_ok=eps <= t <= nf,
    )


@dataclass(frozen=True)
class IntervalInfo:
    """One row of the monotone-interval table.

    ``risk_trend``/``slope_trend`` give the direction of the risk and of its
    first derivative as diversity grows. Shape words are the table's own:
    there "concave" marks a positive second derivative of that column's
    function and "convex" a negative one.
    """

    label: str
    lower: float
    upper: float
    risk_trend: str
    risk_shape: str
    slope_trend: str
    slope_shape: str
    delta_risk: str
    delta_slope: str
    diversity_helps: bool


# (lower edge, upper edge, risk trend, risk shape, slope trend, slope shape,
#  change in risk, change in slope)
_TABLE = (
    ("-q3", "-q2", "increasing", "convex", "decreasing", "concave", "smaller", "larger"),
    ("-q2", "-q5", "decreasing", "convex", "decreasing", "concave", "smaller", "larger"),
    ("-q5", "-q6", "decreasing", "concave", "increasing", "concave", "larger", "larger"),
    ("-q6", "-q1", "decreasing", "concave", "increasing", "convex", "larger", "smaller"),
    ("q1", "q6", "increasing", "concave", "increasing", "concave", "larger", "larger"),
    ("q6", "q5", "increasing", "concave", "increasing", "convex", "larger", "smaller"),
    ("q5", "q2", "increasing", "convex", "decreasing", "convex", "smaller", "smaller"),
    ("q2", "q3", "decreasing", "convex", "decreasing", "convex", "smaller", "smaller"),
)
_HELPFUL = {("-q5", "-q6"), ("-q6", "-q1")}


def _edge(cp: CriticalPoints, name: str) -> float:
    sign = -1.0 if name.startswith("-") else 1.0
    return sign * getattr(cp, name.lstrip("-"))


def interval_table(cp: CriticalPoints) -> list[IntervalInfo]:
    return [
        IntervalInfo(f"({lo},{hi})", _edge(cp, lo), _edge(cp, hi), *cols,
                     diversity_helps=(lo, hi) in _HELPFUL)
        for lo, hi, *cols in _TABLE
    ]


def classify_interval(div_star: float, cp: CriticalPoints) -> IntervalInfo:
    """Locate ``div_star`` in the eight-interval table.

    Inner edges belong to the interval on their right; the outer edges
    ``+-q1`` and ``+-q3`` are excluded.
    """
    if not cp.ordered:
        raise DomainError(
            "critical points are not ordered q1 < q6 < q5 < q2 < q3 for these "
            "parameters; the interval table does not apply")
    rows = interval_table(cp)
    side = rows[:4] if div_star < 0 else rows[4:]
    lo, hi = side[0].lower, side[-1].upper
    if not lo < div_star < hi:
        raise DomainError(
            f"div={div_star} is outside the table domain (-q3,-q1) U (q1,q3) = "
            f"({-cp.q3:.6f},{-cp.q1:.6f}) U ({cp.q1:.6f},{cp.q3:.6f})")
    uppers = [r.upper for r in side]
    return side[bisect.bisect_right(uppers, div_star)]


# ---------------------------------------------------------------------------
# curve sweep


@dataclass(frozen=True)
class SweepRow:
    div: float
    lam: int
    risk: float | None
    risk_d1: float | None
    risk_d2: float | None
    interval: str

    @property
    def evaluable(self) -> bool:
        return self.risk is not None


SWEEP_HEADER = ("div", "lambda", "risk", "risk_d1", "risk_d2", "interval")


def sweep_curve(params: RiskParams, grid, lam: int | None = None) -> list[SweepRow]:
    """Risk estimate and its first two derivatives along a grid of div values.

    With ``lam=None`` each point uses the sign of its own div. Points where
    the margin vanishes are returned with empty values and interval
    ``singular`` instead of raising.
    """
    cp = critical_points(params)
    rows = []
    for d in np.asarray(grid, dtype=float).tolist():
        lam_d = (1 if d > 0 else -1 if d < 0 else 0) if lam is None else int(lam)
        try:
            vals = (estimated_risk(d, lam_d, params),
                    risk_first_derivative(d, lam_d, params),
                    risk_second_derivative(d, lam_d, params))
        except DomainError:
            rows.append(SweepRow(d, lam_d, None, None, None, "singular"))
            continue
        try:
            label = classify_interval(d, cp).label
        except DomainError:
            label = "outside"
        rows.append(SweepRow(d, lam_d, *vals, label))
    return rows


def sweep_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_HEADER)
    for r in rows:
        w.writerow([fmt(r.div), r.lam, fmt(r.risk), fmt(r.risk_d1), fmt(r.risk_d2),
                    r.interval])
    return buf.getvalue()
