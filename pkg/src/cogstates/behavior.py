"""Effective behavior quartiles and their relation to prediction correctness.

Per-task session quartiles are rank-based: sessions are pooled across
individuals, ranked after direction adjustment (reaction time is negated so
higher always means better), and cut at the 25/50/75th percentile ranks,
quartile 1 worst to quartile 4 best. Tied scores share the lower quartile.
The effective behavior quartile (EBQ) of a session is the quartile of its
mean per-task quartile, computed the same way over all sessions; every
segment inherits its session's EBQ.

Welch's t-test and Pearson's r are self-contained: two-tailed p-values come
from the Student t survival function evaluated through a continued-fraction
regularized incomplete beta, not from an external stats library.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .data import ManifestRow

SCORED_TASKS = ("PVT", "VWM", "MOD")
LOWER_IS_BETTER = {"PVT"}


class BehaviorError(Exception):
    pass


@dataclass
class PerformanceRecord:
    subject_id: str
    session_index: int
    task: str
    score: float

    def __post_init__(self):
        if self.task not in SCORED_TASKS:
            raise BehaviorError(f"task {self.task!r} carries no performance score")
        if self.task in ("VWM", "MOD") and not 0.0 <= self.score <= 1.0:
            raise BehaviorError(
                f"{self.task} score {self.score} outside [0, 1] "
                f"(subject {self.subject_id}, session {self.session_index})")
        if self.task == "PVT" and self.score <= 0.0:
            raise BehaviorError(
                f"PVT reaction time must be positive, got {self.score} "
                f"(subject {self.subject_id}, session {self.session_index})")

    @property
    def direction(self) -> str:
        return "lower_is_better" if self.task in LOWER_IS_BETTER else "higher_is_better"


def performance_records_from_manifest(rows: Iterable[ManifestRow]) -> list[PerformanceRecord]:
    """Scored-task rows of a manifest as PerformanceRecords; other rows ignored."""
    return [PerformanceRecord(r.subject_id, r.session_index, r.task, r.performance_score)
            for r in rows
            if r.task in SCORED_TASKS and r.performance_score is not None]


def _rank_quartiles(items: list[tuple]) -> tuple[dict, bool]:
    """Quartiles 1..4 for (key, value) pairs where higher value is better.

    A key's quartile comes from the rank of the first occurrence of its value
    in the ascending order, so ties share the lower quartile. Returns the
    assignment and whether any tie straddled a quartile boundary.
    """
    n = len(items)
    ordered = sorted(items, key=lambda kv: kv[1])
    first_index = {}
    for pos, (_, value) in enumerate(ordered):
        first_index.setdefault(value, pos)
    out = {}
    tie_collapsed = False
    for pos, (key, value) in enumerate(ordered):
        rank = first_index[value]
        quartile = 1 + (4 * rank) // n
        if quartile != 1 + (4 * pos) // n:
            tie_collapsed = True
        out[key] = quartile
    return out, tie_collapsed


@dataclass
class TaskQuartiles:
    task: str
    quartiles: dict  # (subject_id, session_index) -> 1..4
    tie_collapsed: bool


def task_quartiles(records: list[PerformanceRecord]) -> TaskQuartiles:
    """Quartiles over all sessions of one task, pooled across individuals."""
    if not records:
        raise BehaviorError("no performance records")
    task = records[0].task
    if any(r.task != task for r in records):
        raise BehaviorError("task_quartiles expects records from a single task")
    if len(records) < 4:
        raise BehaviorError(
            f"{task}: need at least 4 sessions to form quartiles, got {len(records)}")
    seen = set()
    items = []
    for r in records:
        key = (r.subject_id, r.session_index)
        if key in seen:
            raise BehaviorError(f"{task}: duplicate session {key}")
        seen.add(key)
        value = -r.score if r.direction == "lower_is_better" else r.score
        items.append((key, value))
    quartiles, tie_collapsed = _rank_quartiles(items)
    return TaskQuartiles(task, quartiles, tie_collapsed)


@dataclass
class EBQRow:
    task_quartiles: dict  # task -> 1..4
    average: float
    ebq: int


@dataclass
class EBQTable:
    rows: dict  # (subject_id, session_index) -> EBQRow
    tie_collapsed: bool
    excluded_sessions: list

    def ebq_of(self, subject_id: str, session_index: int) -> Optional[int]:
        row = self.rows.get((subject_id, session_index))
        return row.ebq if row else None

    def to_json(self) -> str:
        payload = {
            "tie_collapsed": self.tie_collapsed,
            "excluded_sessions": [list(s) for s in self.excluded_sessions],
            "sessions": [
                {"subject_id": k[0], "session_index": k[1],
                 "task_quartiles": row.task_quartiles,
                 "average": row.average, "ebq": row.ebq}
                for k, row in sorted(self.rows.items())
            ],
        }
        return json.dumps(payload, indent=2, sort_keys=True)


def effective_behavior_quartile(tables: list[TaskQuartiles],
                                all_sessions: Optional[list[tuple]] = None) -> EBQTable:
    """Average the available task quartiles per session, then quartile the
    averages over all sessions. Sessions with no scored task (only possible
    when ``all_sessions`` supplies the roster) are excluded with a warning."""
    per_session: dict = {}
    for table in tables:
        for key, q in table.quartiles.items():
            per_session.setdefault(key, {})[table.task] = q
    excluded = []
    if all_sessions is not None:
        for key in all_sessions:
            if key not in per_session:
                excluded.append(key)
        if excluded:
            warnings.warn(f"sessions without any scored task excluded from EBQ: "
                          f"{sorted(excluded)}")
    if not per_session:
        raise BehaviorError("no sessions with scored tasks")
    averages = [(key, float(np.mean(list(qs.values()))))
                for key, qs in sorted(per_session.items())]
    ebqs, tie_collapsed = _rank_quartiles(averages)
    tie_collapsed = tie_collapsed or any(t.tie_collapsed for t in tables)
    rows = {key: EBQRow(per_session[key], avg, ebqs[key]) for key, avg in averages}
    return EBQTable(rows, tie_collapsed, sorted(excluded))


@dataclass
class PredictionOutcome:
    segment_id: str
    subject_id: str
    session_index: int
    true_label: str
    predicted_label: str
    ebq: Optional[int] = None

    @property
    def correct(self) -> bool:
        return self.true_label == self.predicted_label


def outcomes_from_predictions(segments, predicted_indices) -> list[PredictionOutcome]:
    from .data import TASKS
    return [PredictionOutcome(s.segment_id, s.subject_id, s.session_index,
                              s.label, TASKS[int(p)])
            for s, p in zip(segments, predicted_indices)]


def annotate_outcomes(outcomes: list[PredictionOutcome], table: EBQTable,
                      rest_inherits_ebq: bool = True) -> list[PredictionOutcome]:
    """Attach each outcome's session EBQ. REST segments have no score of their
    own; whether they inherit the session EBQ is a configuration switch."""
    for o in outcomes:
        if o.true_label == "REST" and not rest_inherits_ebq:
            o.ebq = None
        else:
            o.ebq = table.ebq_of(o.subject_id, o.session_index)
    return outcomes


def fraction_incorrect(outcomes: list[PredictionOutcome],
                       min_segments: int = 10) -> tuple[dict, list]:
    """Per-subject fraction of incorrect predictions; subjects with fewer than
    ``min_segments`` outcomes are excluded and listed."""
    counts: dict = {}
    wrong: dict = {}
    for o in outcomes:
        counts[o.subject_id] = counts.get(o.subject_id, 0) + 1
        wrong[o.subject_id] = wrong.get(o.subject_id, 0) + (0 if o.correct else 1)
    fractions = {s: wrong[s] / counts[s] for s in sorted(counts) if counts[s] >= min_segments}
    excluded = sorted(s for s in counts if counts[s] < min_segments)
    return fractions, excluded


def median_split(fractions: dict) -> tuple[set, set]:
    """Subjects at or below the median fraction are well-predicted, those
    strictly above are ill-predicted; the two sets partition the input."""
    if len(fractions) < 2:
        raise BehaviorError(f"median split needs >= 2 subjects, got {len(fractions)}")
    median = float(np.median(list(fractions.values())))
    well = {s for s, f in fractions.items() if f <= median}
    ill = {s for s, f in fractions.items() if f > median}
    return well, ill


# ---------------------------------------------------------------------------
# Welch's t-test and Pearson's r with a self-contained t-distribution tail.

_BETACF_MAX_ITER = 300
_BETACF_EPS = 3e-16
_BETACF_FPMIN = 1e-300


def _betacf(a: float, b: float, x: float) -> float:
    """Lentz continued fraction for the incomplete beta function."""
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _BETACF_FPMIN:
        d = _BETACF_FPMIN
    d = 1.0 / d
    h = d
    for m in range(1, _BETACF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _BETACF_FPMIN:
            d = _BETACF_FPMIN
        c = 1.0 + aa / c
        if abs(c) < _BETACF_FPMIN:
            c = _BETACF_FPMIN
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _BETACF_FPMIN:
            d = _BETACF_FPMIN
        c = 1.0 + aa / c
        if abs(c) < _BETACF_FPMIN:
            c = _BETACF_FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _BETACF_EPS:
            return h
    raise BehaviorError(f"incomplete beta failed to converge for a={a}, b={b}, x={x}")


def betainc_regularized(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if not 0.0 <= x <= 1.0:
        raise BehaviorError(f"betainc argument x={x} outside [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_two_tailed_p(t: float, dof: float) -> float:
    """P(|T| >= |t|) for Student's t with ``dof`` degrees of freedom."""
    if dof <= 0:
        raise BehaviorError(f"degrees of freedom must be positive, got {dof}")
    if math.isinf(t):
        return 0.0
    return betainc_regularized(dof / 2.0, 0.5, dof / (dof + t * t))


@dataclass
class WelchResult:
    t: float
    p: float
    dof: float


def welch_t(group_a, group_b) -> WelchResult:
    """Welch's two-sample t with Welch-Satterthwaite degrees of freedom."""
    a = np.asarray(group_a, dtype=np.float64)
    b = np.asarray(group_b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise BehaviorError(f"welch_t needs >= 2 values per group, got {a.size} and {b.size}")
    va = a.var(ddof=1)
    vb = b.var(ddof=1)
    if va == 0.0 and vb == 0.0:
        raise BehaviorError("welch_t: both groups have zero variance")
    sa = va / a.size
    sb = vb / b.size
    t = float((a.mean() - b.mean()) / math.sqrt(sa + sb))
    dof = float((sa + sb) ** 2 / (sa * sa / (a.size - 1) + sb * sb / (b.size - 1)))
    return WelchResult(t, t_two_tailed_p(t, dof), dof)


def pearson_r(x, y) -> tuple[float, float]:
    """Sample correlation with the usual t-transform p-value (dof = n - 2)."""
    xa = np.asarray(x, dtype=np.float64)
    ya = np.asarray(y, dtype=np.float64)
    if xa.size != ya.size:
        raise BehaviorError(f"pearson_r: lengths differ, {xa.size} vs {ya.size}")
    n = xa.size
    if n < 3:
        raise BehaviorError(f"pearson_r needs n >= 3, got {n}")
    dx = xa - xa.mean()
    dy = ya - ya.mean()
    sx = float(np.sqrt((dx * dx).sum()))
    sy = float(np.sqrt((dy * dy).sum()))
    if sx == 0.0 or sy == 0.0:
        raise BehaviorError("pearson_r: constant input")
    r = float((dx * dy).sum() / (sx * sy))
    r = max(-1.0, min(1.0, r))
    if abs(r) == 1.0:
        return r, 0.0
    t = r * math.sqrt((n - 2) / (1.0 - r * r))
    return r, t_two_tailed_p(t, n - 2)


# ---------------------------------------------------------------------------
# Group comparisons relating EBQ to prediction correctness.

@dataclass
class Comparison:
    name: str
    model: str
    group_a: str
    group_b: str
    n_a: int
    n_b: int
    mean_a: Optional[float] = None
    mean_b: Optional[float] = None
    median_a: Optional[float] = None
    median_b: Optional[float] = None
    t: Optional[float] = None
    dof: Optional[float] = None
    p: Optional[float] = None
    available: bool = True
    note: str = ""


def _compare(name, model, label_a, values_a, label_b, values_b) -> Comparison:
    cmp = Comparison(name, model, label_a, label_b, len(values_a), len(values_b))
    if len(values_a) < 2 or len(values_b) < 2:
        cmp.available = False
        cmp.note = "group smaller than 2"
        return cmp
    a = np.asarray(values_a, dtype=np.float64)
    b = np.asarray(values_b, dtype=np.float64)
    cmp.mean_a, cmp.mean_b = float(a.mean()), float(b.mean())
    cmp.median_a, cmp.median_b = float(np.median(a)), float(np.median(b))
    if a.var(ddof=1) == 0.0 and b.var(ddof=1) == 0.0:
        # no spread anywhere: no evidence of a difference
        cmp.t = 0.0 if cmp.mean_a == cmp.mean_b else math.copysign(math.inf, cmp.mean_a - cmp.mean_b)
        cmp.p = 1.0 if cmp.mean_a == cmp.mean_b else 0.0
        cmp.dof = float(len(values_a) + len(values_b) - 2)
        cmp.note = "zero variance in both groups"
        return cmp
    res = welch_t(a, b)
    cmp.t, cmp.dof, cmp.p = res.t, res.dof, res.p
    return cmp


def _ebq_values(outcomes, predicate) -> list[float]:
    return [float(o.ebq) for o in outcomes if o.ebq is not None and predicate(o)]


def group_comparison_report(outcomes_by_model: dict[str, list[PredictionOutcome]],
                            min_segments: int = 10) -> list[Comparison]:
    """Welch comparisons of EBQ distributions:

    a) correct vs incorrect predictions, per model;
    b) consistently correct vs consistently incorrect across two models;
    c) well-predicted vs ill-predicted subjects (median split of the
       per-subject fraction of incorrect predictions), per model;
    d) correct vs incorrect within each of the well/ill groups, per model.
    """
    report: list[Comparison] = []
    for model, outcomes in outcomes_by_model.items():
        report.append(_compare(
            "correct_vs_incorrect", model,
            "correct", _ebq_values(outcomes, lambda o: o.correct),
            "incorrect", _ebq_values(outcomes, lambda o: not o.correct)))

    if len(outcomes_by_model) == 2:
        (model_a, out_a), (model_b, out_b) = outcomes_by_model.items()
        by_id = {o.segment_id: o for o in out_b}
        consistent_correct, consistent_incorrect = [], []
        for o in out_a:
            other = by_id.get(o.segment_id)
            if other is None or o.ebq is None:
                continue
            if o.correct and other.correct:
                consistent_correct.append(float(o.ebq))
            elif not o.correct and not other.correct:
                consistent_incorrect.append(float(o.ebq))
        report.append(_compare(
            "consistent_correct_vs_incorrect", f"{model_a}+{model_b}",
            "both_correct", consistent_correct, "both_incorrect", consistent_incorrect))

    for model, outcomes in outcomes_by_model.items():
        fractions, _ = fraction_incorrect(outcomes, min_segments)
        if len(fractions) < 2:
            report.append(Comparison("well_vs_ill", model, "well", "ill", 0, 0,
                                     available=False,
                                     note=f"fewer than 2 subjects with >= {min_segments} segments"))
            continue
        well, ill = median_split(fractions)
        report.append(_compare(
            "well_vs_ill", model,
            "well_predicted", _ebq_values(outcomes, lambda o: o.subject_id in well),
            "ill_predicted", _ebq_values(outcomes, lambda o: o.subject_id in ill)))
        for group_name, members in (("well", well), ("ill", ill)):
            report.append(_compare(
                f"correct_vs_incorrect_within_{group_name}", model,
                "correct", _ebq_values(outcomes, lambda o: o.subject_id in members and o.correct),
                "incorrect", _ebq_values(outcomes, lambda o: o.subject_id in members and not o.correct)))
    return report


def comparisons_to_json(report: list[Comparison]) -> str:
    return json.dumps([vars(c) for c in report], indent=2, sort_keys=True)
