"""Two-stage metrics (TP/FP rates, OTP/OFP, CTP/ATP, macro F) and the
seeded 40/30/30 experiment runner."""

import csv
import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError, SplitError, UndefinedMetricError
from .labels import CLASSES, class_name

__all__ = [
    "OutcomeTable",
    "StageMetrics",
    "ExperimentPlan",
    "ExperimentReport",
    "tp_rate",
    "fp_rate",
    "per_class_fp",
    "macro_f_score",
    "stage_metrics",
    "stratified_split",
    "run_experiment",
    "format_report",
    "write_report_csv",
    "format_comparison",
]

REJECT = 0
SECOND_STAGES = ("none", "score", "pairwise")


@dataclass(frozen=True)
class OutcomeTable:
    """Per-sample record of one test run.

    Attributes
    ----------
    true : (n,) int
    accept : (n, K) bool
        First-stage acceptance by each class block, columns in ``classes``.
    final : (n,) int
        Final assignment, 0 for rejection.
    tags : (n,) str
    classes : tuple
    second_stage : {"none", "score", "pairwise"}
        How the final assignment was produced.  A score resolution only
        chooses among the blocks that accepted and is not a stage of its
        own for the miss accounting; pairwise blocks are.
    """

    true: np.ndarray
    accept: np.ndarray
    final: np.ndarray
    tags: np.ndarray = None
    classes: tuple = CLASSES
    second_stage: str = "none"

    def __post_init__(self):
        true = np.asarray(self.true).ravel()
        accept = np.asarray(self.accept, dtype=bool)
        final = np.asarray(self.final).ravel()
        if accept.shape != (true.size, len(self.classes)) or final.shape != true.shape:
            raise ParameterError("outcome arrays disagree in shape")
        if self.second_stage not in SECOND_STAGES:
            raise ParameterError("unknown second stage %r" % (self.second_stage,))
        tags = np.full(true.size, "positive", dtype=object) if self.tags is None else np.asarray(self.tags)
        object.__setattr__(self, "true", true)
        object.__setattr__(self, "accept", accept)
        object.__setattr__(self, "final", final)
        object.__setattr__(self, "tags", tags)

    @classmethod
    def single_stage(cls, true, pred, tags=None, classes=CLASSES):
        """Outcome of a topology that makes exactly one decision per sample."""
        pred = np.asarray(pred)
        accept = pred[:, None] == np.asarray(classes)[None, :]
        return cls(true, accept, pred, tags, tuple(classes), "none")

    def subset(self, mask):
        mask = np.asarray(mask)
        return OutcomeTable(self.true[mask], self.accept[mask], self.final[mask], self.tags[mask],
                            self.classes, self.second_stage)

    def true_accepted(self):
        col = np.searchsorted(self.classes, self.true)
        ok = col < len(self.classes)
        out = np.zeros(self.true.size, dtype=bool)
        out[ok] = self.accept[np.flatnonzero(ok), col[ok]]
        return out

    def misses(self):
        """Samples missed at any stage (union of per-stage misses)."""
        miss = ~self.true_accepted()
        if self.second_stage == "pairwise":
            miss |= self.final != self.true
        return miss


@dataclass(frozen=True)
class StageMetrics:
    """Percentages per class (keyed by label) plus averages.

    ``otp1``/``ofp1`` describe the first stage alone, ``otp``/``ofp`` the
    whole pipeline; ``tp``/``fp`` are the single-stage rates of the final
    assignment.
    """

    classes: tuple
    tp: dict
    fp: dict
    ctp: dict
    atp: dict
    otp1: dict
    ofp1: dict
    otp: dict
    ofp: dict
    rejected: dict
    f_score: float

    def average(self, name):
        d = getattr(self, name)
        return float(np.mean([d[c] for c in self.classes]))

    def as_row(self):
        out = {}
        for name in ("tp", "fp", "ctp", "atp", "otp1", "ofp1", "otp", "ofp", "rejected"):
            for c in self.classes:
                out["%s_%s" % (name, class_name(c))] = getattr(self, name)[c]
            out["%s_avg" % name] = self.average(name)
        out["f_score"] = self.f_score
        return out


def tp_rate(true, pred, c):
    """Percentage of class-``c`` samples assigned to ``c``."""
    true, pred = np.asarray(true), np.asarray(pred)
    n = np.sum(true == c)
    if n == 0:
        raise UndefinedMetricError("no test samples of class %r" % (c,))
    missed = np.sum((true == c) & (pred != c))
    return 100.0 * (n - missed) / n


def per_class_fp(true, pred, c):
    """Percentage of non-``c`` samples assigned to ``c``."""
    true, pred = np.asarray(true), np.asarray(pred)
    fs = np.sum(true != c)
    if fs == 0:
        raise UndefinedMetricError("no test samples outside class %r" % (c,))
    return 100.0 * np.sum((true != c) & (pred == c)) / fs


def fp_rate(true, pred, classes=None):
    """Class-averaged false-positive percentage."""
    true = np.asarray(true)
    classes = tuple(np.unique(true)) if classes is None else tuple(classes)
    if len(classes) < 2:
        raise UndefinedMetricError("false-positive rate needs at least two classes")
    return float(np.mean([per_class_fp(true, pred, c) for c in classes]))


def macro_f_score(true, pred, classes=None):
    """Mean over classes of F1 = 2PR/(P+R); a class never predicted has P=0."""
    true, pred = np.asarray(true), np.asarray(pred)
    classes = tuple(np.unique(true)) if classes is None else tuple(classes)
    fs = []
    for c in classes:
        tp = np.sum((true == c) & (pred == c))
        npred, nreal = np.sum(pred == c), np.sum(true == c)
        p = tp / npred if npred else 0.0
        r = tp / nreal if nreal else 0.0
        fs.append(0.0 if p + r == 0 else 2 * p * r / (p + r))
    return float(np.mean(fs))


def stage_metrics(table):
    """All metrics of one outcome table.

    OTP counts a sample as found unless some stage missed it.  OFP counts a
    sample against block i only if it was (wrongly) accepted by i at every
    stage, i.e. its final assignment is i.  Rejected samples are misses
    for their class and nobody's false positive.
    """
    t = table
    classes = tuple(t.classes)
    n_acc = t.accept.sum(1)
    hit1 = t.true_accepted()
    miss = t.misses()
    res = {k: {} for k in ("tp", "fp", "ctp", "atp", "otp1", "ofp1", "otp", "ofp", "rejected")}
    for k, c in enumerate(classes):
        own = t.true == c
        n = own.sum()
        if n == 0:
            raise UndefinedMetricError("no test samples of class %r" % (c,))
        other = ~own
        fs = other.sum()
        if fs == 0:
            raise UndefinedMetricError("no test samples outside class %r" % (c,))
        res["ctp"][c] = 100.0 * np.sum(own & hit1 & (n_acc == 1)) / n
        res["atp"][c] = 100.0 * np.sum(own & hit1 & (n_acc >= 2)) / n
        res["otp1"][c] = 100.0 * np.sum(own & hit1) / n
        res["ofp1"][c] = 100.0 * np.sum(other & t.accept[:, k]) / fs
        res["otp"][c] = 100.0 * (n - np.sum(own & miss)) / n
        res["ofp"][c] = 100.0 * np.sum(other & t.accept[:, k] & (t.final == c)) / fs
        res["tp"][c] = tp_rate(t.true, t.final, c)
        res["fp"][c] = per_class_fp(t.true, t.final, c)
        res["rejected"][c] = 100.0 * np.sum(own & (t.final == REJECT)) / n
    return StageMetrics(classes, f_score=macro_f_score(t.true, t.final, classes), **res)


# ---------------------------------------------------------------------------
# experiment runner


@dataclass(frozen=True)
class ExperimentPlan:
    fractions: tuple = (0.4, 0.3, 0.3)
    seeds: tuple = (0, 1, 2, 3, 4)
    test_filter: str = "all"

    def __post_init__(self):
        f = tuple(float(x) for x in self.fractions)
        if len(f) != 3 or any(x <= 0 for x in f) or abs(sum(f) - 1.0) > 1e-9:
            raise ParameterError("split fractions must be three positive numbers summing to 1")
        if len(set(self.seeds)) != len(self.seeds) or not self.seeds:
            raise ParameterError("seeds must be distinct and non-empty")
        if self.test_filter not in ("all", "intermediates"):
            raise ParameterError("test filter must be 'all' or 'intermediates'")
        object.__setattr__(self, "fractions", f)
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))


def stratified_split(labels, tags, fractions=(0.4, 0.3, 0.3), seed=0):
    """Train/validation/test indices, stratified by (label, tag).

    Each stratum of size n gives round(f_train n) training and round(f_val
    n) validation samples, the rest go to test.
    """
    labels = np.asarray(labels)
    tags = np.asarray(tags) if tags is not None else np.full(labels.size, "positive", dtype=object)
    rng = np.random.default_rng(seed)
    parts = ([], [], [])
    for c in np.unique(labels):
        if np.sum(labels == c) < 3:
            raise SplitError("class %r has fewer than 3 samples and cannot be split" % (c,))
        for tag in sorted(set(tags[labels == c].tolist())):
            idx = np.flatnonzero((labels == c) & (tags == tag))
            idx = idx[rng.permutation(idx.size)]
            n = idx.size
            n_tr = int(np.floor(fractions[0] * n + 0.5))
            n_va = int(np.floor(fractions[1] * n + 0.5))
            n_va = min(n_va, n - n_tr)
            parts[0].append(idx[:n_tr])
            parts[1].append(idx[n_tr:n_tr + n_va])
            parts[2].append(idx[n_tr + n_va:])
    out = tuple(np.sort(np.concatenate(p)) if p else np.zeros(0, dtype=int) for p in parts)
    for name, idx in zip(("training", "validation", "test"), out):
        missing = set(np.unique(labels).tolist()) - set(labels[idx].tolist())
        if missing:
            raise SplitError("%s split lacks classes %s" % (name, sorted(missing)))
    return out


@dataclass(frozen=True)
class ExperimentReport:
    spec: object
    plan: ExperimentPlan
    runs: tuple  # StageMetrics per seed
    outcomes: tuple = field(default=(), repr=False)

    def mean(self, name, c=None):
        vals = [m.f_score if name == "f_score" else (m.average(name) if c is None else getattr(m, name)[c])
                for m in self.runs]
        return float(np.mean(vals))

    def std(self, name, c=None):
        vals = [m.f_score if name == "f_score" else (m.average(name) if c is None else getattr(m, name)[c])
                for m in self.runs]
        return float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0


def _second_stage(model):
    if model.resolver == "PairwiseBlocks":
        return "pairwise"
    if model.resolver in ("SvmScore", "AvgSvmScore"):
        return "score"
    return "none"


def run_experiment(plan, table, spec, keep_outcomes=True):
    """Train and test ``spec`` once per seed.

    ``table`` is a FeatureTable carrying every matrix the framework needs.
    With the intermediates filter the test metrics use only
    intermediate-tagged test samples; training and validation still use
    both tags.
    """
    from .frameworks import apply_framework, fit_framework

    runs, outcomes = [], []
    for seed in plan.seeds:
        tr, va, te = stratified_split(table.labels, table.tags, plan.fractions, seed)
        if plan.test_filter == "intermediates":
            te = te[table.tags[te] == "intermediate"]
            if te.size == 0:
                raise SplitError("no intermediate samples in the test split")
        s = dataclasses.replace(spec, seed=seed)
        mats = table.matrices
        model = fit_framework(s, {k: v[tr] for k, v in mats.items()}, table.labels[tr],
                              {k: v[va] for k, v in mats.items()}, table.labels[va])
        outcome, final = apply_framework(model, {k: v[te] for k, v in mats.items()})
        ot = OutcomeTable(table.labels[te], outcome.accept, final, table.tags[te],
                          model.classes, _second_stage(model))
        runs.append(stage_metrics(ot))
        if keep_outcomes:
            outcomes.append(ot)
    return ExperimentReport(spec, plan, tuple(runs), tuple(outcomes))


def _cell(report, name, c=None):
    return "%6.2f +- %5.2f" % (report.mean(name, c), report.std(name, c))


def format_report(report):
    """Text table: one row per class, an Avg row and an F-score row."""
    two_stage = report.spec.framework in ("ovr", "cascade", "common-hier")
    cols = ["ctp", "atp", "otp", "ofp"] if two_stage else ["tp", "fp"]
    head = ["Class"] + [c.upper() + " (%)" for c in cols]
    rows = [head]
    for c in report.runs[0].classes:
        rows.append([class_name(c)] + [_cell(report, k, c) for k in cols])
    rows.append(["Avg"] + [_cell(report, k) for k in cols])
    rows.append(["F-score", "%.4f +- %.4f" % (report.mean("f_score"), report.std("f_score"))]
                + [""] * (len(cols) - 1))
    widths = [max(len(r[i]) for r in rows) for i in range(len(head))]
    lines = ["  ".join(v.ljust(w) for v, w in zip(r, widths)).rstrip() for r in rows]
    title = "%s / %s features / resolver %s / %d seeds / test=%s" % (
        report.spec.framework, report.spec.features, report.spec.resolver, len(report.runs),
        report.plan.test_filter)
    return "\n".join([title] + lines)


def write_report_csv(report, path):
    """One row per seed with every per-class and average metric."""
    rows = [dict(seed=s, **m.as_row()) for s, m in zip(report.plan.seeds, report.runs)]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: ("%.6f" % v if isinstance(v, float) else v) for k, v in r.items()})


def format_comparison(reports):
    """One row per framework with mean OTP, OFP and F-score."""
    rows = [["Framework", "Features", "Resolver", "OTP (%)", "OFP (%)", "F-score"]]
    for r in reports:
        rows.append([r.spec.framework, r.spec.features, r.spec.resolver or "-", "%.2f" % r.mean("otp"),
                     "%.2f" % r.mean("ofp"), "%.4f" % r.mean("f_score")])
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    return "\n".join("  ".join(v.ljust(w) for v, w in zip(r, widths)).rstrip() for r in rows)
