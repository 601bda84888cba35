"""PROD late fusion, label decision and per-class evaluation tables."""

from __future__ import annotations

import io
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .dataset import CLASS_NAMES
from .exceptions import ValidationError
from .validation import check_posteriors

PROB_CLIP = 1e-12


@dataclass(frozen=True)
class FusionResult:
    fused: np.ndarray  # (1/S) * prod_s p_s; not normalised
    predicted_label: int
    S: int


def prod_fuse_batch(posteriors):
    """Fuse ``S`` arrays of shape ``(n, C)`` (or ``(C,)``) into ``(1/S) * prod``.

    The product is formed as a sum of logs so that many small probabilities
    do not underflow before exponentiation.
    """
    if len(posteriors) == 0:
        raise ValidationError("prod fusion needs at least one posterior")
    arrs = [np.atleast_2d(check_posteriors(np.atleast_2d(p))) for p in posteriors]
    shape = arrs[0].shape
    if any(a.shape != shape for a in arrs):
        raise ValidationError("all posteriors must share the same (n, C) shape")
    S = len(arrs)
    with np.errstate(divide="ignore"):
        log_sum = np.sum([np.log(a) for a in arrs], axis=0)
    return np.exp(log_sum - math.log(S))


def prod_fuse(posteriors) -> FusionResult:
    """Fuse single-sample posteriors ``p_1 .. p_S`` (each length C)."""
    if len(posteriors) == 0:
        raise ValidationError("prod fusion needs at least one posterior")
    fused = prod_fuse_batch([np.asarray(p, dtype=np.float64).reshape(1, -1) for p in posteriors])[0]
    return FusionResult(fused, decide_label(fused), len(posteriors))


def decide_label(fused) -> int:
    """Argmax with ties going to the lowest class index."""
    v = np.asarray(fused, dtype=np.float64)
    if v.size == 0:
        raise ValidationError("cannot decide a label from an empty vector")
    if np.isnan(v).any():
        raise ValidationError("cannot decide a label from a vector containing NaN")
    return int(np.argmax(v))  # numpy returns the first maximal index


def renormalize(fused):
    fused = np.asarray(fused, dtype=np.float64)
    total = fused.sum(axis=-1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = fused / total
    # all-zero rows (every model put zero mass somewhere) fall back to uniform
    bad = ~np.isfinite(out).all(axis=-1)
    out[bad] = 1.0 / fused.shape[-1]
    return out


class ProdFusionClassifier(ClassifierMixin, BaseEstimator):
    """Late fusion of fitted per-kind classifiers.

    ``X`` for ``predict``/``predict_proba`` is a sequence with one feature
    array per member, in the order of ``estimators``. ``predict_proba``
    returns the renormalised fused vector; ``fused_scores`` the raw one.
    """

    def __init__(self, estimators=()):
        self.estimators = estimators

    def fit(self, X=None, y=None):
        if not self.estimators:
            raise ValidationError("ProdFusionClassifier needs at least one estimator")
        self.classes_ = np.arange(len(CLASS_NAMES))
        return self

    def fused_scores(self, Xs):
        if len(Xs) != len(self.estimators):
            raise ValidationError(f"expected {len(self.estimators)} feature arrays, got {len(Xs)}")
        return prod_fuse_batch([est.predict_proba(x) for est, x in zip(self.estimators, Xs)])

    def predict_proba(self, Xs):
        return renormalize(self.fused_scores(Xs))

    def predict(self, Xs):
        return np.argmax(self.fused_scores(Xs), axis=1)


# -- metrics ---------------------------------------------------------------

@dataclass
class MetricsTable:
    """Per-class accuracy (%) and log loss for one system."""

    system: str
    accuracy: np.ndarray  # percent, NaN where the class is absent
    logloss: np.ndarray
    memory_kb: float | None = None
    macs_m: float | None = None
    class_names: tuple[str, ...] = CLASS_NAMES
    notes: list[str] = field(default_factory=list)

    @property
    def present(self):
        return ~np.isnan(self.accuracy)

    @property
    def average_accuracy(self):
        return float(np.mean(self.accuracy[self.present])) if self.present.any() else math.nan

    @property
    def average_logloss(self):
        return float(np.mean(self.logloss[self.present])) if self.present.any() else math.nan

    @classmethod
    def from_values(cls, system, accuracy, logloss, memory_kb=None, macs_m=None):
        """Table from externally reported numbers (e.g. a published baseline)."""
        return cls(system, np.asarray(accuracy, float), np.asarray(logloss, float), memory_kb, macs_m)


def evaluate(proba, y_true, system="system", memory_kb=None, macs_m=None, fused=False) -> MetricsTable:
    """Per-class accuracy and log loss.

    ``proba`` rows are renormalised to sum to one before the log loss (a PROD
    fused vector does not); accuracy uses the raw argmax, which is unaffected.
    Probabilities are clipped to ``[1e-12, 1 - 1e-12]``.
    """
    raw = check_posteriors(proba)
    y_true = np.asarray(y_true)
    if len(raw) != len(y_true):
        raise ValidationError("proba and y_true lengths differ")
    pred = np.argmax(raw, axis=1)
    p = np.clip(renormalize(raw)[np.arange(len(y_true)), y_true], PROB_CLIP, 1 - PROB_CLIP)
    n_classes = raw.shape[1]
    acc = np.full(n_classes, np.nan)
    ll = np.full(n_classes, np.nan)
    notes = []
    for c in range(n_classes):
        mask = y_true == c
        if not mask.any():
            warnings.warn(f"class {CLASS_NAMES[c]!r} absent from evaluation data; excluded from averages")
            notes.append(f"{CLASS_NAMES[c]} absent")
            continue
        acc[c] = 100.0 * float(np.mean(pred[mask] == c))
        ll[c] = float(-np.mean(np.log(p[mask])))
    if fused:
        notes.append("log loss on renormalised fused scores")
    return MetricsTable(system, acc, ll, memory_kb, macs_m, CLASS_NAMES[:n_classes], notes)


@dataclass
class Comparison:
    tables: list[MetricsTable]
    deltas: list[tuple[str, str, np.ndarray, np.ndarray]]  # (a, b, acc b-a, logloss b-a)

    def to_tsv(self) -> str:
        return _render(self, sep="\t")

    def to_text(self, deltas=True) -> str:
        comp = self if deltas else Comparison(self.tables, [])
        return _render(comp, sep=None)


def compare_systems(tables, pairs=None) -> Comparison:
    """Side-by-side tables plus deltas ``b - a`` for each ``(a, b)`` name pair.

    Without ``pairs`` every table is compared against the first one.
    """
    tables = list(tables)
    if not tables:
        raise ValidationError("nothing to compare")
    names = [t.class_names for t in tables]
    if any(n != names[0] for n in names):
        raise ValidationError("systems use different class sets")
    by_name = {t.system: t for t in tables}
    if pairs is None:
        pairs = [(tables[0].system, t.system) for t in tables[1:]]
    deltas = []
    for a, b in pairs:
        if a not in by_name or b not in by_name:
            raise ValidationError(f"unknown system in pair {(a, b)}")
        ta, tb = by_name[a], by_name[b]
        deltas.append((a, b, tb.accuracy - ta.accuracy, tb.logloss - ta.logloss))
    return Comparison(tables, deltas)


def _fmt(v, spec):
    return "n/a" if v is None or (isinstance(v, float) and math.isnan(v)) else format(v, spec)


def _render(comp: Comparison, sep):
    header = ["class"]
    for t in comp.tables:
        header += [f"{t.system} acc", f"{t.system} logloss"]
    for a, b, _, _ in comp.deltas:
        header += [f"d({b}-{a}) acc", f"d({b}-{a}) logloss"]
    rows = [header]
    class_names = comp.tables[0].class_names
    for c, name in enumerate(class_names):
        row = [name]
        for t in comp.tables:
            row += [_fmt(t.accuracy[c], ".1f"), _fmt(t.logloss[c], ".3f")]
        for _, _, da, dl in comp.deltas:
            row += [_fmt(da[c], "+.1f"), _fmt(dl[c], "+.3f")]
        rows.append(row)
    avg = ["Average"]
    for t in comp.tables:
        avg += [_fmt(t.average_accuracy, ".1f"), _fmt(t.average_logloss, ".3f")]
    by_name = {t.system: t for t in comp.tables}
    for a, b, _, _ in comp.deltas:
        avg += [
            _fmt(by_name[b].average_accuracy - by_name[a].average_accuracy, "+.1f"),
            _fmt(by_name[b].average_logloss - by_name[a].average_logloss, "+.3f"),
        ]
    rows.append(avg)
    for label, attr, spec in (("Memory (KB)", "memory_kb", ".1f"), ("MACs (M)", "macs_m", ".2f")):
        row = [label]
        for t in comp.tables:
            row += [_fmt(getattr(t, attr), spec), ""]
        row += [""] * (2 * len(comp.deltas))
        rows.append(row)
    out = io.StringIO()
    if sep is not None:
        for r in rows:
            out.write(sep.join(r) + "\n")
    else:
        widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
        for r in rows:
            out.write("  ".join(cell.rjust(w) if i else cell.ljust(w) for i, (cell, w) in enumerate(zip(r, widths))).rstrip() + "\n")
    notes = sorted({n for t in comp.tables for n in t.notes})
    for n in notes:
        out.write(f"# {n}\n")
    return out.getvalue()


# Published numbers for display next to desk-scale runs (real TAU data; not
# reproducible here). Order follows CLASS_NAMES.
DCASE_BASELINE = MetricsTable.from_values(
    "DCASE baseline",
    [39.4, 51.4, 36.0, 30.1, 20.8, 70.6, 44.6, 29.3, 47.9, 58.9],
    [1.534, 1.385, 1.672, 1.822, 2.265, 1.025, 1.462, 1.758, 1.382, 1.448],
    memory_kb=46.5,
    macs_m=29.23,
)
REFERENCE_FUSED_DISTILLED = MetricsTable.from_values(
    "Ens. students w/ dis. (published)",
    [62.3, 63.7, 47.0, 23.4, 39.9, 77.6, 58.2, 77.5, 45.8, 78.9],
    [1.306, 1.278, 1.453, 2.134, 1.646, 0.948, 1.384, 0.841, 1.305, 1.037],
    memory_kb=88.7,
    macs_m=29.27,
)
