"""Reasonability Matrix: quadrant classification, counts, and the M1-M4 metrics.

An instance is *reasonable* when the annotator answered yes to "the focus
area contains necessary details" (Q1) and no to "contains unnecessary
details not related" (Q2). Crossing that with prediction correctness yields
four quadrants:

    correct   + reasonable   -> RA   (right answer, right reasons)
    correct   + unreasonable -> UA   (right answer, attention on context)
    incorrect + reasonable   -> RIA  (wrong answer despite sound attention)
    incorrect + unreasonable -> UIA  (wrong on both axes)

Metrics are plain count ratios in [0, 1]: m1 = (RA+UA)/total,
m2 = RA/total, m4 = (RA+RIA)/total. M3 (mean IoU of binarized attention
against reference masks) is computed elsewhere and carried in the report.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .attention import BinaryMask
from .errors import DataError, InputError, UndefinedMetricError

QUADRANTS = ("RA", "UA", "RIA", "UIA")


@dataclass(frozen=True)
class Verdict:
    """One annotator's questionnaire answers for one instance."""

    q1_sufficient: bool
    q2_contextual: bool
    annotator_id: str = ""
    timestamp: float = 0.0

    @property
    def reasonable(self) -> bool:
        return self.q1_sufficient and not self.q2_contextual


@dataclass
class ReasonabilityMatrix:
    ra: int = 0
    ua: int = 0
    ria: int = 0
    uia: int = 0
    ids: dict[str, list] = field(default_factory=lambda: {q: [] for q in QUADRANTS})

    @property
    def total(self) -> int:
        return self.ra + self.ua + self.ria + self.uia

    def counts(self) -> tuple[int, int, int, int]:
        return (self.ra, self.ua, self.ria, self.uia)


@dataclass
class MetricsReport:
    m1_accuracy: float
    m2_ra_performance: float
    m3_mean_iou: float
    m3_std_iou: float
    m4_attention_accuracy: float

    def as_dict(self) -> dict[str, float]:
        return {
            "m1_accuracy": self.m1_accuracy,
            "m2_ra_performance": self.m2_ra_performance,
            "m3_mean_iou": self.m3_mean_iou,
            "m3_std_iou": self.m3_std_iou,
            "m4_attention_accuracy": self.m4_attention_accuracy,
        }

    def render(self) -> str:
        return "".join(f"{k} {v:.6f}\n" for k, v in self.as_dict().items())


def classify_instance(prediction_correct: bool, verdict: Verdict) -> str:
    if prediction_correct:
        return "RA" if verdict.reasonable else "UA"
    return "RIA" if verdict.reasonable else "UIA"


def build_matrix(records) -> ReasonabilityMatrix:
    """records: iterable of (instance_id, prediction_correct, Verdict)."""
    matrix = ReasonabilityMatrix()
    seen = set()
    for instance_id, correct, verdict in records:
        if instance_id in seen:
            raise DataError(f"duplicate instance id {instance_id!r}")
        seen.add(instance_id)
        quadrant = classify_instance(bool(correct), verdict)
        matrix.ids[quadrant].append(instance_id)
        if quadrant == "RA":
            matrix.ra += 1
        elif quadrant == "UA":
            matrix.ua += 1
        elif quadrant == "RIA":
            matrix.ria += 1
        else:
            matrix.uia += 1
    return matrix


def _ratio(numerator: int, matrix: ReasonabilityMatrix) -> float:
    if matrix.total == 0:
        raise UndefinedMetricError("matrix is empty; metric undefined")
    return numerator / matrix.total


def m1_accuracy(matrix: ReasonabilityMatrix) -> float:
    return _ratio(matrix.ra + matrix.ua, matrix)


def m2_ra_performance(matrix: ReasonabilityMatrix) -> float:
    return _ratio(matrix.ra, matrix)


def m4_attention_accuracy(matrix: ReasonabilityMatrix) -> float:
    return _ratio(matrix.ra + matrix.ria, matrix)


def iou(a, b) -> float:
    """Bitwise intersection-over-union of two masks (BinaryMask or bool grid);
    two empty masks agree perfectly (1.0)."""
    ga = np.asarray(getattr(a, "grid", a), dtype=bool)
    gb = np.asarray(getattr(b, "grid", b), dtype=bool)
    if ga.shape != gb.shape:
        raise InputError(f"mask dims differ: {ga.shape} vs {gb.shape}")
    union = int(np.logical_or(ga, gb).sum())
    if union == 0:
        return 1.0
    return int(np.logical_and(ga, gb).sum()) / union


def majority_vote(verdicts: list[Verdict]) -> Verdict:
    """Per-question majority; even-split ties resolve toward unreasonable
    (Q1 -> no, Q2 -> yes) so borderline attention gets adjusted."""
    if not verdicts:
        raise InputError("majority_vote needs at least one verdict")
    n = len(verdicts)
    q1_yes = sum(1 for v in verdicts if v.q1_sufficient)
    q2_yes = sum(1 for v in verdicts if v.q2_contextual)
    return Verdict(
        q1_sufficient=q1_yes * 2 > n,
        q2_contextual=q2_yes * 2 >= n,
        annotator_id="majority",
        timestamp=max(v.timestamp for v in verdicts),
    )
