"""Threshold-sweep ROC curves in false-alarm / false-reject form."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass
class RocCurve:
    """Operating points ordered by rising threshold.

    A clip is accepted when ``score >= threshold``. The last point uses an
    infinite threshold (nothing accepted: FA = 0, FR = 1).
    """

    thresholds: np.ndarray
    fa: np.ndarray
    fr: np.ndarray

    @classmethod
    def from_scores(cls, scores, labels) -> "RocCurve":
        scores = np.asarray(scores, dtype=np.float64)
        labels = np.asarray(labels)
        pos, neg = scores[labels == 1], scores[labels == 0]
        if pos.size == 0 or neg.size == 0:
            raise ValueError("ROC needs both keyword and non-keyword scores")
        thresholds = np.append(np.unique(scores), np.inf)
        pos_sorted, neg_sorted = np.sort(pos), np.sort(neg)
        fr = np.searchsorted(pos_sorted, thresholds, side="left") / pos.size
        fa = (neg.size - np.searchsorted(neg_sorted, thresholds, side="left")) / neg.size
        return cls(thresholds, fa, fr)

    def __len__(self):
        return self.thresholds.size

    def fr_at_fa(self, fa_target: float) -> float:
        """FR at ``fa_target`` by linear interpolation along the curve.

        When several points sit exactly at ``fa_target`` the lowest FR wins.
        """
        fa, fr = self.fa[::-1], self.fr[::-1]  # FA ascending, FR descending
        exact = fa == fa_target
        if np.any(exact):
            return float(fr[exact].min())
        hi = int(np.searchsorted(fa, fa_target, side="left"))
        if hi == 0:
            return float(fr[0])
        if hi == fa.size:
            return float(fr[-1])
        lo = hi - 1
        frac = (fa_target - fa[lo]) / (fa[hi] - fa[lo])
        return float(fr[lo] + frac * (fr[hi] - fr[lo]))

    def nearest_point(self, fa_target: float):
        """The operating point whose FA is closest to ``fa_target`` (lowest FR on ties)."""
        gap = np.abs(self.fa - fa_target)
        candidates = np.flatnonzero(gap == gap.min())
        best = candidates[np.argmin(self.fr[candidates])]
        return float(self.thresholds[best]), float(self.fa[best]), float(self.fr[best])

    def auc(self) -> float:
        """Area under the detection curve ``(FA, 1 - FR)``."""
        fa, hit = self.fa[::-1], 1.0 - self.fr[::-1]
        fa = np.concatenate([[0.0], fa, [1.0]])
        hit = np.concatenate([[0.0], hit, [1.0]])
        return float(np.sum(np.diff(fa) * (hit[1:] + hit[:-1]) / 2.0))

    def to_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["threshold", "fa", "fr"])
            for row in zip(self.thresholds, self.fa, self.fr):
                writer.writerow([repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path) -> "RocCurve":
        data = np.loadtxt(Path(path), delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, 0], data[:, 1], data[:, 2])
