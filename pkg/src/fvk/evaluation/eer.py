"""Equal-error-rate estimation from scored verification trials."""

import csv
from dataclasses import dataclass

import numpy as np


@dataclass
class EerReport:
    eer: float
    threshold: float
    trial_count: int
    enrollment_count: int = 1


def compute_eer(scores, labels, enrollment_count=1) -> EerReport:
    """Sweep score thresholds and locate where FAR and FRR cross.

    ``labels`` is truthy for same-speaker trials. Candidate thresholds sit
    midway between adjacent distinct scores, so accept-at-threshold ties never
    arise; when the crossing falls between two candidates the rates are
    linearly interpolated.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be equal-length 1-D sequences")
    pos = scores[labels]
    neg = scores[~labels]
    if pos.size == 0 or neg.size == 0:
        raise ValueError("need both same-speaker and different-speaker trials")

    uniq = np.unique(scores)
    mids = (uniq[:-1] + uniq[1:]) / 2.0
    cands = np.concatenate([[uniq[0] - 1.0], mids, [uniq[-1] + 1.0]])
    far = (neg[None, :] >= cands[:, None]).mean(axis=1)
    frr = (pos[None, :] < cands[:, None]).mean(axis=1)

    diff = frr - far  # monotone from -1 to +1
    k = int(np.searchsorted(diff >= 0, True))
    if diff[k] == 0.0:
        eer, thr = far[k], cands[k]
    else:
        d0, d1 = diff[k - 1], diff[k]
        alpha = -d0 / (d1 - d0)
        eer = far[k - 1] + alpha * (far[k] - far[k - 1])
        thr = cands[k - 1] + alpha * (cands[k] - cands[k - 1])
    return EerReport(float(eer), float(thr), int(scores.size), enrollment_count)


def export_score_distribution(scores, labels, path, bins=20):
    """Bar-chart-ready histogram of same/different-speaker scores (CSV)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    lo, hi = float(scores.min()), float(scores.max())
    if hi <= lo:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, bins + 1)
    same, _ = np.histogram(scores[labels], bins=edges)
    diff, _ = np.histogram(scores[~labels], bins=edges)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_low", "bin_high", "same_speaker", "different_speaker"])
        for i in range(bins):
            writer.writerow([f"{edges[i]:.6f}", f"{edges[i + 1]:.6f}", int(same[i]), int(diff[i])])
