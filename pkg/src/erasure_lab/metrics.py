"""Evaluation metrics: group accuracies, spuriousness scores, correlation.

The spuriousness score of a classifier f compares its minority-group
accuracy to that of a clean reference classifier trained without access to
the label correlation: psi = |1 - Acc_f(S_min) / Acc_clean(S_min)|. The
majority group is fixed as the agreeing label pairs (y_m = y_p). Scores
that cannot be computed (empty minority group, clean reference at zero
accuracy) are reported as undefined via the sentinel, never as 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .latent import group_partition


@dataclass(frozen=True)
class SpuriousnessResult:
    acc_min_f: float | None
    acc_min_clean: float | None
    psi: float | None
    defined: bool


UNDEFINED = SpuriousnessResult(acc_min_f=None, acc_min_clean=None, psi=None, defined=False)


def _acc(pred, truth):
    return float(np.mean(pred == truth))


def group_accuracies(clf, ds):
    """(acc_all, acc_maj, acc_min) of main-label predictions; empty group -> None."""
    part = group_partition(ds.y_main, ds.y_concept)
    pred = clf.predict(ds.points)
    acc_all = _acc(pred, ds.y_main)
    acc_maj = _acc(pred[part.s_maj], ds.y_main[part.s_maj]) if part.s_maj.size else None
    acc_min = _acc(pred[part.s_min], ds.y_main[part.s_min]) if part.s_min.size else None
    return acc_all, acc_maj, acc_min


def psi_from_accuracies(acc_min_f, acc_min_clean) -> SpuriousnessResult:
    if acc_min_f is None or acc_min_clean is None or acc_min_clean == 0.0:
        return UNDEFINED
    return SpuriousnessResult(
        acc_min_f=acc_min_f,
        acc_min_clean=acc_min_clean,
        psi=abs(1.0 - acc_min_f / acc_min_clean),
        defined=True,
    )


def spuriousness_main(f, ds, clean_f) -> SpuriousnessResult:
    """Spuriousness of a main-task classifier against a clean reference."""
    part = group_partition(ds.y_main, ds.y_concept)
    if part.s_min.size == 0:
        return UNDEFINED
    y = ds.y_main[part.s_min]
    pts = ds.points[part.s_min]
    return psi_from_accuracies(_acc(f.predict(pts), y), _acc(clean_f.predict(pts), y))


def spuriousness_probe(p, ds, clean_p) -> SpuriousnessResult:
    """Same score with the label roles swapped: accuracy is against y_concept."""
    part = group_partition(ds.y_main, ds.y_concept)
    if part.s_min.size == 0:
        return UNDEFINED
    y = ds.y_concept[part.s_min]
    pts = ds.points[part.s_min]
    return psi_from_accuracies(_acc(p.predict(pts), y), _acc(clean_p.predict(pts), y))


def pearson(xs, ys):
    """Pearson r in [-1, 1]; None when either side has zero variance."""
    xs = np.asarray(xs, dtype=float).ravel()
    ys = np.asarray(ys, dtype=float).ravel()
    if xs.shape != ys.shape or xs.size < 3:
        raise ValueError("need equal-length inputs with at least 3 entries")
    xc = xs - xs.mean()
    yc = ys - ys.mean()
    den = float(np.sqrt((xc @ xc) * (yc @ yc)))
    if den == 0.0:
        return None
    return float(np.clip((xc @ yc) / den, -1.0, 1.0))
