"""Iterative null-space projection of concept directions.

Each round trains a linear probe for the concept on the current
representation, then projects the representation onto the probe
direction's orthogonal complement, z <- z - (d . z) d. The trace records,
per round, the probe's pre-removal accuracy, the damage to a fixed main
classifier evaluated through the accumulated projection, the probe's
spuriousness against a per-round clean reference, the mean representation
norm, and (for text input) the causal effect of toggling the concept token.

Three structural facts about a single projection step are checked by
dedicated routines rather than asserted in prose:

* mixing: when the probe direction has weight in both blocks, the
  projected main block acquires a term (w_p . z_p) w_m, so concept
  features leak into main features and main features are damaged;
* wrong removal: when the direction lies entirely in the main block, the
  concept block passes through bit-identical, and a 1-dimensional main
  block is zeroed exactly in floating point;
* norm decay: ||P z||^2 = ||z||^2 - (d . z)^2, so norms shrink by exactly
  the removed component and repeated rounds flatten the representation.

Projections are applied as rank-1 updates in a fixed order, so a replay
from the recorded directions reproduces the representation bit for bit;
each round stores a hash of the projected training representation to make
that checkable after the fact.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, replace

import numpy as np

from .latent import group_partition
from .maxmargin import (
    LinearClassifier,
    TrainingDiverged,
    TrainSettings,
    accuracy,
    train_logistic,
    train_max_margin,
)
from .metrics import psi_from_accuracies


def projection_matrix(w):
    """P = I - (w w^T) / ||w||^2: symmetric, idempotent, rank d-1."""
    w = np.asarray(w, dtype=float).ravel()
    norm = float(np.linalg.norm(w))
    if norm == 0.0:
        raise ValueError("cannot project out the zero direction")
    d = w / norm
    return np.eye(w.size) - np.outer(d, d)


def apply_projection(points, direction):
    """Rank-1 form of the same map; the canonical order of operations.

    All representation updates in this module go through this function so
    that a replay from stored directions is bitwise identical.
    """
    points = np.asarray(points, dtype=float)
    dots = points @ direction
    return points - dots[:, None] * direction


def _unit(w):
    w = np.asarray(w, dtype=float).ravel()
    n = float(np.linalg.norm(w))
    if n < 1e-15:
        return None
    return w / n


def _orthogonalize(direction, previous, tol=1e-10):
    d = direction.copy()
    for u in previous:
        d -= (d @ u) * u
    n = float(np.linalg.norm(d))
    if n < tol:
        return None
    return d / n


def _rep_hash(points):
    return hashlib.sha256(np.ascontiguousarray(points, dtype=float).tobytes()).hexdigest()


def _train_probe(points, labels, settings):
    if settings.mode == "hard_margin":
        return train_max_margin(points, labels, settings, trained_on="concept-only")
    return train_logistic(points, labels, settings, trained_on="concept-only")


@dataclass(frozen=True)
class _RepView:
    """Projected points paired with the original labels, for the metrics."""

    points: np.ndarray
    y_main: np.ndarray
    y_concept: np.ndarray


@dataclass(frozen=True)
class ProjectionStep:
    iteration: int
    probe_acc_pre: float | None
    main_acc_all: float
    main_acc_min: float | None
    probe_spuriousness: float | None
    mean_norm: float
    delta_prob: float | None
    direction: np.ndarray | None = None
    probe: LinearClassifier | None = None
    rep_hash: str | None = None


@dataclass(frozen=True)
class InlpTrace:
    steps: tuple
    main_clf: LinearClassifier
    clean_main: LinearClassifier | None
    clean_main_acc_min: float | None
    composed: np.ndarray
    stop_reason: str

    @property
    def directions(self):
        return [s.direction for s in self.steps if s.direction is not None]

    @property
    def n_removed(self):
        return len(self.directions)

    def effective_classifier(self, upto=None) -> LinearClassifier:
        """The main classifier composed with the first `upto` projections.

        Scoring raw points with it equals scoring projected points with the
        original classifier (up to rounding): w_eff = G^T w, same bias.
        """
        dirs = self.directions if upto is None else self.directions[:upto]
        w = self.main_clf.weights.copy()
        for d in reversed(dirs):
            w = w - (w @ d) * d
        return replace(self.main_clf, weights=w)


def _main_accs(main_clf, points, y_main, y_concept):
    part = group_partition(y_main, y_concept)
    pred = main_clf.predict(points)
    acc_all = float(np.mean(pred == y_main))
    if part.s_min.size == 0:
        return acc_all, None
    return acc_all, float(np.mean(pred[part.s_min] == y_main[part.s_min]))


def _constant_main_idx(y_main):
    values, counts = np.unique(y_main, return_counts=True)
    return np.flatnonzero(y_main == values[np.argmax(counts)])


def _text_fields(ds):
    if hasattr(ds, "sentences") and hasattr(ds, "table"):
        return ds.sentences, ds.table
    return None, None


def inlp_run(
    train,
    eval_ds,
    n_iters,
    main_clf=None,
    main_settings=None,
    probe_settings=None,
    train_main_labels=None,
    train_concept_labels=None,
    clean_concept_value=-1.0,
    compute_probe_psi=True,
    stop_at_chance=None,
    stop_on_main_drop=None,
    retrain_main=False,
) -> InlpTrace:
    """Run the removal loop and return the full trace.

    `train` and `eval_ds` are a latent dataset or an encoded corpus; only
    .points / .y_main / .y_concept / .subset are used, plus .sentences and
    .table on the eval side to compute the token-toggle effect when
    present. Label overrides apply to training only; every evaluation uses
    the stored clean labels. By default the main classifier is trained
    once on the unprojected training representation and frozen; each
    round's accuracy figures evaluate it through the projections
    accumulated so far. With retrain_main the head is refit each round on
    the newly projected training representation (the trace's main_clf and
    effective_classifier still refer to the initial frozen head). Probes
    are retrained per round on the current representation, and their
    spuriousness is scored against a clean probe retrained on the same
    representation restricted to a constant-main-label subset.

    Stopping: after n_iters rounds ("completed"), when the probe's
    held-out accuracy falls to stop_at_chance or below before a round
    ("chance"), when the probe direction has no component left outside the
    removed span ("novelty"), when probe training produces non-finite
    parameters ("diverged"), or when overall main accuracy has fallen more
    than stop_on_main_drop below its pre-removal value ("main_drop").
    """
    if n_iters < 0:
        raise ValueError("n_iters must be nonnegative")
    main_labels = train.y_main if train_main_labels is None else np.asarray(train_main_labels, dtype=float)
    concept_labels = train.y_concept if train_concept_labels is None else np.asarray(train_concept_labels, dtype=float)

    main_settings = main_settings or TrainSettings(mode="logistic")
    probe_settings = probe_settings or TrainSettings(mode="logistic")
    if main_clf is None:
        if main_settings.mode == "hard_margin":
            main_clf = train_max_margin(train.points, main_labels, main_settings)
        else:
            main_clf = train_logistic(train.points, main_labels, main_settings)

    # fixed clean-main reference: trained on the constant-concept subset of
    # the original representation, scored once on the original eval minority
    clean_main = None
    clean_main_acc_min = None
    clean_idx = np.flatnonzero(train.y_concept == clean_concept_value)
    if clean_idx.size >= 2 and np.unique(train.y_main[clean_idx]).size == 2:
        clean_settings = replace(main_settings, seed=main_settings.seed + 1)
        if clean_settings.mode == "hard_margin":
            clean_main = train_max_margin(
                train.points[clean_idx], train.y_main[clean_idx], clean_settings, trained_on="main-only"
            )
        else:
            clean_main = train_logistic(
                train.points[clean_idx], train.y_main[clean_idx], clean_settings, trained_on="main-only"
            )
        part0 = group_partition(eval_ds.y_main, eval_ds.y_concept)
        if part0.s_min.size:
            clean_main_acc_min = float(
                np.mean(clean_main.predict(eval_ds.points[part0.s_min]) == eval_ds.y_main[part0.s_min])
            )

    sentences, table = _text_fields(eval_ds)
    seed_children = np.random.SeedSequence(probe_settings.seed).spawn(max(1, 2 * n_iters))

    z_train = np.array(train.points, dtype=float)
    z_eval = np.array(eval_ds.points, dtype=float)
    composed = np.eye(z_train.shape[1])
    directions = []
    cur_main = main_clf

    def snapshot(iteration, probe=None, probe_acc=None, probe_psi=None, direction=None):
        acc_all, acc_min = _main_accs(cur_main, z_eval, eval_ds.y_main, eval_ds.y_concept)
        dp = None
        if sentences is not None:
            w_eff = composed.T @ cur_main.weights
            from .text import delta_prob

            dp = delta_prob(replace(cur_main, weights=w_eff), sentences, table)
        return ProjectionStep(
            iteration=iteration,
            probe_acc_pre=probe_acc,
            main_acc_all=acc_all,
            main_acc_min=acc_min,
            probe_spuriousness=probe_psi,
            mean_norm=float(np.linalg.norm(z_eval, axis=1).mean()),
            delta_prob=dp,
            direction=direction,
            probe=probe,
            rep_hash=_rep_hash(z_train),
        )

    steps = [snapshot(0)]
    base_acc_all = steps[0].main_acc_all
    stop_reason = "completed"

    clean_probe_idx = _constant_main_idx(train.y_main)
    clean_probe_ok = (
        clean_probe_idx.size >= 2 and np.unique(train.y_concept[clean_probe_idx]).size == 2
    )

    for t in range(1, n_iters + 1):
        probe_seed = int(seed_children[2 * (t - 1)].generate_state(1)[0])
        try:
            probe = _train_probe(z_train, concept_labels, replace(probe_settings, seed=probe_seed))
        except TrainingDiverged:
            stop_reason = "diverged"
            break
        probe_acc = accuracy(probe, z_eval, eval_ds.y_concept)
        if stop_at_chance is not None and probe_acc <= stop_at_chance:
            stop_reason = "chance"
            break

        probe_psi = None
        if compute_probe_psi and clean_probe_ok:
            clean_seed = int(seed_children[2 * (t - 1) + 1].generate_state(1)[0])
            try:
                clean_probe = _train_probe(
                    z_train[clean_probe_idx],
                    train.y_concept[clean_probe_idx],
                    replace(probe_settings, seed=clean_seed),
                )
            except TrainingDiverged:
                clean_probe = None
            if clean_probe is not None:
                part = group_partition(eval_ds.y_main, eval_ds.y_concept)
                if part.s_min.size:
                    pts, yc = z_eval[part.s_min], eval_ds.y_concept[part.s_min]
                    res = psi_from_accuracies(
                        float(np.mean(probe.predict(pts) == yc)),
                        float(np.mean(clean_probe.predict(pts) == yc)),
                    )
                    probe_psi = res.psi

        raw = _unit(probe.weights)
        direction = None if raw is None else _orthogonalize(raw, directions)
        if direction is None:
            stop_reason = "novelty"
            break
        z_train = apply_projection(z_train, direction)
        z_eval = apply_projection(z_eval, direction)
        composed = composed - np.outer(direction, direction @ composed)
        directions.append(direction)
        if retrain_main:
            try:
                if main_settings.mode == "hard_margin":
                    cur_main = train_max_margin(z_train, main_labels, main_settings)
                else:
                    cur_main = train_logistic(z_train, main_labels, main_settings)
            except TrainingDiverged:
                stop_reason = "diverged"
                break
        steps.append(snapshot(t, probe, probe_acc, probe_psi, direction))
        if stop_on_main_drop is not None and steps[-1].main_acc_all < base_acc_all - stop_on_main_drop:
            stop_reason = "main_drop"
            break

    return InlpTrace(
        steps=tuple(steps),
        main_clf=main_clf,
        clean_main=clean_main,
        clean_main_acc_min=clean_main_acc_min,
        composed=composed,
        stop_reason=stop_reason,
    )


def main_psi(trace: InlpTrace):
    """Main-task spuriousness per recorded round, against the fixed clean
    reference (None entries where the reference or the minority is missing)."""
    out = []
    for s in trace.steps:
        res = psi_from_accuracies(s.main_acc_min, trace.clean_main_acc_min)
        out.append(res.psi)
    return out


def first_below(trace: InlpTrace, field, threshold):
    for s in trace.steps:
        v = getattr(s, field)
        if v is not None and v < threshold:
            return s.iteration
    return None


def first_drop_iteration(trace: InlpTrace, field="main_acc_all", drop=0.05):
    base = getattr(trace.steps[0], field)
    if base is None:
        return None
    return first_below(trace, field, base - drop)


# ---------------------------------------------------------------------------
# single-step structure checks
# ---------------------------------------------------------------------------


def verify_mixing(ds, probe=None, probe_settings=None, tol=1e-9):
    """Quantify concept-into-main leakage of one projection step.

    Trains (or takes) a concept probe, splits its unit direction into the
    main and concept blocks, and checks two things on real data: the
    block-form of the update, main' - main = -(d . z) d_m, matches the
    matrix form P z entrywise; and swapping a point's concept block moves
    its projected MAIN block by exactly (d_p . delta_p) d_m. Returns a dict
    with the block norms, their product (zero iff no mixing is possible),
    the observed cross movement, and the worst formula error.
    """
    if probe is None:
        probe = _train_probe(ds.points, ds.y_concept, probe_settings or TrainSettings(mode="logistic"))
    d = _unit(probe.weights)
    if d is None:
        raise ValueError("probe has zero weights")
    d_m, d_p = d[: ds.d_m], d[ds.d_m :]
    pts = np.asarray(ds.points, dtype=float)
    via_rank1 = apply_projection(pts, d)
    via_matrix = pts @ projection_matrix(probe.weights)
    formula_err = float(np.max(np.abs(via_rank1 - via_matrix)))

    # swap concept blocks between the two most concept-distant points
    z = pts[0].copy()
    donor = pts[int(np.argmax(np.linalg.norm(pts[:, ds.d_m :] - z[ds.d_m :], axis=1)))]
    z_swapped = z.copy()
    z_swapped[ds.d_m :] = donor[ds.d_m :]
    delta_p = z_swapped[ds.d_m :] - z[ds.d_m :]
    main_move = apply_projection(z_swapped[None, :], d)[0][: ds.d_m] - apply_projection(z[None, :], d)[0][: ds.d_m]
    predicted = (d_p @ delta_p) * d_m
    cross_err = float(np.max(np.abs(main_move - predicted))) if ds.d_m else 0.0

    w_m = float(np.linalg.norm(d_m))
    w_p = float(np.linalg.norm(d_p))
    return {
        "w_main_norm": w_m,
        "w_concept_norm": w_p,
        "mixing_strength": w_m * w_p,
        "cross_move_norm": float(np.linalg.norm(main_move)),
        "cross_formula_err": cross_err,
        "formula_err": formula_err,
        "mixes": w_m * w_p > tol,
    }


def verify_wrong_removal(ds, probe, tau_snap=1e-10):
    """Project out a main-block direction and verify the concept block
    survives untouched.

    The probe must be concentrated in the main block; concept-block weights
    up to tau_snap (relative) are snapped to exact zeros first, anything
    larger is an error. With the direction exactly inside the main block
    the projected concept features are bit-identical to the originals. When
    the main block is one-dimensional the direction is the main axis and
    the projected main feature is exactly 0.0 for every point.
    """
    w = np.asarray(probe.weights, dtype=float).copy()
    total = float(np.linalg.norm(w))
    if total == 0.0:
        raise ValueError("probe has zero weights")
    if float(np.linalg.norm(w[ds.d_m :])) > tau_snap * total:
        raise ValueError("probe direction is not concentrated in the main block")
    w[ds.d_m :] = 0.0
    d = w / float(np.linalg.norm(w))
    pts = np.asarray(ds.points, dtype=float)
    projected = apply_projection(pts, d)
    concept_identical = projected[:, ds.d_m :].tobytes() == pts[:, ds.d_m :].tobytes()
    main_norm_before = float(np.linalg.norm(pts[:, : ds.d_m]))
    main_norm_after = float(np.linalg.norm(projected[:, : ds.d_m]))
    main_zeroed = None
    if ds.d_m == 1:
        main_zeroed = bool(np.all(projected[:, 0] == 0.0))
    return {
        "concept_bits_identical": concept_identical,
        "main_zeroed": main_zeroed,
        "main_norm_before": main_norm_before,
        "main_norm_after": main_norm_after,
        "projected": projected,
    }


def verify_norm_decay(trace: InlpTrace, points, rel_tol=1e-9):
    """Replay the recorded directions over `points` and check the exact
    norm bookkeeping ||P z||^2 = ||z||^2 - (d . z)^2 at every round.

    Returns (ok, max relative error, per-round mean squared norms).
    """
    z = np.array(points, dtype=float)
    max_err = 0.0
    means = [float(np.mean(np.einsum("ij,ij->i", z, z)))]
    for d in trace.directions:
        before = np.einsum("ij,ij->i", z, z)
        dots = z @ d
        z = apply_projection(z, d)
        after = np.einsum("ij,ij->i", z, z)
        expected = before - dots * dots
        scale = np.maximum(before, 1e-30)
        max_err = max(max_err, float(np.max(np.abs(after - expected) / scale)))
        means.append(float(after.mean()))
    return max_err <= rel_tol, max_err, means


def replay_matches(trace: InlpTrace, train_points):
    """Bitwise check that the stored per-round hashes reproduce from the
    recorded directions (same rank-1 update, same order)."""
    z = np.array(train_points, dtype=float)
    it = iter(trace.steps)
    first = next(it)
    if first.rep_hash != _rep_hash(z):
        return False
    for step in it:
        z = apply_projection(z, step.direction)
        if step.rep_hash != _rep_hash(z):
            return False
    return True


# ---------------------------------------------------------------------------
# trace serialization
# ---------------------------------------------------------------------------

TRACE_FIELDS = (
    "iter",
    "probe_acc_pre",
    "main_acc_all",
    "main_acc_min",
    "probe_spuriousness",
    "mean_norm",
    "delta_prob",
)


def _fmt(v):
    return "" if v is None else repr(float(v))


def write_trace(trace: InlpTrace, path, directions_path=None):
    with open(str(path), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRACE_FIELDS)
        for s in trace.steps:
            writer.writerow(
                [
                    s.iteration,
                    _fmt(s.probe_acc_pre),
                    _fmt(s.main_acc_all),
                    _fmt(s.main_acc_min),
                    _fmt(s.probe_spuriousness),
                    _fmt(s.mean_norm),
                    _fmt(s.delta_prob),
                ]
            )
    if directions_path is not None:
        with open(str(directions_path), "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            dim = trace.composed.shape[0]
            writer.writerow(["iter"] + [f"d{i}" for i in range(dim)])
            for s in trace.steps:
                if s.direction is not None:
                    writer.writerow([s.iteration] + [repr(float(v)) for v in s.direction])


def read_trace(path):
    """Rows of the trace CSV as dicts, empty cells back to None."""
    with open(str(path), newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != TRACE_FIELDS:
        raise ValueError(f"unrecognized trace header in {path}")
    out = []
    for row in rows[1:]:
        rec = {"iter": int(row[0])}
        for name, cell in zip(TRACE_FIELDS[1:], row[1:]):
            rec[name] = None if cell == "" else float(cell)
        out.append(rec)
    return out
