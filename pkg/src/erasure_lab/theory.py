"""Margin constructions that predict when a trained classifier goes spurious.

Setting: a zero-centered dataset split into an invariant block (the features
that causally determine the task label) and a spurious block (features that
merely correlate with it). The purely-invariant max-margin classifier uses
the invariant block only. The central construction perturbs it toward a
direction eps_hat in the spurious block while preserving the weight norm:

    c_alpha = alpha * w_inv  (invariant block)
              + sqrt(1 - alpha^2) * ||w_inv|| * eps_hat  (spurious block)

When eps_hat puts every margin point's spurious features strictly on its
own class side, there is an alpha < 1 above which every functional margin
of c_alpha strictly exceeds 1, the minimum margin of the invariant
classifier itself. A max-margin trainer therefore prefers a spurious-using
direction. The alpha bounds computed here make that threshold explicit:

* margin points (per class): the spurious gain must beat the invariant
  loss, alpha > (1 - W^2 b^2) / (1 + W^2 b^2) with W = ||w_inv|| and b the
  worst margin-point spurious projection of that class;
* non-margin points with spurious projection d >= 0 are safe once
  alpha > 1 / gamma, gamma being the smallest non-margin invariant margin;
* non-margin points with d < 0 need alpha above the larger root of
  alpha^2 (m^2 + W^2 d^2) - 2 alpha m + (1 - W^2 d^2) = 0, per point with
  invariant margin m, maximized over such points. (The root is the fixed
  point of the usual implicit form of this bound; solving the quadratic
  avoids bisection.)

For a 1-dimensional invariant block the picture is exact in both
directions: the trained classifier uses the spurious block if and only if
the margin points' spurious features are strictly separable through the
origin. The two ways this separability fails have named dataset builders
below (identical spurious vectors on opposite-class margin points;
opposite vectors on same-class margin points).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .latent import LatentDataset
from .maxmargin import (
    LinearClassifier,
    TrainSettings,
    is_separable,
    margins,
    train_max_margin,
)

TAU_SPUR = 1e-6


def task_blocks(ds: LatentDataset, task):
    """(invariant columns, spurious columns, labels) for the given task."""
    if task == "main":
        return slice(0, ds.d_m), slice(ds.d_m, ds.d_m + ds.d_p), ds.y_main
    if task == "probe":
        return slice(ds.d_m, ds.d_m + ds.d_p), slice(0, ds.d_m), ds.y_concept
    raise ValueError("task must be 'main' or 'probe'")


def witness_direction(Z_sp, labels, tol=1e-9):
    """Strict through-origin separator of spurious features, if one exists.

    Solves max delta s.t. y_i (eps . z_i) >= delta, ||eps||_inf <= 1 by LP
    and reports (found, eps_hat, delta). The witness is returned unit-norm.
    """
    Z_sp = np.asarray(Z_sp, dtype=float)
    labels = np.asarray(labels, dtype=float).ravel()
    n, d = Z_sp.shape
    if n == 0:
        raise ValueError("no points to separate")
    a_ub = np.concatenate([-labels[:, None] * Z_sp, np.ones((n, 1))], axis=1)
    res = linprog(
        c=np.concatenate([np.zeros(d), [-1.0]]),
        A_ub=a_ub,
        b_ub=np.zeros(n),
        bounds=[(-1.0, 1.0)] * d + [(None, 10.0)],
        method="highs",
    )
    if res.status != 0:
        raise RuntimeError(f"witness LP ended with status {res.status}: {res.message}")
    eps = res.x[:d]
    delta = float(res.x[d])
    norm = float(np.linalg.norm(eps))
    if delta <= tol or norm == 0.0:
        return False, None, delta
    return True, eps / norm, delta


def embed_block(vec, cols, dim):
    out = np.zeros(dim)
    out[cols] = vec
    return out


def train_invariant(ds: LatentDataset, task, settings=None) -> LinearClassifier:
    """Max-margin classifier on the invariant block, zero elsewhere."""
    inv_cols, _, labels = task_blocks(ds, task)
    settings = settings or TrainSettings(fit_bias=not ds.centered)
    clf = train_max_margin(ds.points[:, inv_cols], labels, settings)
    w = embed_block(clf.weights, inv_cols, ds.points.shape[1])
    return LinearClassifier(weights=w, bias=clf.bias, trained_on=f"{task}-invariant")


@dataclass(frozen=True)
class AssumptionReport:
    task: str
    a32: bool
    a33: bool
    invariant_clf: LinearClassifier | None
    margin_points: np.ndarray | None
    witness: np.ndarray | None
    witness_delta: float | None


def check_assumptions(ds: LatentDataset, task, settings=None) -> AssumptionReport:
    """Separability of the invariant block, and of the spurious features
    restricted to the invariant classifier's margin points."""
    inv_cols, sp_cols, labels = task_blocks(ds, task)
    a32 = is_separable(ds.points[:, inv_cols], labels, through_origin=ds.centered)
    if not a32:
        return AssumptionReport(task, False, False, None, None, None, None)
    clf = train_invariant(ds, task, settings)
    rep = margins(clf, ds.points, labels)
    found, eps_hat, delta = witness_direction(
        ds.points[np.ix_(rep.margin_points, np.arange(ds.points.shape[1])[sp_cols])],
        labels[rep.margin_points],
    )
    return AssumptionReport(
        task=task,
        a32=True,
        a33=found,
        invariant_clf=clf,
        margin_points=rep.margin_points,
        witness=eps_hat,
        witness_delta=delta,
    )


@dataclass(frozen=True)
class AlphaBounds:
    lb_margin_pos: float
    lb_margin_neg: float
    lb_nonmargin_gamma: float
    lb_nonmargin_eta: float
    lb_overall: float


@dataclass(frozen=True)
class PerturbedClassifier:
    base: LinearClassifier
    eps_sp: np.ndarray
    alpha: float
    combined: LinearClassifier


def _margin_class_bound(W, beta):
    """Lower bound on alpha from a margin-point class with worst spurious
    projection beta > 0: derived from sqrt(1-a^2) W beta > 1 - a."""
    return (1.0 - W**2 * beta**2) / (1.0 + W**2 * beta**2)


def _nonmargin_neg_bound(W, m, d):
    """Larger root of a^2 (m^2 + W^2 d^2) - 2 a m + (1 - W^2 d^2) = 0."""
    wd2 = W**2 * d**2
    return (m + abs(W * d) * math.sqrt(m * m - 1.0 + wd2)) / (m * m + wd2)


def perturbed_weights(base_w_inv, inv_cols, sp_cols, dim, eps_hat, alpha):
    W = float(np.linalg.norm(base_w_inv))
    w = np.zeros(dim)
    w[inv_cols] = alpha * base_w_inv
    w[sp_cols] = math.sqrt(max(0.0, 1.0 - alpha * alpha)) * W * eps_hat
    return w


def construct_perturbed(base, ds: LatentDataset, eps_sp, task="main", tau_margin=1e-6):
    """Alpha bounds and the perturbed classifier at the midpoint alpha.

    `base` must be purely invariant (zero spurious block, zero bias) and
    normalized so its minimum functional margin is 1. `eps_sp` must place
    every margin point's spurious features strictly on its class side;
    violations raise with the failing point index.
    """
    inv_cols, sp_cols, labels = task_blocks(ds, task)
    dim = ds.points.shape[1]
    w = np.asarray(base.weights, dtype=float)
    if w.shape[0] != dim:
        raise ValueError("base classifier dimension mismatch")
    if base.bias != 0.0:
        raise ValueError("construction requires a zero-bias base classifier")
    sp_norm = float(np.linalg.norm(w[sp_cols]))
    if sp_norm > TAU_SPUR * max(1.0, float(np.linalg.norm(w))):
        raise ValueError("base classifier is not purely invariant")
    w_inv = w[inv_cols]
    W = float(np.linalg.norm(w_inv))
    rep = margins(base, ds.points, labels, tau_margin)
    if abs(rep.min_margin - 1.0) > 1e-6:
        raise ValueError(
            f"base classifier must have minimum functional margin 1, got {rep.min_margin}"
        )
    eps_hat = np.asarray(eps_sp, dtype=float)
    eps_hat = eps_hat / float(np.linalg.norm(eps_hat))
    proj = ds.points[:, sp_cols] @ eps_hat
    signed = labels * proj

    on_margin = np.zeros(ds.points.shape[0], dtype=bool)
    on_margin[rep.margin_points] = True
    lbs = {"pos": 0.0, "neg": 0.0}
    for name, mask in (("pos", labels > 0), ("neg", labels < 0)):
        sel = on_margin & mask
        if not sel.any():
            continue
        beta = float(signed[sel].min())
        if beta <= 0.0:
            idx = int(np.flatnonzero(sel)[np.argmin(signed[sel])])
            raise ValueError(
                f"eps_sp is not a valid witness: margin point {idx} has "
                f"nonpositive spurious projection {beta}"
            )
        lbs[name] = max(0.0, _margin_class_bound(W, beta))

    off = ~on_margin
    if off.any():
        gamma = float(rep.functional_margins[off].min())
        lb_gamma = max(0.0, 1.0 / gamma)
        neg = off & (signed < 0.0)
        if neg.any():
            ms = rep.functional_margins[neg]
            ds_ = signed[neg]
            lb_eta = max(
                _nonmargin_neg_bound(W, float(m), float(d)) for m, d in zip(ms, ds_)
            )
        else:
            lb_eta = 0.0
    else:
        lb_gamma = 0.0
        lb_eta = 0.0

    bounds = AlphaBounds(
        lb_margin_pos=lbs["pos"],
        lb_margin_neg=lbs["neg"],
        lb_nonmargin_gamma=lb_gamma,
        lb_nonmargin_eta=lb_eta,
        lb_overall=max(lbs["pos"], lbs["neg"], lb_gamma, lb_eta),
    )
    if bounds.lb_overall >= 1.0:
        raise ValueError("alpha interval is empty; construction assumptions violated")
    alpha = (1.0 + bounds.lb_overall) / 2.0
    pc = perturbed_at(base, ds, eps_hat, alpha, task)
    new_margins = labels * pc.combined.score(ds.points)
    worst = int(np.argmin(new_margins))
    if new_margins[worst] <= 1.0:
        raise ValueError(
            f"perturbed margin not above 1 at point {worst}: {new_margins[worst]}"
        )
    return bounds, pc


def perturbed_at(base, ds: LatentDataset, eps_hat, alpha, task="main") -> PerturbedClassifier:
    """The norm-preserving perturbation of `base` at a given alpha."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    inv_cols, sp_cols, _ = task_blocks(ds, task)
    eps_hat = np.asarray(eps_hat, dtype=float)
    eps_hat = eps_hat / float(np.linalg.norm(eps_hat))
    w = perturbed_weights(
        base.weights[inv_cols], inv_cols, sp_cols, ds.points.shape[1], eps_hat, alpha
    )
    combined = LinearClassifier(weights=w, bias=0.0, trained_on=f"{task}-perturbed")
    return PerturbedClassifier(base=base, eps_sp=eps_hat, alpha=alpha, combined=combined)


def spurious_norms(clf, ds: LatentDataset, task="main"):
    _, sp_cols, _ = task_blocks(ds, task)
    w = np.asarray(clf.weights)
    return float(np.linalg.norm(w[sp_cols])), float(np.linalg.norm(w))


def is_spurious_using(clf, ds: LatentDataset, task="main", tau_spur=TAU_SPUR):
    sp, full = spurious_norms(clf, ds, task)
    return sp > tau_spur * full


def train_unrestricted(ds: LatentDataset, task, settings=None) -> LinearClassifier:
    _, _, labels = task_blocks(ds, task)
    settings = settings or TrainSettings(fit_bias=not ds.centered)
    return train_max_margin(ds.points, labels, settings)


def verify_sufficient(ds: LatentDataset, task="main", settings=None, tau_spur=TAU_SPUR):
    """Does the unrestricted max-margin classifier use the spurious block?

    Requires a separable invariant block (the full feature set is then
    separable too). Returns the thresholded answer; the threshold is
    relative, sp-block norm > tau_spur * full norm.
    """
    if ds.d_p == 0 or ds.d_m == 0:
        return False
    inv_cols, _, labels = task_blocks(ds, task)
    if not is_separable(ds.points[:, inv_cols], labels, through_origin=ds.centered):
        raise ValueError("invariant block must be separable for this check")
    clf = train_unrestricted(ds, task, settings)
    return is_spurious_using(clf, ds, task, tau_spur)


@dataclass(frozen=True)
class NecessaryCheck:
    spurious_using: bool
    margin_separable: bool
    agree: bool
    witness_delta: float | None
    full_clf: LinearClassifier
    invariant_clf: LinearClassifier


def necessary_1d_report(ds: LatentDataset, task="main", settings=None, tau_spur=TAU_SPUR):
    """Both sides of the 1-D equivalence, evaluated independently.

    Left: the unrestricted trained classifier puts relative weight above
    tau_spur on the spurious block. Right: the spurious features of the
    invariant classifier's margin points admit a strict through-origin
    separator. The report records whether the two sides agree.
    """
    inv_cols, sp_cols, labels = task_blocks(ds, task)
    if ds.points[:, inv_cols].shape[1] != 1:
        raise ValueError("necessary-condition check requires a 1-D invariant block")
    settings = settings or TrainSettings(fit_bias=not ds.centered)
    full_clf = train_unrestricted(ds, task, settings)
    using = is_spurious_using(full_clf, ds, task, tau_spur)
    inv_clf = train_invariant(ds, task, settings)
    rep = margins(inv_clf, ds.points, labels)
    found, _, delta = witness_direction(
        ds.points[np.ix_(rep.margin_points, np.arange(ds.points.shape[1])[sp_cols])],
        labels[rep.margin_points],
    )
    return NecessaryCheck(
        spurious_using=using,
        margin_separable=found,
        agree=using == found,
        witness_delta=delta,
        full_clf=full_clf,
        invariant_clf=inv_clf,
    )


def check_necessary_1d(ds: LatentDataset, task="main", settings=None, tau_spur=TAU_SPUR):
    return necessary_1d_report(ds, task, settings, tau_spur).agree


# ---------------------------------------------------------------------------
# instance builders for the 1-D equivalence study
# ---------------------------------------------------------------------------


def _assemble_1d(z_inv, z_sp, y, seed):
    z_inv = np.asarray(z_inv, dtype=float)[:, None]
    z_sp = np.atleast_2d(np.asarray(z_sp, dtype=float))
    if z_sp.shape[0] != z_inv.shape[0]:
        z_sp = z_sp.T
    pts = np.concatenate([z_inv, z_sp], axis=1)
    return LatentDataset(
        points=pts,
        y_main=np.asarray(y, dtype=float),
        y_concept=np.asarray(y, dtype=float),
        d_m=1,
        d_p=z_sp.shape[1],
        seed=seed,
        centered=True,
        center_offsets=np.zeros(pts.shape[1]),
    )


def _random_rotation(d, rng):
    if d == 1:
        return np.array([[rng.choice([-1.0, 1.0])]])
    q, r = np.linalg.qr(rng.normal(size=(d, d)))
    return q * np.sign(np.diag(r))


def build_guaranteed_1d(seed, d_sp=2, n_pairs=8) -> LatentDataset:
    """1-D invariant instances where the margin-point separability holds.

    Every point's spurious features sit strictly on its class side of a
    hidden direction, so whatever the margin set turns out to be, a strict
    witness exists and the trained classifier should mix the blocks.
    """
    rng = np.random.default_rng(seed)
    u = rng.normal(size=d_sp)
    u /= np.linalg.norm(u)
    scale = rng.uniform(0.5, 2.0)
    z_inv, z_sp, y = [], [], []
    # mirrored margin pair at exactly +/- 1
    for cls in (1.0, -1.0):
        margin_sp = cls * scale * (0.4 + rng.uniform(0.0, 0.3)) * u
        z_inv.append(cls * 1.0)
        z_sp.append(margin_sp)
        y.append(cls)
    # mirrored fillers strictly off margin, same-side spurious projections
    for _ in range(n_pairs):
        g = rng.uniform(1.3, 3.0)
        along = scale * rng.uniform(0.3, 1.0)
        perp = rng.normal(size=d_sp) * 0.2 * scale
        perp -= (perp @ u) * u
        for cls in (1.0, -1.0):
            z_inv.append(cls * g)
            z_sp.append(cls * (along * u + perp))
            y.append(cls)
    rot = _random_rotation(d_sp, rng)
    z_sp = np.asarray(z_sp) @ rot.T
    return _assemble_1d(z_inv, z_sp, y, seed)


def build_opposite_side_failure(seed, d_sp=2) -> LatentDataset:
    """Margin points of opposite classes carry identical spurious vectors.

    For any direction e, y+ (e . v) and y- (e . v) have opposite signs, so
    no strict witness exists and the trained classifier should stay on the
    invariant axis.
    """
    rng = np.random.default_rng(seed)
    v = rng.normal(size=d_sp)
    v /= np.linalg.norm(v)
    v *= rng.uniform(0.5, 1.5)
    u = rng.normal(size=d_sp) * 0.7
    z_inv = [1.0, -1.0, 2.0, -2.0, 2.5, -2.5]
    z_sp = [v, v, -v, -v, u, -u]
    y = [1.0, -1.0, 1.0, -1.0, 1.0, -1.0]
    rot = _random_rotation(d_sp, rng)
    z_sp = np.asarray(z_sp) @ rot.T
    return _assemble_1d(z_inv, z_sp, y, seed)


def build_same_side_failure(seed, d_sp=2) -> LatentDataset:
    """Two same-class margin points carry exactly opposite spurious vectors.

    Any direction scoring one of them positive scores the other negative,
    so again no strict witness exists. The other class sits strictly
    farther from the boundary and never enters the margin set.
    """
    rng = np.random.default_rng(seed)
    v = rng.normal(size=d_sp)
    v /= np.linalg.norm(v)
    v *= rng.uniform(0.5, 1.5)
    u1 = rng.normal(size=d_sp) * 0.7
    u2 = rng.normal(size=d_sp) * 0.7
    z_inv = [1.0, 1.0, 2.5, 2.5, -1.5, -1.5, -2.0, -2.0]
    z_sp = [v, -v, u1, -u1, u2, -u2, v, -v]
    y = [1.0, 1.0, 1.0, 1.0, -1.0, -1.0, -1.0, -1.0]
    rot = _random_rotation(d_sp, rng)
    z_sp = np.asarray(z_sp) @ rot.T
    return _assemble_1d(z_inv, z_sp, y, seed)


def build_slanted_2d() -> LatentDataset:
    """Tiny 2-D instance where mixing in the spurious axis widens the margin.

    The invariant-only separator has geometric margin 1; the direction
    (0.6, 0.8) achieves 1.8 with both coordinates active.
    """
    pts = np.array([[1.0, 1.5], [3.0, 0.0], [-1.0, -1.5], [-3.0, 0.0]])
    y = np.array([1.0, 1.0, -1.0, -1.0])
    return LatentDataset(
        points=pts,
        y_main=y,
        y_concept=y,
        d_m=1,
        d_p=1,
        seed=0,
        centered=True,
        center_offsets=np.zeros(2),
    )
