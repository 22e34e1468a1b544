"""Linear classifiers: hard-margin training, logistic fallback, margins.

The hard-margin trainer solves the separable-SVM dual

    max_a  sum(a) - 0.5 * || sum_i a_i y_i x_i ||^2
    s.t.   a >= 0                  (plus sum_i a_i y_i = 0 when a bias is fit)

by cyclic coordinate ascent (no bias) or maximal-violating-pair updates
(bias), keeping w = sum_i a_i y_i x_i incrementally. Termination is
certified: a primal-feasible point is built by rescaling (w, b) so the
minimum functional margin is 1, and iteration stops once the duality gap
drops below tol_kkt relative to the primal value. The iterate is then
polished by solving the equality-constrained problem on the active set
exactly, which pins symmetric solutions (for instance a provably zero
weight block) down to rounding error instead of gap level.

The returned classifier is normalized so its minimum functional margin is
exactly 1: the usual "minimize ||w|| subject to every margin >= 1" form.

Tolerance coupling: tau_margin decides which points count as margin points
(band of relative width tau_margin above the minimum margin), while tol_kkt
bounds how far the solver's weight vector can sit from the true optimum
(roughly sqrt(2 * tol_kkt * primal) in weight space). Callers that test
weight components against a threshold t should keep tol_kkt well below
t^2, which the defaults (tau_margin 1e-6, tol_kkt 1e-9, plus the exact
polish step) respect for the thresholds used in this package.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import linprog


class NotSeparableError(ValueError):
    """Raised when hard-margin training is asked to fit inseparable data."""


class TrainingDiverged(RuntimeError):
    """Raised when an iterative trainer produces non-finite parameters."""


@dataclass(frozen=True)
class LinearClassifier:
    """Affine scorer with the fixed tie rule sign(0) = +1."""

    weights: np.ndarray
    bias: float = 0.0
    trained_on: str = "all"  # all | main-only | concept-only

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", float(self.bias))

    def score(self, X):
        return np.asarray(X, dtype=float) @ self.weights + self.bias

    def predict(self, X):
        s = self.score(X)
        return np.where(s >= 0.0, 1.0, -1.0)

    @property
    def norm(self):
        return float(np.linalg.norm(self.weights))

    def rescaled(self, gamma):
        if gamma <= 0:
            raise ValueError("rescale factor must be positive")
        return replace(self, weights=self.weights * gamma, bias=self.bias * gamma)


@dataclass(frozen=True)
class MarginReport:
    functional_margins: np.ndarray
    min_margin: float
    geometric_margin: float
    margin_points: np.ndarray


@dataclass
class TrainSettings:
    """Knobs shared by the two trainers.

    mode picks the trainer ("hard_margin" or "logistic"). epochs applies to
    logistic SGD only; None means 1 pass when n >= 1000 and 10 passes on
    smaller sets. max_iters caps hard-margin pair updates and logistic
    epochs respectively. fit_bias False pins b = 0, the right setting for
    zero-centered data.
    """

    mode: str = "hard_margin"
    max_iters: int = 200_000
    step_size: float = 5e-3
    tol_kkt: float = 1e-9
    tau_margin: float = 1e-6
    seed: int = 0
    fit_bias: bool = True
    epochs: int | None = None
    batch_size: int = 32


def _as_xy(X, y):
    X = np.ascontiguousarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError("X must be n x d with one label per row")
    if not np.all(np.abs(y) == 1.0):
        raise ValueError("labels must be -1 or +1")
    return X, y


def is_separable(X, y, through_origin=False):
    """Strict linear separability, decided by LP feasibility.

    Feasibility of y_i (w . x_i + b) >= 1 with box-bounded coefficients
    (|w_j|, |b| <= 1e6) is equivalent to strict separability for data of
    order-one scale; a geometric margin below about 1e-6 of the feature
    scale would be misread as inseparable, which is far outside anything
    generated here. Single-class input is trivially separable.
    """
    X, y = _as_xy(X, y)
    n, d = X.shape
    if n == 0:
        raise ValueError("empty input")
    if np.all(y == y[0]):
        return True
    n_var = d if through_origin else d + 1
    a_ub = np.empty((n, n_var))
    a_ub[:, :d] = -y[:, None] * X
    if not through_origin:
        a_ub[:, d] = -y
    res = linprog(
        c=np.zeros(n_var),
        A_ub=a_ub,
        b_ub=-np.ones(n),
        bounds=[(-1e6, 1e6)] * n_var,
        method="highs",
    )
    if res.status == 0:
        return True
    if res.status == 2:
        return False
    raise RuntimeError(f"separability LP ended with status {res.status}: {res.message}")


def margins(clf, X, y, tau_margin=1e-6):
    """Per-point functional margins and the margin-point index set.

    Margin points are all indices whose margin is within a relative band
    tau_margin of the minimum: m_i <= m_min + tau_margin * |m_min|. The
    argmin is always included, so the set is nonempty.
    """
    X, y = _as_xy(X, y)
    m = y * clf.score(X)
    m_min = float(m.min())
    thresh = m_min + tau_margin * abs(m_min)
    pts = np.flatnonzero(m <= thresh)
    w_norm = clf.norm
    geo = m_min / w_norm if w_norm > 0 else float("nan")
    return MarginReport(
        functional_margins=m,
        min_margin=m_min,
        geometric_margin=float(geo),
        margin_points=pts,
    )


def _certificate(w, b, X, y, alpha):
    """Duality gap of the rescaled-feasible primal point, or None."""
    m = y * (X @ w + b)
    m_min = m.min()
    if m_min <= 0:
        return None, None
    ww = float(w @ w)
    primal = 0.5 * ww / (m_min * m_min)
    dual = float(alpha.sum()) - 0.5 * ww
    return primal - dual, float(m_min)


def _coordinate_ascent_no_bias(X, y, tol, max_iters):
    n, d = X.shape
    yX = y[:, None] * X
    sq = np.einsum("ij,ij->i", X, X)
    alpha = np.zeros(n)
    w = np.zeros(d)
    updates = 0
    while updates < max_iters:
        for i in range(n):
            if sq[i] == 0.0:
                continue
            g = 1.0 - yX[i] @ w
            new_a = alpha[i] + g / sq[i]
            if new_a < 0.0:
                new_a = 0.0
            step = new_a - alpha[i]
            if step != 0.0:
                alpha[i] = new_a
                w = w + step * yX[i]
        updates += n
        gap, _ = _certificate(w, 0.0, X, y, alpha)
        if gap is not None:
            primal = 0.5 * float(w @ w)
            if gap <= tol * (1.0 + abs(primal)):
                return w, 0.0, alpha
    raise RuntimeError("hard-margin coordinate ascent failed to certify optimality")


def _smo_with_bias(X, y, tol, max_iters):
    n, _ = X.shape
    alpha = np.zeros(n)
    w = np.zeros(X.shape[1])
    scores = np.zeros(n)
    pos = y > 0
    neg = ~pos
    for it in range(max_iters):
        crit = y - scores
        up = pos | (alpha > 0)
        low = neg | (alpha > 0)
        # maximal violating pair
        crit_up = np.where(up, crit, -np.inf)
        crit_low = np.where(low, crit, np.inf)
        i = int(np.argmax(crit_up))
        j = int(np.argmin(crit_low))
        violation = crit[i] - crit[j]
        if violation <= max(tol, 1e-14):
            break
        diff = X[i] - X[j]
        denom = float(diff @ diff)
        if denom <= 0.0:
            # coincident points with distinct labels: impossible for
            # separable input, which the caller has already verified
            raise RuntimeError("degenerate violating pair in SMO")
        lam = violation / denom
        if y[i] < 0:
            lam = min(lam, alpha[i])
        if y[j] > 0:
            lam = min(lam, alpha[j])
        if lam <= 0.0:
            break
        alpha[i] += y[i] * lam
        alpha[j] -= y[j] * lam
        w = w + lam * diff
        scores = scores + lam * (X @ diff)
        if (it + 1) % 64 == 0:
            b = _midpoint_bias(scores, pos, neg)
            gap, _ = _certificate(w, b, X, y, alpha)
            if gap is not None:
                primal = 0.5 * float(w @ w)
                if gap <= tol * (1.0 + abs(primal)):
                    break
    else:
        raise RuntimeError("hard-margin SMO failed to certify optimality")
    return w, _midpoint_bias(scores, pos, neg), alpha


def _midpoint_bias(scores, pos, neg):
    return float(-(scores[pos].min() + scores[neg].max()) / 2.0)


def _polish_active_set(X, y, w, b, fit_bias, tau_active=1e-6):
    """Exact equality-constrained solve on the current active set.

    Solves the stationarity system w = sum beta_i y_i x_i with
    y_i (w . x_i + b) = 1 on active points (and sum beta_i y_i = 0 when a
    bias is fit). Accepted only when the polished point stays feasible on
    every point and the multipliers are nonnegative, so a wrong active-set
    guess falls back to the iterate instead of corrupting it.
    """
    m = y * (X @ w + b)
    m_min = m.min()
    if m_min <= 0:
        return None
    active = np.flatnonzero(m <= m_min + tau_active * abs(m_min))
    for _ in range(6):
        if active.size == 0:
            return None
        Xa, ya = X[active], y[active]
        K = (Xa @ Xa.T) * np.outer(ya, ya)
        if fit_bias:
            k = active.size
            A = np.zeros((k + 1, k + 1))
            A[:k, :k] = K
            A[:k, k] = ya
            A[k, :k] = ya
            rhs = np.concatenate([np.ones(k), [0.0]])
        else:
            A = K
            rhs = np.ones(active.size)
        sol, *_ = np.linalg.lstsq(A, rhs, rcond=None)
        beta = sol[: active.size]
        b_new = float(sol[active.size]) if fit_bias else 0.0
        if np.any(beta < -1e-9):
            active = active[beta > 1e-12]
            continue
        w_new = (beta * ya) @ Xa
        m_new = y * (X @ w_new + b_new)
        if m_new.min() >= 1.0 - 1e-9 and float(w_new @ w_new) <= float(w @ w) / m_min**2 * (1 + 1e-9):
            return w_new, b_new
        return None
    return None


def train_max_margin(X, y, settings=None, trained_on="all"):
    """Minimum-norm separator with every functional margin at least 1.

    Raises NotSeparableError (pointing at logistic mode) when no strict
    separator exists. The result is deterministic: the dual solvers are
    cyclic / maximal-violating-pair with no randomness.
    """
    settings = settings or TrainSettings()
    X, y = _as_xy(X, y)
    if X.shape[0] < 2 or np.all(y == y[0]):
        raise ValueError("need at least two points with both classes present")
    if not is_separable(X, y, through_origin=not settings.fit_bias):
        raise NotSeparableError(
            "data is not strictly linearly separable; train_logistic handles this case"
        )
    if settings.fit_bias:
        w, b, _ = _smo_with_bias(X, y, settings.tol_kkt, settings.max_iters)
    else:
        w, b, _ = _coordinate_ascent_no_bias(X, y, settings.tol_kkt, settings.max_iters)
    polished = _polish_active_set(X, y, w, b, settings.fit_bias)
    if polished is not None:
        w, b = polished
    m_min = float((y * (X @ w + b)).min())
    if m_min <= 0:
        raise RuntimeError("solver returned an infeasible direction")
    w = w / m_min
    b = b / m_min
    return LinearClassifier(weights=w, bias=b, trained_on=trained_on)


def _auto_epochs(n, epochs):
    if epochs is not None:
        return epochs
    return 1 if n >= 1000 else 10


def _logistic_grad(w, b, X, y, fit_bias):
    s = X @ w + b
    # d/ds softplus(-y s) = -y * sigmoid(-y s)
    g = -y / (1.0 + np.exp(y * s))
    gw = (g @ X) / X.shape[0]
    gb = float(g.mean()) if fit_bias else 0.0
    return gw, gb


def train_logistic_info(X, y, settings=None, trained_on="all"):
    """Minibatch-SGD logistic trainer; returns (classifier, diagnostics).

    Plain SGD at fixed step size over shuffled minibatches, zero init, so
    the only randomness is the seeded batch order. Diagnostics report the
    full-batch gradient norm at exit and whether it reached tol_kkt before
    the epoch budget ran out.
    """
    settings = settings or TrainSettings(mode="logistic")
    X, y = _as_xy(X, y)
    n, d = X.shape
    if np.all(y == y[0]) or n < 2:
        raise ValueError("need both classes present")
    epochs = min(_auto_epochs(n, settings.epochs), settings.max_iters)
    rng = np.random.default_rng(settings.seed)
    w = np.zeros(d)
    b = 0.0
    lr = settings.step_size
    converged = False
    epochs_run = 0
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, settings.batch_size):
            idx = order[start : start + settings.batch_size]
            gw, gb = _logistic_grad(w, b, X[idx], y[idx], settings.fit_bias)
            w = w - lr * gw
            if settings.fit_bias:
                b = b - lr * gb
        epochs_run += 1
        if not (np.all(np.isfinite(w)) and np.isfinite(b)):
            raise TrainingDiverged(f"non-finite parameters after epoch {epochs_run}")
        gw, gb = _logistic_grad(w, b, X, y, settings.fit_bias)
        grad_norm = float(np.sqrt(gw @ gw + gb * gb))
        if grad_norm <= settings.tol_kkt:
            converged = True
            break
    gw, gb = _logistic_grad(w, b, X, y, settings.fit_bias)
    info = {
        "grad_norm": float(np.sqrt(gw @ gw + gb * gb)),
        "epochs_run": epochs_run,
        "converged": converged,
    }
    return LinearClassifier(weights=w, bias=b, trained_on=trained_on), info


def train_logistic(X, y, settings=None, trained_on="all"):
    clf, _ = train_logistic_info(X, y, settings, trained_on)
    return clf


def accuracy(clf, X, y):
    X, y = _as_xy(X, y)
    return float(np.mean(clf.predict(X) == y))


def save_classifier(clf, path, meta=None):
    """One CSV line `bias,w0..w{d-1}` plus a key=value sidecar at <path>.meta."""
    path = str(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["bias"] + [f"w{i}" for i in range(clf.weights.size)])
        writer.writerow([repr(clf.bias)] + [repr(float(v)) for v in clf.weights])
    lines = {"trained_on": clf.trained_on}
    if meta:
        lines.update(meta)
    with open(path + ".meta", "w", encoding="utf-8") as fh:
        for key, value in lines.items():
            fh.write(f"{key}={value}\n")


def load_classifier(path):
    path = str(path)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    values = [float(v) for v in rows[1]]
    trained_on = "all"
    try:
        with open(path + ".meta", encoding="utf-8") as fh:
            for line in fh:
                key, _, value = line.strip().partition("=")
                if key == "trained_on":
                    trained_on = value
    except FileNotFoundError:
        pass
    return LinearClassifier(weights=np.array(values[1:]), bias=values[0], trained_on=trained_on)
