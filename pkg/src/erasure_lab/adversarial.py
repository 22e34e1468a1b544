"""Adversarial concept removal with a gradient-reversal objective.

Training jointly fits a small encoder, a main-task head, and a concept
probe head on the encoder output. The probe head descends its own loss;
the encoder and main head descend L_main - lambda * L_probe, so the
encoder is pushed to make the concept unreadable while keeping the main
task solvable. Updates alternate within each minibatch: the probe head
steps first (probe_steps times) on the current representation, then the
encoder and main head step against the refreshed probe. A simultaneous
step instead lets the encoder exploit the probe's one-step lag by
amplifying and sign-flipping the concept direction, which fools the
in-game probe while leaving the concept linearly recoverable.

At lambda = 0 the encoder update skips the probe term entirely instead of
multiplying it by zero, so a run with the probe attached is bit-for-bit
identical (encoder and main head) to a run without any probe: parameter
initialization and batch order draw from separate seeded streams, and the
probe head's own updates touch only its own parameters.

The theory half of the module works on the scalar-encoder picture used to
reason about equilibria of the min-max objective. There the desired
encoder is the purely invariant main direction, the probe head is a
scalar beta, and the margin objective for the encoder is

    E(h) = min_i y_m h(z_i)  -  min_i y_p beta h(z_i).

verify_indistinguishable shows the failure of identifiability: a mixed
encoder built from the norm-preserving perturbation has every main margin
strictly larger while the probe's accuracy is exactly unchanged, so no
training signal separates it from the desired encoder.
verify_equilibrium_escape shows the desired encoder is not even an
equilibrium: it computes the alpha lower bounds from the margin-point
preservation and master-inequality arguments for the given beta and
checks E at the midpoint alpha exceeds E at the desired encoder.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .latent import group_partition
from .maxmargin import LinearClassifier, TrainingDiverged, TrainSettings, train_max_margin
from .maxmargin import NotSeparableError, train_logistic
from .metrics import psi_from_accuracies
from .theory import construct_perturbed, embed_block, task_blocks, train_invariant

LAMBDA_GRID = (1e-5, 1e-4, 1e-3, 0.01, 0.1, 0.5, 1.0, 2.0)


def _softplus(t):
    return np.log1p(np.exp(-np.abs(t))) + np.maximum(t, 0.0)


def _mean_loss(scores, y):
    return float(np.mean(_softplus(-y * scores)))


@dataclass
class AdvSettings:
    d_zeta: int = 16
    hidden: int | None = None
    epochs: int = 30
    batch_size: int = 32
    lr: float = 0.05
    probe_steps: int = 1
    optimizer: str = "sgd"
    seed: int = 0


class _AdamSlots:
    """Per-parameter adaptive-moment buffers.

    Raw summed-embedding inputs mix coordinate scales badly enough that a
    single global step size either crawls or diverges; the adaptive update
    equalizes per-coordinate step sizes, which is what makes training on
    unrescaled text stable.
    """

    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = {}
        self.v = {}
        self.t = {}

    def step(self, name, grad):
        m = self.beta1 * self.m.get(name, 0.0) + (1.0 - self.beta1) * grad
        v = self.beta2 * self.v.get(name, 0.0) + (1.0 - self.beta2) * grad * grad
        t = self.t.get(name, 0) + 1
        self.m[name], self.v[name], self.t[name] = m, v, t
        m_hat = m / (1.0 - self.beta1**t)
        v_hat = v / (1.0 - self.beta2**t)
        return self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class AdvModel:
    """Encoder plus two linear heads; parameters mutate during training."""

    enc_w1: np.ndarray
    enc_b1: np.ndarray
    enc_w2: np.ndarray | None
    enc_b2: np.ndarray | None
    main_w: np.ndarray
    main_b: float
    probe_w: np.ndarray
    probe_b: float

    @classmethod
    def init(cls, d_in, d_zeta=16, hidden=None, seed=0):
        children = np.random.SeedSequence(seed).spawn(4)
        enc_rng = np.random.default_rng(children[0])
        main_rng = np.random.default_rng(children[1])
        probe_rng = np.random.default_rng(children[2])
        if hidden is None:
            enc_w1 = enc_rng.normal(0.0, 1.0 / math.sqrt(d_in), size=(d_zeta, d_in))
            enc_b1 = np.zeros(d_zeta)
            enc_w2 = None
            enc_b2 = None
        else:
            enc_w1 = enc_rng.normal(0.0, 1.0 / math.sqrt(d_in), size=(hidden, d_in))
            enc_b1 = np.zeros(hidden)
            enc_w2 = enc_rng.normal(0.0, 1.0 / math.sqrt(hidden), size=(d_zeta, hidden))
            enc_b2 = np.zeros(d_zeta)
        main_w = main_rng.normal(0.0, 1.0 / math.sqrt(d_zeta), size=d_zeta)
        probe_w = probe_rng.normal(0.0, 1.0 / math.sqrt(d_zeta), size=d_zeta)
        return cls(enc_w1, enc_b1, enc_w2, enc_b2, main_w, 0.0, probe_w, 0.0)

    @property
    def has_hidden(self):
        return self.enc_w2 is not None

    def copy(self):
        return AdvModel(
            enc_w1=self.enc_w1.copy(),
            enc_b1=self.enc_b1.copy(),
            enc_w2=None if self.enc_w2 is None else self.enc_w2.copy(),
            enc_b2=None if self.enc_b2 is None else self.enc_b2.copy(),
            main_w=self.main_w.copy(),
            main_b=self.main_b,
            probe_w=self.probe_w.copy(),
            probe_b=self.probe_b,
        )

    def forward(self, X):
        X = np.asarray(X, dtype=float)
        if self.has_hidden:
            h = np.maximum(X @ self.enc_w1.T + self.enc_b1, 0.0)
            return h @ self.enc_w2.T + self.enc_b2, h
        return X @ self.enc_w1.T + self.enc_b1, None

    def encode(self, X):
        return self.forward(X)[0]

    def main_scores(self, X):
        return self.encode(X) @ self.main_w + self.main_b

    def probe_scores(self, X):
        return self.encode(X) @ self.probe_w + self.probe_b

    def predict_main(self, X):
        return np.where(self.main_scores(X) >= 0.0, 1.0, -1.0)

    def predict_probe(self, X):
        return np.where(self.probe_scores(X) >= 0.0, 1.0, -1.0)

    def finite(self):
        arrays = [self.enc_w1, self.enc_b1, self.main_w, self.probe_w]
        if self.has_hidden:
            arrays += [self.enc_w2, self.enc_b2]
        return all(np.all(np.isfinite(a)) for a in arrays) and np.isfinite(self.main_b) and np.isfinite(self.probe_b)


def _head_grads(zeta, hidden, X, y, scores, w_head):
    """Gradients of the mean softplus loss: head pieces and encoder pieces.

    g_i = -y_i sigmoid(-y_i s_i) / n is the derivative through the score.
    """
    n = X.shape[0]
    g = (-y / (1.0 + np.exp(y * scores))) / n
    gw_head = g @ zeta
    gb_head = float(g.sum())
    g_zeta = np.outer(g, w_head)
    return gw_head, gb_head, g_zeta


def _encoder_grads(model, X, hidden, g_zeta):
    if model.has_hidden:
        gw2 = g_zeta.T @ hidden
        gb2 = g_zeta.sum(axis=0)
        gh = (g_zeta @ model.enc_w2) * (hidden > 0.0)
        gw1 = gh.T @ X
        gb1 = gh.sum(axis=0)
        return gw1, gb1, gw2, gb2
    return g_zeta.T @ X, g_zeta.sum(axis=0), None, None


@dataclass(frozen=True)
class AdvEpoch:
    epoch: int
    main_loss: float
    probe_loss: float | None
    main_acc: float
    probe_acc: float | None
    main_spuriousness: float | None


@dataclass(frozen=True)
class AdvTrace:
    rows: tuple
    lam: float
    settings: AdvSettings = field(repr=False, default=None)

    @property
    def final(self) -> AdvEpoch:
        return self.rows[-1]


def _epoch_row(model, epoch, X, y_m, y_p, eval_ds, use_probe, clean_acc_min):
    zeta, _ = model.forward(X)
    main_loss = _mean_loss(zeta @ model.main_w + model.main_b, y_m)
    probe_loss = _mean_loss(zeta @ model.probe_w + model.probe_b, y_p) if use_probe else None
    pred_m = model.predict_main(eval_ds.points)
    main_acc = float(np.mean(pred_m == eval_ds.y_main))
    probe_acc = None
    if use_probe:
        probe_acc = float(np.mean(model.predict_probe(eval_ds.points) == eval_ds.y_concept))
    psi = None
    if clean_acc_min is not None:
        part = group_partition(eval_ds.y_main, eval_ds.y_concept)
        if part.s_min.size:
            acc_min = float(np.mean(pred_m[part.s_min] == eval_ds.y_main[part.s_min]))
            psi = psi_from_accuracies(acc_min, clean_acc_min).psi
    return AdvEpoch(epoch, main_loss, probe_loss, main_acc, probe_acc, psi)


def _fit(train, eval_ds, lam, settings, use_probe, clean_acc_min, y_m, y_p, init_model=None):
    X = np.asarray(train.points, dtype=float)
    n = X.shape[0]
    if init_model is None:
        model = AdvModel.init(X.shape[1], settings.d_zeta, settings.hidden, settings.seed)
    else:
        model = init_model.copy()
    batch_rng = np.random.default_rng(np.random.SeedSequence(settings.seed).spawn(4)[3])
    lr = settings.lr
    if settings.optimizer == "adam":
        slots = _AdamSlots(lr)
        delta = slots.step
    elif settings.optimizer == "sgd":
        def delta(name, grad):
            return lr * grad
    else:
        raise ValueError(f"unknown optimizer {settings.optimizer!r}")
    rows = [_epoch_row(model, 0, X, y_m, y_p, eval_ds, use_probe, clean_acc_min)]
    for epoch in range(1, settings.epochs + 1):
        order = batch_rng.permutation(n)
        for start in range(0, n, settings.batch_size):
            idx = order[start : start + settings.batch_size]
            xb, ymb, ypb = X[idx], y_m[idx], y_p[idx]
            zeta, hidden = model.forward(xb)
            if use_probe:
                # the adversary moves first: refit the probe head on the
                # current representation, then the encoder steps against
                # the refreshed probe rather than a stale one
                for _ in range(settings.probe_steps):
                    s_probe = zeta @ model.probe_w + model.probe_b
                    gw_p, gb_p, _ = _head_grads(zeta, hidden, xb, ypb, s_probe, model.probe_w)
                    model.probe_w -= delta("probe_w", gw_p)
                    model.probe_b -= delta("probe_b", gb_p)
            s_main = zeta @ model.main_w + model.main_b
            gw_m, gb_m, gz_m = _head_grads(zeta, hidden, xb, ymb, s_main, model.main_w)
            e_m = _encoder_grads(model, xb, hidden, gz_m)
            # the lam == 0 branch keeps the encoder arithmetic identical to
            # a probe-free run
            if use_probe and lam != 0.0:
                s_probe = zeta @ model.probe_w + model.probe_b
                _, _, gz_p = _head_grads(zeta, hidden, xb, ypb, s_probe, model.probe_w)
                e_p = _encoder_grads(model, xb, hidden, gz_p)
                model.enc_w1 -= delta("enc_w1", e_m[0] - lam * e_p[0])
                model.enc_b1 -= delta("enc_b1", e_m[1] - lam * e_p[1])
                if model.has_hidden:
                    model.enc_w2 -= delta("enc_w2", e_m[2] - lam * e_p[2])
                    model.enc_b2 -= delta("enc_b2", e_m[3] - lam * e_p[3])
            else:
                model.enc_w1 -= delta("enc_w1", e_m[0])
                model.enc_b1 -= delta("enc_b1", e_m[1])
                if model.has_hidden:
                    model.enc_w2 -= delta("enc_w2", e_m[2])
                    model.enc_b2 -= delta("enc_b2", e_m[3])
            model.main_w -= delta("main_w", gw_m)
            model.main_b -= delta("main_b", gb_m)
        if not model.finite():
            raise TrainingDiverged(f"non-finite parameters after epoch {epoch}")
        rows.append(_epoch_row(model, epoch, X, y_m, y_p, eval_ds, use_probe, clean_acc_min))
    return model, AdvTrace(rows=tuple(rows), lam=lam, settings=settings)


def adv_train(
    train,
    eval_ds,
    lam,
    settings=None,
    clean_acc_min=None,
    train_main_labels=None,
    train_concept_labels=None,
    init_model=None,
):
    """Gradient-reversal training; returns (model, per-epoch trace).

    Label overrides apply to the training loss only; the per-epoch
    accuracies and spuriousness always use the evaluation set's stored
    labels. clean_acc_min, when given, is the minority-group accuracy of a
    clean reference and turns on the per-epoch spuriousness column.
    init_model warm-starts from a copy of an existing model instead of a
    fresh seeded initialization.
    """
    settings = settings or AdvSettings()
    y_m = np.asarray(train.y_main if train_main_labels is None else train_main_labels, dtype=float)
    y_p = np.asarray(train.y_concept if train_concept_labels is None else train_concept_labels, dtype=float)
    return _fit(train, eval_ds, float(lam), settings, True, clean_acc_min, y_m, y_p, init_model)


def erm_train(train, eval_ds, settings=None, clean_acc_min=None, train_main_labels=None):
    """Probe-free baseline drawing the same initialization and batch
    streams, so its encoder and main head match adv_train(lam=0) bitwise."""
    settings = settings or AdvSettings()
    y_m = np.asarray(train.y_main if train_main_labels is None else train_main_labels, dtype=float)
    return _fit(train, eval_ds, 0.0, settings, False, clean_acc_min, y_m, train.y_concept)


def posthoc_probe_acc(model, train, eval_ds, seed=0):
    """Accuracy of a fresh linear probe fit on the frozen final representation.

    The in-game probe head lags the moving encoder, so its accuracy says
    little about what stays recoverable; reporting it would overstate the
    removal. The post-hoc probe is a measurement of recoverability, so it
    trains on the stored (noise-free) concept labels and is scored against
    the evaluation set's stored concept labels. The representation is
    rescaled per coordinate and the probe gets a generous epoch budget so
    a badly scaled or collapsed encoding cannot masquerade as removal
    through probe underfitting.
    """
    y_p = np.asarray(train.y_concept, dtype=float)
    Z = model.encode(train.points)
    mean = Z.mean(axis=0)
    sd = Z.std(axis=0)
    sd = np.where(sd < 1e-12, 1.0, sd)
    probe = train_logistic(
        (Z - mean) / sd, y_p,
        TrainSettings(mode="logistic", fit_bias=True, seed=seed, epochs=80, step_size=0.02),
        trained_on="concept-only",
    )
    Z_eval = (model.encode(eval_ds.points) - mean) / sd
    return float(np.mean(probe.predict(Z_eval) == eval_ds.y_concept))


@dataclass(frozen=True)
class SweepRow:
    lam: float
    final_main_acc: float
    final_probe_acc: float | None
    final_spuriousness: float | None
    is_best: bool


@dataclass(frozen=True)
class SweepResult:
    rows: tuple
    best_lambda: float
    erm_acc: float
    erm_spuriousness: float | None
    erm_trace: AdvTrace
    traces: dict

    @property
    def best_trace(self) -> AdvTrace:
        return self.traces[self.best_lambda]


def lambda_sweep(
    train,
    eval_ds,
    lambdas=LAMBDA_GRID,
    settings=None,
    clean_acc_min=None,
    train_main_labels=None,
    train_concept_labels=None,
    acc_slack=0.05,
    psi_tol=0.02,
):
    """Train one model per lambda and pick the operating point.

    Selection: among runs whose final main accuracy is within acc_slack of
    the probe-free baseline, take the one with the smallest final
    spuriousness; rows within psi_tol of that minimum count as equally
    spurious and the largest lambda among them wins, since at equal cost
    the stronger adversary is the point of the sweep. The spuriousness
    score moves in steps of one minority evaluation point, so exact and
    near ties are routine and a smaller-lambda tie-break would always
    retreat to the do-nothing run. If no run qualifies on accuracy, fall
    back to the highest final main accuracy. Each row's final_probe_acc is
    a post-hoc probe retrained on the frozen final representation; the
    in-game probe's accuracy stays available in the per-run traces.
    """
    settings = settings or AdvSettings()
    _, erm_tr = erm_train(train, eval_ds, settings, clean_acc_min, train_main_labels)
    erm_acc = erm_tr.final.main_acc
    rows = []
    traces = {}
    for lam in lambdas:
        model, tr = adv_train(
            train, eval_ds, lam, settings, clean_acc_min, train_main_labels, train_concept_labels
        )
        traces[lam] = tr
        ph_acc = posthoc_probe_acc(model, train, eval_ds, seed=settings.seed + 911)
        rows.append((lam, tr.final.main_acc, ph_acc, tr.final.main_spuriousness))
    qualifying = [r for r in rows if r[3] is not None and r[1] >= erm_acc - acc_slack]
    if qualifying:
        psi_min = min(r[3] for r in qualifying)
        best_lam = max(r[0] for r in qualifying if r[3] <= psi_min + psi_tol)
    else:
        best_lam = max(rows, key=lambda r: r[1])[0]
    out = tuple(SweepRow(r[0], r[1], r[2], r[3], r[0] == best_lam) for r in rows)
    return SweepResult(
        rows=out,
        best_lambda=best_lam,
        erm_acc=erm_acc,
        erm_spuriousness=erm_tr.final.main_spuriousness,
        erm_trace=erm_tr,
        traces=traces,
    )


def gradient_check(model, X, y_m, y_p, lam, n_coords=10, h=1e-6, seed=0):
    """Central finite differences against the analytic gradients.

    Samples coordinates from every parameter array; encoder entries are
    checked on L_main - lam * L_probe, head entries on their own losses.
    Returns the worst relative error.
    """
    X = np.asarray(X, dtype=float)
    y_m = np.asarray(y_m, dtype=float)
    y_p = np.asarray(y_p, dtype=float)

    def losses():
        zeta, _ = model.forward(X)
        lm = np.mean(_softplus(-y_m * (zeta @ model.main_w + model.main_b)))
        lp = np.mean(_softplus(-y_p * (zeta @ model.probe_w + model.probe_b)))
        return lm, lp

    zeta, hidden = model.forward(X)
    s_m = zeta @ model.main_w + model.main_b
    s_p = zeta @ model.probe_w + model.probe_b
    gw_m, gb_m, gz_m = _head_grads(zeta, hidden, X, y_m, s_m, model.main_w)
    gw_p, gb_p, gz_p = _head_grads(zeta, hidden, X, y_p, s_p, model.probe_w)
    e_m = _encoder_grads(model, X, hidden, gz_m)
    e_p = _encoder_grads(model, X, hidden, gz_p)

    def combined():
        lm, lp = losses()
        return lm - lam * lp

    checks = [
        (model.enc_w1, np.asarray(e_m[0]) - lam * np.asarray(e_p[0]), combined),
        (model.enc_b1, np.asarray(e_m[1]) - lam * np.asarray(e_p[1]), combined),
        (model.main_w, np.asarray(gw_m), lambda: losses()[0]),
        (model.probe_w, np.asarray(gw_p), lambda: losses()[1]),
    ]
    if model.has_hidden:
        checks += [
            (model.enc_w2, np.asarray(e_m[2]) - lam * np.asarray(e_p[2]), combined),
            (model.enc_b2, np.asarray(e_m[3]) - lam * np.asarray(e_p[3]), combined),
        ]

    rng = np.random.default_rng(seed)
    worst = 0.0
    for arr, grad, objective in checks:
        flat = arr.reshape(-1)
        g_flat = grad.reshape(-1)
        for _ in range(min(n_coords, flat.size)):
            k = int(rng.integers(flat.size))
            old = flat[k]
            flat[k] = old + h
            up = objective()
            flat[k] = old - h
            down = objective()
            flat[k] = old
            numeric = (up - down) / (2.0 * h)
            analytic = g_flat[k]
            denom = max(abs(numeric), abs(analytic), 1e-8)
            worst = max(worst, abs(numeric - analytic) / denom)
    # the two scalar biases
    for name, objective, analytic in (
        ("main_b", lambda: losses()[0], gb_m),
        ("probe_b", lambda: losses()[1], gb_p),
    ):
        old = getattr(model, name)
        setattr(model, name, old + h)
        up = objective()
        setattr(model, name, old - h)
        down = objective()
        setattr(model, name, old)
        numeric = (up - down) / (2.0 * h)
        denom = max(abs(numeric), abs(analytic), 1e-8)
        worst = max(worst, abs(numeric - analytic) / denom)
    return worst


# ---------------------------------------------------------------------------
# scalar-encoder equilibrium analysis
# ---------------------------------------------------------------------------


def fit_probe_beta(zeta, y_p, iters=25):
    """Scalar logistic coefficient for predicting y_p from the encoder
    output, by Newton steps; a realistic stand-in for the probe's choice."""
    zeta = np.asarray(zeta, dtype=float)
    y = np.asarray(y_p, dtype=float)
    beta = 0.0
    for _ in range(iters):
        s = beta * zeta
        sig = 1.0 / (1.0 + np.exp(y * s))
        grad = float(np.mean(-y * zeta * sig))
        hess = float(np.mean(zeta * zeta * sig * (1.0 - sig)))
        if hess <= 1e-12:
            break
        beta -= grad / hess
    return float(beta)


def _scalar_setup(ds, settings=None):
    """(w_main_star embedded, w_p_hat on the concept block, both trained
    through the origin on their own blocks)."""
    settings = settings or TrainSettings(fit_bias=False)
    base = train_invariant(ds, "main", settings)
    _, sp_cols, _ = task_blocks(ds, "main")
    probe = train_max_margin(ds.points[:, sp_cols], ds.y_concept, settings, trained_on="concept-only")
    w_p_hat = probe.weights / float(np.linalg.norm(probe.weights))
    return base, w_p_hat


@dataclass(frozen=True)
class IndistinguishableReport:
    applicable: bool
    reason: str | None
    alpha: float | None = None
    alpha_lb: float | None = None
    min_margin_base: float | None = None
    min_margin_alt: float | None = None
    probe_acc_base: float | None = None
    probe_acc_alt: float | None = None
    beta: float | None = None
    accuracy_equal: bool = False
    margins_improved: bool = False


def verify_indistinguishable(ds, settings=None, tau_margin=1e-6) -> IndistinguishableReport:
    """Exhibit a mixed encoder the adversarial objective cannot tell apart
    from the desired one.

    The desired scalar encoder scores by the purely invariant main
    classifier. The alternative mixes in the concept-block probe direction
    at the constructed alpha. Checks: every main functional margin of the
    alternative strictly exceeds 1 (the desired encoder's minimum), and
    the probe accuracy through the better of beta = +1 / -1 is exactly
    equal under both encoders, because the two scores agree in sign on
    every point.
    """
    try:
        base, w_p_hat = _scalar_setup(ds, settings)
    except NotSeparableError as err:
        return IndistinguishableReport(False, f"separability assumption failed: {err}")
    from .maxmargin import margins as margin_report

    rep = margin_report(base, ds.points, ds.y_main, tau_margin)
    mp = rep.margin_points
    if not np.all(ds.y_main[mp] == ds.y_concept[mp]):
        return IndistinguishableReport(
            False, "labels disagree on a main margin point; correlation assumption fails"
        )
    try:
        bounds, pc = construct_perturbed(base, ds, w_p_hat, task="main", tau_margin=tau_margin)
    except ValueError as err:
        return IndistinguishableReport(False, f"perturbation construction failed: {err}")
    zeta_base = base.score(ds.points)
    zeta_alt = pc.combined.score(ds.points)
    acc = lambda z, b: float(np.mean(np.where(b * z >= 0.0, 1.0, -1.0) == ds.y_concept))
    beta = 1.0 if acc(zeta_base, 1.0) >= acc(zeta_base, -1.0) else -1.0
    acc_base = acc(zeta_base, beta)
    acc_alt = acc(zeta_alt, beta)
    m_base = float(np.min(ds.y_main * zeta_base))
    m_alt = float(np.min(ds.y_main * zeta_alt))
    return IndistinguishableReport(
        applicable=True,
        reason=None,
        alpha=pc.alpha,
        alpha_lb=bounds.lb_overall,
        min_margin_base=m_base,
        min_margin_alt=m_alt,
        probe_acc_base=acc_base,
        probe_acc_alt=acc_alt,
        beta=beta,
        accuracy_equal=acc_base == acc_alt,
        margins_improved=m_alt > m_base,
    )


def _preservation_bound(margins_star, margin_idx, signed_eps, w_norm, coef):
    """Alpha above which no off-margin point can undercut a margin point.

    For a margin point M and an off-margin point R of the scalar
    classifier coef * h2, the perturbed margins keep their order when
    alpha / sqrt(1 - alpha^2) beats
        w_norm * coef * (y^M e.z_p^M - y^R e.z_p^R) / (m(R) - m(M));
    pairs with a nonpositive numerator impose nothing.
    """
    lb = 0.0
    on = np.zeros(margins_star.size, dtype=bool)
    on[margin_idx] = True
    off = np.flatnonzero(~on)
    for m_idx in margin_idx:
        for r_idx in off:
            dm = margins_star[r_idx] - margins_star[m_idx]
            if dm <= 0:
                continue
            num = w_norm * coef * (signed_eps[m_idx] - signed_eps[r_idx])
            if num <= 0:
                continue
            g = num / dm
            lb = max(lb, math.sqrt(g * g / (1.0 + g * g)))
    return lb


@dataclass(frozen=True)
class EscapeReport:
    applicable: bool
    reason: str | None
    beta: float | None = None
    alpha_lb1: float | None = None
    alpha_lb2: float | None = None
    alpha_lb3: float | None = None
    alpha_lb: float | None = None
    alpha: float | None = None
    e_desired: float | None = None
    e_perturbed: float | None = None
    escaped: bool = False


def verify_equilibrium_escape(ds, beta=None, settings=None, tau_margin=1e-6) -> EscapeReport:
    """Check that the desired encoder loses to a perturbed one in the
    margin objective E, for the probe coefficient beta.

    beta = None fits a scalar logistic probe on the desired encoder's
    output. The report carries the three alpha lower bounds: from the
    margin-gain construction, from margin-point preservation under both
    heads, and (for beta > 0) from the master inequality over margin-point
    pairs. A failed assumption returns applicable=False with the reason;
    it is never reported as a failed escape.
    """
    try:
        base, w_p_hat = _scalar_setup(ds, settings)
    except NotSeparableError as err:
        return EscapeReport(False, f"separability assumption failed: {err}")
    from .maxmargin import margins as margin_report

    inv_cols, sp_cols, _ = task_blocks(ds, "main")
    zeta_star = base.score(ds.points)
    w_norm = float(np.linalg.norm(base.weights))
    if beta is None:
        beta = fit_probe_beta(zeta_star, ds.y_concept)
    beta = float(beta)
    if beta == 0.0:
        return EscapeReport(False, "degenerate probe head beta = 0")

    rep_m = margin_report(base, ds.points, ds.y_main, tau_margin)
    mp_main = rep_m.margin_points
    if not np.all(ds.y_main[mp_main] == ds.y_concept[mp_main]):
        return EscapeReport(
            False, "labels disagree on a main margin point; correlation assumption fails", beta
        )

    signed_eps = ds.y_main * (ds.points[:, sp_cols] @ w_p_hat)  # y_m (e . z_p)
    signed_eps_probe = ds.y_concept * (ds.points[:, sp_cols] @ w_p_hat)  # y_p (e . z_p)
    if np.any(signed_eps_probe <= 0.0):
        return EscapeReport(False, "concept block is not fully predictive of its label", beta)

    try:
        bounds, _ = construct_perturbed(base, ds, w_p_hat, task="main", tau_margin=tau_margin)
    except ValueError as err:
        return EscapeReport(False, f"perturbation construction failed: {err}", beta)
    alpha_lb1 = bounds.lb_overall

    # margin sets of the two scalar heads under the desired encoder
    margins_main = ds.y_main * zeta_star
    margins_probe = ds.y_concept * beta * zeta_star
    m_min_p = float(margins_probe.min())
    mp_probe = np.flatnonzero(margins_probe <= m_min_p + tau_margin * abs(m_min_p))

    alpha_lb2 = max(
        _preservation_bound(margins_main, mp_main, signed_eps, w_norm, 1.0),
        _preservation_bound(margins_probe, mp_probe, signed_eps_probe, w_norm, beta),
    )

    alpha_lb3 = 0.0
    if beta > 0.0:
        zm_proj = ds.points[:, inv_cols] @ (base.weights[inv_cols] / w_norm)
        for m_idx in mp_main:
            for p_idx in mp_probe:
                num = signed_eps[m_idx] - beta * signed_eps_probe[p_idx]
                if num <= 0.0:
                    return EscapeReport(
                        False,
                        "correlation-strength assumption fails on a margin-point pair",
                        beta,
                    )
                den = ds.y_main[m_idx] * zm_proj[m_idx] - beta * ds.y_concept[p_idx] * zm_proj[p_idx]
                if den <= 0.0:
                    continue
                g = num / den
                alpha_lb3 = max(alpha_lb3, (1.0 - g * g) / (1.0 + g * g))

    alpha_lb = max(alpha_lb1, alpha_lb2, alpha_lb3)
    if alpha_lb >= 1.0:
        return EscapeReport(False, "empty alpha interval", beta, alpha_lb1, alpha_lb2, alpha_lb3)
    alpha = (1.0 + alpha_lb) / 2.0

    eps_full = embed_block(w_p_hat, sp_cols, ds.points.shape[1])
    zeta_alpha = alpha * zeta_star + math.sqrt(1.0 - alpha * alpha) * w_norm * (
        ds.points @ eps_full
    )
    e_desired = float(np.min(ds.y_main * zeta_star) - np.min(ds.y_concept * beta * zeta_star))
    e_perturbed = float(np.min(ds.y_main * zeta_alpha) - np.min(ds.y_concept * beta * zeta_alpha))
    return EscapeReport(
        applicable=True,
        reason=None,
        beta=beta,
        alpha_lb1=alpha_lb1,
        alpha_lb2=alpha_lb2,
        alpha_lb3=alpha_lb3,
        alpha_lb=alpha_lb,
        alpha=alpha,
        e_desired=e_desired,
        e_perturbed=e_perturbed,
        escaped=e_perturbed > e_desired,
    )


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

ADV_TRACE_FIELDS = ("epoch", "main_loss", "probe_loss", "main_acc", "probe_acc", "main_spuriousness")
SWEEP_FIELDS = ("lambda", "final_main_acc", "final_probe_acc", "final_spuriousness", "is_best")


def _fmt(v):
    return "" if v is None else repr(float(v))


def write_adv_trace(trace: AdvTrace, path):
    with open(str(path), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(ADV_TRACE_FIELDS)
        for r in trace.rows:
            writer.writerow(
                [r.epoch, _fmt(r.main_loss), _fmt(r.probe_loss), _fmt(r.main_acc), _fmt(r.probe_acc), _fmt(r.main_spuriousness)]
            )


def read_adv_trace(path):
    with open(str(path), newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != ADV_TRACE_FIELDS:
        raise ValueError(f"unrecognized trace header in {path}")
    out = []
    for row in rows[1:]:
        rec = {"epoch": int(row[0])}
        for name, cell in zip(ADV_TRACE_FIELDS[1:], row[1:]):
            rec[name] = None if cell == "" else float(cell)
        out.append(rec)
    return out


def write_sweep(result: SweepResult, path):
    with open(str(path), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SWEEP_FIELDS)
        for r in result.rows:
            writer.writerow(
                [repr(r.lam), _fmt(r.final_main_acc), _fmt(r.final_probe_acc), _fmt(r.final_spuriousness), int(r.is_best)]
            )


def read_sweep(path):
    with open(str(path), newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != SWEEP_FIELDS:
        raise ValueError(f"unrecognized sweep header in {path}")
    out = []
    for row in rows[1:]:
        out.append(
            {
                "lambda": float(row[0]),
                "final_main_acc": None if row[1] == "" else float(row[1]),
                "final_probe_acc": None if row[2] == "" else float(row[2]),
                "final_spuriousness": None if row[3] == "" else float(row[3]),
                "is_best": bool(int(row[4])),
            }
        )
    return out
