"""Independent reference implementations used to freeze expected values.

Nothing here calls into the package solvers. The margin oracle scans a dense
grid of unit directions, the Bayes rate comes from the generating
distribution in closed form, and the separability oracle enumerates the same
direction grid. Slow and dumb on purpose, so they can arbitrate.
"""

import math

import numpy as np


def grid_margin_oracle(X, y, n_dirs=10_000, fit_bias=True):
    """Best geometric margin over a dense grid of 2-D unit directions.

    For a direction u with a free bias, the optimal boundary sits midway
    between the closest projections of the two classes, so the geometric
    margin is (min_{y=+1} u.x - max_{y=-1} u.x) / 2. With the bias pinned
    to zero it is min_i y_i (u.x_i). Returns (margin, direction, bias).
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.shape[1] != 2:
        raise ValueError("oracle only scans 2-D instances")
    thetas = np.linspace(0.0, 2.0 * math.pi, n_dirs, endpoint=False)
    dirs = np.stack([np.cos(thetas), np.sin(thetas)], axis=1)
    proj = X @ dirs.T  # n x n_dirs
    if fit_bias:
        pos_min = proj[y > 0].min(axis=0)
        neg_max = proj[y < 0].max(axis=0)
        margins = (pos_min - neg_max) / 2.0
        k = int(np.argmax(margins))
        bias = -(pos_min[k] + neg_max[k]) / 2.0
        return float(margins[k]), dirs[k], float(bias)
    margins = (proj * y[:, None]).min(axis=0)
    k = int(np.argmax(margins))
    return float(margins[k]), dirs[k], 0.0


def grid_separable_oracle(X, y, n_dirs=100_000, fit_bias=True):
    """True when some grid direction strictly separates the 2-D classes."""
    margin, _, _ = grid_margin_oracle(X, y, n_dirs=n_dirs, fit_bias=fit_bias)
    return margin > 0.0


def gaussian_bayes_accuracy(d_m, class_separation, feature_noise_sd):
    """Bayes accuracy for the two-Gaussian main task, no label correlation.

    Class means sit at +/- (separation/2) * ones in d_m dimensions with
    isotropic sd s. Along the optimal direction the means are
    separation * sqrt(d_m) apart, so accuracy is Phi(that / (2 s)).
    """
    z = class_separation * math.sqrt(d_m) / (2.0 * feature_noise_sd)
    return 0.5 * (1.0 + math.erf(z / math.sqrt(2.0)))


def exact_perturbation_margins(w_inv, z_inv, z_sp, y, eps_hat, alpha):
    """Functional margins of the norm-preserving perturbed classifier.

    Computed from scratch with no shared code: the perturbed weight vector
    is alpha * w_inv on the invariant block and
    sqrt(1 - alpha^2) * ||w_inv|| * eps_hat on the spurious block.
    """
    w_inv = np.asarray(w_inv, dtype=float)
    scale = math.sqrt(max(0.0, 1.0 - alpha * alpha)) * float(np.linalg.norm(w_inv))
    scores = alpha * (np.asarray(z_inv) @ w_inv) + scale * (np.asarray(z_sp) @ np.asarray(eps_hat))
    return np.asarray(y, dtype=float) * scores
