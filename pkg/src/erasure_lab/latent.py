"""Disentangled synthetic latent datasets with controllable label correlation.

Points are [z_m | z_p] with binary main and concept labels. Per (y_m, y_p)
group, z_m is Gaussian around (y_m * separation/2) * ones and z_p Gaussian
around (y_p * separation/2) * ones, shared isotropic sd. The generated
matrix is mean-centered per column (offsets stored), so downstream training
can pin the bias to zero.

The predictive correlation kappa = Pr(y_m * y_p > 0) is set by group sizes:
majority groups are the agreeing pairs (+,+) and (-,-). Generation realizes
the closest integer split and records the realized value, never the target.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np


@dataclass(frozen=True)
class LatentDataset:
    points: np.ndarray
    y_main: np.ndarray
    y_concept: np.ndarray
    d_m: int
    d_p: int
    seed: int
    centered: bool = False
    center_offsets: np.ndarray | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        ym = np.asarray(self.y_main, dtype=float).ravel()
        yp = np.asarray(self.y_concept, dtype=float).ravel()
        if pts.ndim != 2:
            raise ValueError("points must be a matrix")
        if self.d_m < 0 or self.d_p < 0 or self.d_m + self.d_p != pts.shape[1]:
            raise ValueError("d_m + d_p must equal the column count")
        if ym.shape[0] != pts.shape[0] or yp.shape[0] != pts.shape[0]:
            raise ValueError("one label pair per row required")
        for lab in (ym, yp):
            if lab.size and not np.all(np.abs(lab) == 1.0):
                raise ValueError("labels must be -1 or +1")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "y_main", ym)
        object.__setattr__(self, "y_concept", yp)

    @property
    def n(self):
        return self.points.shape[0]

    @property
    def z_m(self):
        return self.points[:, : self.d_m]

    @property
    def z_p(self):
        return self.points[:, self.d_m :]

    def subset(self, idx, seed=None):
        idx = np.asarray(idx)
        return replace(
            self,
            points=self.points[idx],
            y_main=self.y_main[idx],
            y_concept=self.y_concept[idx],
            seed=self.seed if seed is None else seed,
        )


@dataclass(frozen=True)
class GroupPartition:
    s_maj: np.ndarray
    s_min: np.ndarray
    kappa: float


@dataclass
class GenConfig:
    n_points: int
    d_m: int
    d_p: int
    kappa_target: float
    class_separation: float = 2.0
    feature_noise_sd: float = 1.0
    label_noise_rate: float = 0.0
    seed: int = 0

    def validate(self):
        if self.n_points < 1:
            raise ValueError("n_points must be positive")
        if self.d_m < 1 or self.d_p < 1:
            raise ValueError("both feature blocks need at least one dimension")
        if not 0.5 <= self.kappa_target <= 1.0:
            raise ValueError("kappa_target must lie in [0.5, 1]")
        if not 0.0 <= self.label_noise_rate < 0.5:
            raise ValueError("label_noise_rate must lie in [0, 0.5)")
        if self.class_separation <= 0 or self.feature_noise_sd < 0:
            raise ValueError("separation must be positive, noise sd nonnegative")


def group_sizes(n, kappa, p_pos=0.5):
    """Integer sizes for the four (y_m, y_p) groups.

    Returns (n_pp, n_mm, n_pm, n_mp): agreeing groups first. Raises when
    the rounded sizes cannot realize kappa within 1/n.
    """
    n_maj = int(round(kappa * n))
    if abs(n_maj / n - kappa) > 1.0 / n:
        raise ValueError(f"n_points={n} too small to realize kappa={kappa} within 1/n")
    n_min = n - n_maj
    n_pp = int(round(n_maj * p_pos))
    n_pm = int(round(n_min * p_pos))
    return n_pp, n_maj - n_pp, n_pm, n_min - n_pm


def gen_disentangled(cfg: GenConfig) -> LatentDataset:
    """Generate the Gaussian-group dataset described in the module docstring.

    With label_noise_rate 0 and class_separation > 4 * feature_noise_sd the
    concept block is linearly separable with respect to y_concept by
    construction (every point sits within 2 sd of its group mean direction
    in expectation; the guarantee regime keeps the blocks comfortably
    apart). Noise, when requested, flips exactly floor(rate * n) of each
    label vector after the features are drawn, so features always reflect
    the clean labels.
    """
    cfg.validate()
    n = cfg.n_points
    n_pp, n_mm, n_pm, n_mp = group_sizes(n, cfg.kappa_target)
    y_main = np.concatenate(
        [np.ones(n_pp), -np.ones(n_mm), np.ones(n_pm), -np.ones(n_mp)]
    )
    y_concept = np.concatenate(
        [np.ones(n_pp), -np.ones(n_mm), -np.ones(n_pm), np.ones(n_mp)]
    )
    ss = np.random.SeedSequence(cfg.seed)
    feat_seed, shuffle_seed, flip_m_seed, flip_p_seed = ss.spawn(4)
    rng = np.random.default_rng(feat_seed)
    half = cfg.class_separation / 2.0
    z_m = y_main[:, None] * half + rng.normal(0.0, cfg.feature_noise_sd, (n, cfg.d_m))
    z_p = y_concept[:, None] * half + rng.normal(0.0, cfg.feature_noise_sd, (n, cfg.d_p))
    order = np.random.default_rng(shuffle_seed).permutation(n)
    points = np.concatenate([z_m, z_p], axis=1)[order]
    y_main = y_main[order]
    y_concept = y_concept[order]
    if cfg.label_noise_rate > 0:
        y_main = flip_label_noise(y_main, cfg.label_noise_rate, flip_m_seed)
        y_concept = flip_label_noise(y_concept, cfg.label_noise_rate, flip_p_seed)
    offsets = points.mean(axis=0)
    points = points - offsets
    return LatentDataset(
        points=points,
        y_main=y_main,
        y_concept=y_concept,
        d_m=cfg.d_m,
        d_p=cfg.d_p,
        seed=cfg.seed,
        centered=True,
        center_offsets=offsets,
    )


def compute_kappa(y_main, y_concept):
    """Fraction of agreeing label pairs, Pr(y_m * y_p > 0)."""
    ym = np.asarray(y_main, dtype=float).ravel()
    yp = np.asarray(y_concept, dtype=float).ravel()
    if ym.size == 0 or ym.shape != yp.shape:
        raise ValueError("need nonempty label vectors of equal length")
    return float(np.mean(ym * yp > 0))


def group_partition(y_main, y_concept) -> GroupPartition:
    ym = np.asarray(y_main, dtype=float).ravel()
    yp = np.asarray(y_concept, dtype=float).ravel()
    agree = ym * yp > 0
    s_maj = np.flatnonzero(agree)
    s_min = np.flatnonzero(~agree)
    return GroupPartition(s_maj=s_maj, s_min=s_min, kappa=s_maj.size / ym.size)


def rebalance_to_kappa(ds: LatentDataset, kappa, seed) -> LatentDataset:
    """Largest subsample realizing the requested correlation.

    Sampling is uniform without replacement within each of the four label
    groups; agreeing and disagreeing halves are split as evenly as the
    available group sizes allow.
    """
    if not 0.5 <= kappa <= 1.0:
        raise ValueError("kappa must lie in [0.5, 1]")
    ym, yp = ds.y_main, ds.y_concept
    groups = {
        (1, 1): np.flatnonzero((ym > 0) & (yp > 0)),
        (-1, -1): np.flatnonzero((ym < 0) & (yp < 0)),
        (1, -1): np.flatnonzero((ym > 0) & (yp < 0)),
        (-1, 1): np.flatnonzero((ym < 0) & (yp > 0)),
    }
    n_maj_avail = groups[(1, 1)].size + groups[(-1, -1)].size
    n_min_avail = groups[(1, -1)].size + groups[(-1, 1)].size
    if 0.5 < kappa < 1.0 and min(g.size for g in groups.values()) == 0:
        raise ValueError("all four label groups must be nonempty for 0.5 < kappa < 1")
    if kappa == 1.0:
        n_total = n_maj_avail
    else:
        n_total = min(int(n_maj_avail / kappa), int(n_min_avail / (1.0 - kappa)))
    while n_total > 0:
        n_maj = int(round(kappa * n_total))
        n_min = n_total - n_maj
        if n_maj <= n_maj_avail and n_min <= n_min_avail:
            break
        n_total -= 1
    if n_total <= 0:
        raise ValueError("unattainable group counts for requested kappa")

    def split_pair(total, size_a, size_b):
        a = min(size_a, (total + 1) // 2)
        b = total - a
        if b > size_b:
            b = size_b
            a = total - b
        if a > size_a or a < 0:
            raise ValueError("unattainable group counts for requested kappa")
        return a, b

    take = {}
    take[(1, 1)], take[(-1, -1)] = split_pair(
        n_maj, groups[(1, 1)].size, groups[(-1, -1)].size
    )
    take[(1, -1)], take[(-1, 1)] = split_pair(
        n_min, groups[(1, -1)].size, groups[(-1, 1)].size
    )
    rng = np.random.default_rng(seed)
    chosen = []
    for key in ((1, 1), (-1, -1), (1, -1), (-1, 1)):
        if take[key] > 0:
            chosen.append(rng.choice(groups[key], size=take[key], replace=False))
    idx = np.sort(np.concatenate(chosen))
    return ds.subset(idx)


def make_clean_subset(ds: LatentDataset, fixed_concept_label) -> LatentDataset:
    """All points whose concept label equals the fixed value.

    On this slice the concept label is constant, so nothing trained on it
    can exploit label correlation. Raises when either main-task class
    vanishes, since training on the slice would then be degenerate.
    """
    if fixed_concept_label not in (-1, 1):
        raise ValueError("fixed_concept_label must be -1 or +1")
    idx = np.flatnonzero(ds.y_concept == fixed_concept_label)
    if idx.size == 0 or np.unique(ds.y_main[idx]).size < 2:
        raise ValueError("clean subset must keep both main-task classes")
    return ds.subset(idx)


def flip_label_noise(labels, rate, seed):
    """Negate exactly floor(rate * n) entries at seed-chosen positions."""
    if not 0.0 <= rate < 0.5:
        raise ValueError("rate must lie in [0, 0.5)")
    labels = np.asarray(labels, dtype=float).ravel()
    k = int(rate * labels.size)
    out = labels.copy()
    if k:
        idx = np.random.default_rng(seed).choice(labels.size, size=k, replace=False)
        out[idx] = -out[idx]
    return out


def split_train_eval(ds: LatentDataset, eval_fraction=0.2, seed=0):
    """Seeded uniform split into (train, eval) datasets."""
    n = ds.n
    n_eval = int(round(eval_fraction * n))
    if n_eval < 1 or n_eval >= n:
        raise ValueError("eval fraction leaves an empty split")
    perm = np.random.default_rng(seed).permutation(n)
    eval_idx = np.sort(perm[:n_eval])
    train_idx = np.sort(perm[n_eval:])
    return ds.subset(train_idx), ds.subset(eval_idx)


def save_dataset(ds: LatentDataset, path):
    """CSV `idx,y_main,y_concept,f0..` plus key=value sidecar at <path>.meta."""
    path = str(path)
    d = ds.points.shape[1]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["idx", "y_main", "y_concept"] + [f"f{i}" for i in range(d)])
        for i in range(ds.n):
            writer.writerow(
                [i, int(ds.y_main[i]), int(ds.y_concept[i])]
                + [repr(float(v)) for v in ds.points[i]]
            )
    offsets = ds.center_offsets if ds.center_offsets is not None else np.zeros(d)
    meta = {
        "d_m": ds.d_m,
        "d_p": ds.d_p,
        "seed": ds.seed,
        "kappa_realized": compute_kappa(ds.y_main, ds.y_concept),
        "centered": int(ds.centered),
        "center_offsets": ",".join(repr(float(v)) for v in offsets),
    }
    with open(path + ".meta", "w", encoding="utf-8") as fh:
        for key, value in meta.items():
            fh.write(f"{key}={value}\n")


def load_dataset(path) -> LatentDataset:
    path = str(path)
    meta = {}
    with open(path + ".meta", encoding="utf-8") as fh:
        for line in fh:
            key, _, value = line.strip().partition("=")
            meta[key] = value
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    body = rows[1:]
    y_main = np.array([float(r[1]) for r in body])
    y_concept = np.array([float(r[2]) for r in body])
    points = np.array([[float(v) for v in r[3:]] for r in body])
    offsets = np.array([float(v) for v in meta["center_offsets"].split(",")])
    return LatentDataset(
        points=points,
        y_main=y_main,
        y_concept=y_concept,
        d_m=int(meta["d_m"]),
        d_p=int(meta["d_p"]),
        seed=int(meta["seed"]),
        centered=bool(int(meta.get("centered", "0"))),
        center_offsets=offsets,
    )
