"""Latent dataset generator: group accounting, correlation realization,
noise, subsetting, and file round-trips."""

import numpy as np
import pytest

from oracles import gaussian_bayes_accuracy

from erasure_lab.latent import (
    GenConfig,
    LatentDataset,
    compute_kappa,
    flip_label_noise,
    gen_disentangled,
    group_partition,
    group_sizes,
    load_dataset,
    make_clean_subset,
    rebalance_to_kappa,
    save_dataset,
    split_train_eval,
)


def small_ds(kappa=0.8, n=400, d_m=3, d_p=2, seed=5, sep=4.0, sd=1.0, noise=0.0):
    cfg = GenConfig(
        n_points=n, d_m=d_m, d_p=d_p, kappa_target=kappa,
        class_separation=sep, feature_noise_sd=sd, label_noise_rate=noise, seed=seed,
    )
    return gen_disentangled(cfg)


def test_group_sizes_exact():
    n_pp, n_mm, n_pm, n_mp = group_sizes(100, 0.8, p_pos=0.5)
    assert (n_pp, n_mm, n_pm, n_mp) == (40, 40, 10, 10)
    assert n_pp + n_mm + n_pm + n_mp == 100
    n_pp, n_mm, n_pm, n_mp = group_sizes(10, 0.5, p_pos=0.3)
    assert n_pp + n_mm == 5 and n_pm + n_mp == 5
    assert n_pp == 2  # round(5 * 0.3)


def test_generated_kappa_realized():
    for kappa in (0.5, 0.6, 0.75, 0.9, 1.0):
        ds = small_ds(kappa=kappa, n=200)
        assert compute_kappa(ds.y_main, ds.y_concept) == kappa


def test_generation_centered_and_shaped():
    ds = small_ds(n=500)
    assert ds.centered
    assert ds.points.shape == (500, 5)
    assert ds.z_m.shape == (500, 3) and ds.z_p.shape == (500, 2)
    np.testing.assert_allclose(ds.points.mean(axis=0), np.zeros(5), atol=1e-12)
    assert ds.center_offsets.shape == (5,)
    assert np.all(np.abs(ds.y_main) == 1.0) and np.all(np.abs(ds.y_concept) == 1.0)


def test_generation_deterministic():
    a = small_ds(seed=9)
    b = small_ds(seed=9)
    np.testing.assert_array_equal(a.points, b.points)
    np.testing.assert_array_equal(a.y_main, b.y_main)
    c = small_ds(seed=10)
    assert not np.array_equal(a.points, c.points)


def test_block_means_reflect_labels():
    # with centering undone, each block's mean projection onto the all-ones
    # direction has the sign of its own label
    ds = small_ds(n=1000, sep=6.0, sd=0.5, seed=2)
    raw = ds.points + ds.center_offsets
    m_proj = raw[:, : ds.d_m].mean(axis=1)
    p_proj = raw[:, ds.d_m :].mean(axis=1)
    assert np.mean(np.sign(m_proj) == ds.y_main) > 0.99
    assert np.mean(np.sign(p_proj) == ds.y_concept) > 0.99


def test_bayes_rate_matches_closed_form():
    # 1-D main block at separation 1, sd 1: the optimal rule is the sign of
    # the raw coordinate and its accuracy is known in closed form
    oracle = gaussian_bayes_accuracy(1, 1.0, 1.0)
    assert abs(oracle - 0.6914624612740131) < 1e-12
    ds = small_ds(kappa=0.5, n=20_000, d_m=1, d_p=1, sep=1.0, sd=1.0, seed=4)
    raw_main = ds.points[:, 0] + ds.center_offsets[0]
    pred = np.where(raw_main >= 0.0, 1.0, -1.0)
    emp = float(np.mean(pred == ds.y_main))
    assert abs(emp - oracle) < 0.02


def test_label_noise_exact_count():
    labels = np.ones(100)
    noisy = flip_label_noise(labels, 0.3, seed=1)
    assert int(np.sum(noisy != labels)) == 30
    same = flip_label_noise(labels, 0.0, seed=1)
    np.testing.assert_array_equal(same, labels)
    with pytest.raises(ValueError):
        flip_label_noise(labels, 0.5, seed=1)
    with pytest.raises(ValueError):
        flip_label_noise(labels, -0.1, seed=1)


def test_generation_label_noise_applied_after_features():
    clean = small_ds(n=200, noise=0.0, seed=7)
    noisy = small_ds(n=200, noise=0.1, seed=7)
    np.testing.assert_array_equal(clean.points, noisy.points)
    assert int(np.sum(noisy.y_main != clean.y_main)) == 20
    assert int(np.sum(noisy.y_concept != clean.y_concept)) == 20


def test_group_partition():
    ym = np.array([1.0, 1.0, -1.0, -1.0])
    yp = np.array([1.0, -1.0, -1.0, 1.0])
    part = group_partition(ym, yp)
    np.testing.assert_array_equal(part.s_maj, [0, 2])
    np.testing.assert_array_equal(part.s_min, [1, 3])
    assert part.kappa == 0.5


def test_rebalance_reaches_target_with_max_size():
    ds = small_ds(kappa=0.5, n=400, seed=3)
    out = rebalance_to_kappa(ds, 0.8, seed=1)
    assert compute_kappa(out.y_main, out.y_concept) == 0.8
    # 200 agreeing and 200 disagreeing points support at most 250 at 0.8
    assert out.n == 250
    # subsample of the original points
    original = {tuple(row) for row in ds.points}
    assert all(tuple(row) in original for row in out.points)


def test_rebalance_requires_all_groups():
    pts = np.ones((6, 2))
    ym = np.array([1.0, 1.0, -1.0, -1.0, 1.0, 1.0])
    yp = np.array([1.0, 1.0, -1.0, -1.0, -1.0, -1.0])  # no (-1, +1) group
    ds = LatentDataset(points=pts, y_main=ym, y_concept=yp, d_m=1, d_p=1, seed=0)
    with pytest.raises(ValueError):
        rebalance_to_kappa(ds, 0.7, seed=0)


def test_clean_subset_constant_concept():
    ds = small_ds(kappa=0.8, n=200)
    sub = make_clean_subset(ds, -1.0)
    assert np.all(sub.y_concept == -1.0)
    assert np.unique(sub.y_main).size == 2
    with pytest.raises(ValueError):
        make_clean_subset(ds, 0.0)


def test_clean_subset_needs_both_main_classes():
    ds = small_ds(kappa=1.0, n=100)
    # at kappa = 1 the concept = -1 slice carries only main = -1 points
    with pytest.raises(ValueError):
        make_clean_subset(ds, -1.0)


def test_split_train_eval():
    ds = small_ds(n=200)
    train, eval_ds = split_train_eval(ds, 0.2, seed=0)
    assert train.n == 160 and eval_ds.n == 40
    merged = np.concatenate([train.points, eval_ds.points])
    assert {tuple(r) for r in merged} == {tuple(r) for r in ds.points}
    train2, eval2 = split_train_eval(ds, 0.2, seed=0)
    np.testing.assert_array_equal(eval_ds.points, eval2.points)
    with pytest.raises(ValueError):
        split_train_eval(ds, 0.0, seed=0)


def test_config_validation():
    with pytest.raises(ValueError):
        GenConfig(n_points=0, d_m=1, d_p=1, kappa_target=0.8).validate()
    with pytest.raises(ValueError):
        GenConfig(n_points=10, d_m=0, d_p=1, kappa_target=0.8).validate()
    with pytest.raises(ValueError):
        GenConfig(n_points=10, d_m=1, d_p=1, kappa_target=0.4).validate()
    with pytest.raises(ValueError):
        GenConfig(n_points=10, d_m=1, d_p=1, kappa_target=0.8, label_noise_rate=0.6).validate()
    with pytest.raises(ValueError):
        GenConfig(n_points=10, d_m=1, d_p=1, kappa_target=0.8, class_separation=0.0).validate()


def test_dataset_validation():
    pts = np.ones((3, 4))
    good = np.array([1.0, -1.0, 1.0])
    with pytest.raises(ValueError):
        LatentDataset(points=pts, y_main=good, y_concept=good, d_m=1, d_p=1, seed=0)
    with pytest.raises(ValueError):
        LatentDataset(
            points=pts, y_main=np.array([1.0, 0.0, 1.0]), y_concept=good, d_m=2, d_p=2, seed=0
        )


def test_save_load_roundtrip_exact(tmp_path):
    ds = small_ds(n=50, seed=12)
    path = tmp_path / "ds.csv"
    save_dataset(ds, path)
    loaded = load_dataset(path)
    np.testing.assert_array_equal(loaded.points, ds.points)
    np.testing.assert_array_equal(loaded.y_main, ds.y_main)
    np.testing.assert_array_equal(loaded.y_concept, ds.y_concept)
    np.testing.assert_array_equal(loaded.center_offsets, ds.center_offsets)
    assert (loaded.d_m, loaded.d_p, loaded.seed, loaded.centered) == (
        ds.d_m, ds.d_p, ds.seed, ds.centered,
    )
