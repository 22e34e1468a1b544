"""One-off driver: compute the acceptance readings for the adversarial
criteria from the shipped presets, printing what the suite will see."""

import numpy as np

import erasure_lab.experiments as exp

print("=== criterion 7: swept-lambda floor ===")
for kappa in exp.ADV_KAPPAS:
    for seed in (0, 1, 2):
        res = exp.adv_floor_run(kappa, seed)
        best = [r for r in res.sweep.rows if r.is_best][0]
        in_band = abs(best.final_probe_acc - kappa) <= 0.05
        print(
            f"k={kappa} s={seed}: best_lam={best.lam} erm={res.sweep.erm_acc:.3f} "
            f"acc={best.final_main_acc:.3f} probe={best.final_probe_acc:.3f} "
            f"(band={'Y' if in_band else 'N'}) psi={best.final_spuriousness:.3f} "
            f"(psi>0.1={'Y' if best.final_spuriousness > 0.1 else 'N'})"
        )

print("=== criterion 8: clean-start corruption ===")
for kappa in exp.ADV_KAPPAS:
    rises = []
    for seed in (0, 1, 2):
        res = exp.clean_corruption_run(kappa, seed)
        rises.append(res.psi_end - res.psi_start)
    hits = sum(1 for r in rises if r >= 0.1)
    print(f"k={kappa}: rises={[f'{r:.3f}' for r in rises]} hits={hits}/3")

print("=== criterion 9: psi-deltaprob agreement ===")
for noise in (0.1, 0.3):
    pts, r = exp.psi_deltaprob_study(noise)
    print(f"noise={noise}: pearson={r:.3f} n_points={len(pts)}")

print("=== lambda=2 vs lambda=0 accuracy (module example) ===")
for seed in range(5):
    _, tr2 = exp.adv_run(0.9, seed, 2.0)
    _, tr0 = exp.adv_run(0.9, seed, 0.0)
    print(f"s={seed}: acc(lam=2)={tr2.final.main_acc:.3f} acc(lam=0)={tr0.final.main_acc:.3f} "
          f"le={'Y' if tr2.final.main_acc <= tr0.final.main_acc else 'N'}")
