"""Smoke test for the Python extension.

Build and install first:
    pip install --no-build-isolation ./crates/python
"""

import math
import sys
import tempfile

import supermodel as sm


def check(cond, what):
    if not cond:
        print(f"FAILED: {what}")
        sys.exit(1)
    print(f"ok  {what}")


def main():
    check(abs(sm.alpha_const(0.9, 0.1, 2.0, 0.35) - 1.0) < 1e-15, "alpha formula")
    check(abs(sm.alpha_const_abs(2.0, 0.1, 1.0, 0.35) - 1.8) < 1e-15, "alpha with |1-K|")
    check(sm.beta_const(0.5, 0.3) == 1.0, "beta")
    check(sm.rate_bound(1.0, 1.0) is None, "vacuous rate bound")
    check(abs(sm.lipschitz_linear(-3.0, seed=4) - 3.0) < 1e-6, "linear Lipschitz oracle")
    check(sm.sign_changes([1.0, -1.0, 0.0, 2.0]) == 2, "sign changes")

    cm = sm.CouplingMatrix(3, c_init=0.5, k=0.9)
    check(cm.get(0, 0) == 0.0 and cm.get(0, 1) == 0.5, "coupling matrix")
    try:
        sm.CouplingMatrix(3, c_init=2.0)
        check(False, "out-of-range coefficient rejected")
    except ValueError:
        check(True, "out-of-range coefficient rejected")

    ens = sm.LogisticEnsemble([0.8, 1.0, 1.3], [0.4, 0.9], cap=2.0)
    trained, errors = ens.train(cm, gt_rate=1.1, dt=0.1, steps=10, epochs=5)
    check(len(ens) == 3 and len(errors) > 0, "toy training runs")
    check(all(0.1 <= v <= 0.9 for _, _, v in trained.off_diagonal()), "trained coefficients clamped")
    traj = ens.simulate(trained, gt_rate=1.1, steps=10)
    check(len(traj) == 11 and all(math.isfinite(x) for s in traj for x in s), "toy prediction")

    with tempfile.TemporaryDirectory() as out:
        cfg = sm.ExperimentConfig(
            ["grid.n=6", "run.steps=8", "run.epochs=2", f"run.out={out}"]
        )
        check(cfg.get("supermodel.k") == "0.9", "config lookup")
        res = sm.run_experiment(cfg)
        check(res["blow_up"] is None, "tiny tumor experiment completes")
        check(len(res["volume_difference"]) == 9, "volume difference series")
        threshold, rows = sm.cfl_sweep(cfg, [0.05, 0.1], steps=10, out=out)
        check(threshold == 0.1 and all(s == "stable" for _, s in rows), "cfl sweep")

    print("all smoke checks passed")


if __name__ == "__main__":
    main()
