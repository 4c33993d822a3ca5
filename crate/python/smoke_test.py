"""Smoke test for the mdes extension module.

Build and install first:  pip install maturin && maturin develop -m crates/py/Cargo.toml
"""

import math
import sys
import tempfile

import mdes


def close(a, b, tol):
    return abs(a - b) <= tol * (1.0 + abs(a) + abs(b))


def main():
    law = mdes.GaussianLaw.isotropic_sparse(20, 3, 0.5)
    p = law.sample(60, seed=1)
    truth = law.true_param
    zero = [0.0] * p.m
    assert (p.n, p.m) == (60, 20)

    lhs, rhs = p.missing_term_sides([0.3] * p.m, truth)
    assert close(lhs, rhs, 1e-10), (lhs, rhs)

    hyp = mdes.MirrorMap.hypentropy(1e-3)
    x = [0.5, -1.0, 2.0]
    back = hyp.dual_inverse(hyp.dual(x))
    assert all(close(a, b, 1e-10) for a, b in zip(x, back))
    assert hyp.bregman(x, x) == 0.0

    eta = 1.0 / p.smoothness_l2()
    records, report = mdes.run_discrete(mdes.MirrorMap.euclidean(), p, zero, eta, 0.2, truth)
    assert report.stopped_by == "threshold"
    assert report.residual <= 0.2 and report.t_star <= report.budget_t
    assert records[0].step == 0 and records[-1].step == report.step_star

    hp = dict(mdes.l1_hyperparameters(p.column_bound(), sum(map(abs, truth)), 0.5, p.m, p.n))
    opts = dict(max_iters=50, store_alpha=True, stop_at_threshold=False)
    md, _ = mdes.run_discrete(mdes.MirrorMap.hypentropy(hp["gamma"]), p, zero, hp["eta"], 1e-6, truth, **opts)
    eg, _ = mdes.run_eg_pm(p, hp["gamma"], hp["eta"], 1e-6, truth, **opts)
    gap = max(abs(a - b) for r, s in zip(md, eg) for a, b in zip(r.alpha, s.alpha))
    assert gap <= 1e-8, gap

    flow, rep = mdes.run_continuous(mdes.MirrorMap.euclidean(), p, zero, 0.2, truth, h=1e-3)
    assert rep.grid_step == 1e-3 and rep.residual <= 0.2
    assert all(b.potential <= a.potential + 1e-8 for a, b in zip(flow, flow[1:]) if b.t <= rep.t_star)

    points = [[i / 30.0] for i in range(30)]
    labels = [math.sin(2 * math.pi * q[0]) for q in points]
    gram = mdes.rbf_gram(points, 0.2)
    _, krep = mdes.run_kernel(gram, labels, 0.05, [0.0] * 30)
    assert krep.stopped_by == "threshold"

    mean, se = mdes.offset_complexity_l2(p.design, 1.0, 1.0, draws=200, seed=3)
    assert mean >= 0.0 and se >= 0.0

    lasso = p.lasso(0.05)
    assert sum(1 for a in lasso if a == 0.0) > 0
    assert p.empirical_risk(p.ridge(1e-6)) <= p.empirical_risk(zero)

    with tempfile.TemporaryDirectory() as out:
        passed, checks = mdes.run_experiment("fig-bernstein", out, seeds=10, base_seed=5)
        names = {name for name, _, _ in checks}
        assert "at_least_one_violation" in names

    print(f"mdes {mdes.__version__}: smoke test passed ({len(checks)} experiment checks, verdict passed={passed})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
