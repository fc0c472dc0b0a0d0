"""Exercises the fosr extension end to end on a small simulated ensemble.

Build and install first, e.g.
    maturin build --release -m crates/python/Cargo.toml -o dist && pip install dist/fosr-*.whl
"""

import math
import os
import sys
import tempfile

import fosr


def check(cond, what):
    if not cond:
        sys.exit(f"FAIL {what}")
    print(f"ok   {what}")


def main():
    basis = fosr.Basis(8, 2020.0, 2090.0)
    rows = basis.eval([2020.0, 2043.5, 2090.0])
    check(all(abs(sum(r) - 1.0) < 1e-12 for r in rows), "basis rows sum to one")
    check(len(basis.penalty()) == 8, "penalty is K x K")

    cov = fosr.cov_matrix(2.0, 0.5, "decade", [2020.0, 2030.0, 2040.0])
    check(abs(cov[0][2] - 2.0 * 0.25) < 1e-12, "decade covariance entry")
    try:
        fosr.cov_matrix(1.0, -0.5, "continuous", [2020.0, 2030.0])
        check(False, "continuous mode rejects negative rho")
    except ValueError as e:
        check(str(e).startswith("invalid-parameter"), "continuous mode rejects negative rho")

    data = fosr.Dataset.simulate(seed=7)
    check(data.n_scenarios == 23 and data.n_rows == 115, "simulated design shape")
    again = fosr.Dataset.simulate(seed=7)
    check(data.y == again.y, "simulation is deterministic")

    eb = fosr.eb_hyperparams(data)
    check(eb["a_z"] == 92.0 and eb["a_w"] == [4.0] * 6, "empirical-Bayes shape constants")

    model = fosr.Model(data, preset="paper-reference")
    draws = model.fit(n_chains=2, n_iter=600, n_warmup=300, seed=1)
    check(draws.n_draws == 600, "draw count")
    check(len(draws.scalar("rho")) == 600, "scalar access")

    beta = draws.summarize_beta(level=0.9)
    check(len(beta) == 6, "one coefficient curve per column")
    check(all(lo <= m <= hi for c in beta for lo, m, hi in zip(c["lower"], c["mean"], c["upper"])), "bands contain means")
    check(len(draws.summarize_c()) == 23, "one scenario curve per scenario")
    check(len(draws.rope()) == 6, "ROPE curves")

    kr = draws.krige(pred_times=[2025.0, 2035.0])
    check(len(kr["curves"]) == 115 and kr["pred_times"] == [2025.0, 2035.0], "kriging output")

    sc = draws.scores()
    check(all(math.isfinite(sc[k]) for k in ("waic", "lpml", "mse")), "finite scores")
    diag = draws.diagnostics()
    check(diag["max_rhat"] is not None, "diagnostics report")

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "draws.bin")
        draws.save(path)
        back = model.load_draws(path)
        check(back.scalar("rho") == draws.scalar("rho"), "draw file round trip")

    print("all checks passed")


if __name__ == "__main__":
    main()
