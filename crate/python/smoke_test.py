"""Smoke test for the pcinf extension module.

Build and install first:  pip install --no-build-isolation -e crates/py
"""

import math
import tempfile
from pathlib import Path

import pcinf


def check_kernels():
    assert pcinf.pearson([1.0, 2.0, 3.0, 4.0], [2.0, 4.0, 6.0, 8.0]) == 1.0
    assert pcinf.fisher_z(-0.5) == -pcinf.fisher_z(0.5)
    rho = pcinf.partial_corr_on_index(0.5, 0.5, 0.5)
    assert abs(rho - 1.0 / 3.0) < 1e-15
    assert pcinf.influence_triple(0.3, 0.0, 0.0) == 0.0
    assert pcinf.kendall_tau(["A", "B", "C"], ["C", "B", "A"]) == -1.0
    points = [(t, 0.3 * math.exp(-t / 20.0)) for t in range(1, 44)]
    tau0, decay_time, _ = pcinf.fit_exponential_decay(points)
    assert abs(tau0 - 0.3) < 1e-6 and abs(decay_time - 20.0) < 1e-6


def check_influence_and_sectors():
    panel, sectors = pcinf.synthetic_block_factor(4, 6, 600, snr=1.0, seed=1)
    assert panel.n_stocks == 24 and panel.n_obs == 600

    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "returns.csv"
        panel.to_csv(str(path))
        again = pcinf.ReturnPanel.from_csv(str(path))
        assert again.tickers == panel.tickers
        assert again.returns(panel.tickers[0]) == panel.returns(panel.tickers[0])

    config = pcinf.InfluenceConfig(replicates=3, seed=5)
    result = pcinf.run_influence(panel, config)
    assert result.threshold > 0.0
    assert len(result.matrix()) == 24
    ranking = result.ranking()
    values = [d for _, d in ranking]
    assert values == sorted(values, reverse=True)
    assert result.ranking() == pcinf.run_influence(panel, config).ranking()

    attribution = pcinf.run_sectors(result, sectors)
    for betas, _, flag in attribution.betas().values():
        if flag != "undefined":
            assert sum(b for b in betas if b is not None) == 1.0
    rates = attribution.prediction_rates()
    assert all(rate > baseline for _, _, rate, baseline in rates)

    try:
        pcinf.run_sectors(result, {"nobody": "Energy"})
    except ValueError as err:
        assert "no sector assigned" in str(err)
    else:
        raise AssertionError("missing sector accepted")


def check_stability():
    panel = pcinf.synthetic_quarterly(12, groups=2, dynamics="drifting", seed=3)
    result = pcinf.run_stability(panel, pcinf.InfluenceConfig(replicates=2, seed=3))
    n = len(result.quarters)
    taus = result.tau_matrix()
    assert n == 44 and all(taus[i][i] == 1.0 for i in range(n))
    assert result.tau0 > 0.0 and result.decay_time > 0.0


def main():
    check_kernels()
    check_influence_and_sectors()
    check_stability()
    print(f"pcinf {pcinf.__version__}: smoke test passed")


if __name__ == "__main__":
    main()
