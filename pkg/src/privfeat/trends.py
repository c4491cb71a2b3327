"""Seed-paired trend checks on a results table with one-sided sign tests.

Each check reduces the table to one signed difference per seed (positive =
the expected direction) and tests whether positives dominate. Ties are
dropped, as usual for the sign test.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import binomtest

from .experiment import METRIC_DIRECTION, ResultsTable

ALPHA = 0.05


@dataclass
class SignTest:
    wins: int
    losses: int
    ties: int
    p_value: float

    @property
    def passed(self) -> bool:
        return self.p_value < ALPHA

    def __str__(self) -> str:
        return f"{self.wins}+/{self.losses}-/{self.ties}= p={self.p_value:.4f}"


def sign_test(diffs, tol: float = 0.0) -> SignTest:
    """One-sided sign test of H1: P(diff > 0) > 1/2, ties (|diff| <= tol) dropped."""
    d = np.asarray(list(diffs), dtype=np.float64)
    if np.any(~np.isfinite(d)):
        raise ValueError("non-finite difference; a cell failed")
    wins = int(np.sum(d > tol))
    losses = int(np.sum(d < -tol))
    ties = int(d.size - wins - losses)
    n = wins + losses
    p = 1.0 if n == 0 else float(binomtest(wins, n, 0.5, alternative="greater").pvalue)
    return SignTest(wins, losses, ties, p)


def _values(table: ResultsTable) -> tuple[dict, list]:
    vals, seeds = {}, set()
    for r in table.rows:
        if r.status == "ok":
            vals[(r.method, r.condition, r.metric, r.seed)] = r.point
        else:
            vals[(r.method, r.condition, r.metric, r.seed)] = float("nan")
        seeds.add(r.seed)
    return vals, sorted(seeds)


def degradation(value: float, reference: float, metric: str) -> float:
    """How much worse ``value`` is than ``reference`` (positive = worse model)."""
    return -METRIC_DIRECTION[metric] * (value - reference)


@dataclass
class TrendResult:
    name: str
    passed: bool
    tests: dict = field(default_factory=dict)

    def summary(self) -> str:
        parts = [f"{k}: {v}" for k, v in self.tests.items()]
        return f"{self.name}: {'PASS' if self.passed else 'FAIL'} (" + "; ".join(parts) + ")"


def mcadams_raises_eer(table: ResultsTable, condition: str = "orig") -> TrendResult:
    """EER under McAdams exceeds the baseline EER."""
    v, seeds = _values(table)
    t = sign_test(v[("mcadams", condition, "eer", s)] - v[("baseline", condition, "eer", s)] for s in seeds)
    return TrendResult("mcadams EER > baseline EER", t.passed, {"eer": t})


def smoothing_wer_nondecreasing(
    table: ResultsTable, chain=("baseline", "mel10", "mel10+tau125"), condition: str = "orig"
) -> TrendResult:
    """WER never drops along ``chain`` and rises from its first to its last method.

    Per seed the chain counts as a success when every step is non-decreasing;
    successes must dominate (sign test), and the end-to-end increase must
    hold under its own sign test so a chain of ties does not pass.
    """
    v, seeds = _values(table)
    w = np.array([[v[(m, condition, "wer", s)] for m in chain] for s in seeds])
    if np.any(~np.isfinite(w)):
        raise ValueError("non-finite WER; a cell failed")
    ok = np.all(np.diff(w, axis=1) >= 0, axis=1)
    chain_test = sign_test(np.where(ok, 1.0, -1.0))
    rise = sign_test(w[:, -1] - w[:, 0])
    return TrendResult(
        "WER non-decreasing with smoothing", chain_test.passed and rise.passed, {"monotone": chain_test, "rise": rise}
    )


def noise_degrades_all(table: ResultsTable, noisy: str = "snr0", clean: str = "orig", metrics=None) -> TrendResult:
    """Every metric is worse at ``noisy`` than at ``clean`` (averaged over methods, paired by seed)."""
    v, seeds = _values(table)
    methods = sorted({k[0] for k in v})
    metrics = metrics or sorted({k[2] for k in v})
    tests = {}
    for metric in metrics:
        diffs = [
            np.mean([degradation(v[(m, noisy, metric, s)], v[(m, clean, metric, s)], metric) for m in methods])
            for s in seeds
        ]
        tests[metric] = sign_test(diffs)
    return TrendResult(f"{noisy} degrades every metric", all(t.passed for t in tests.values()), tests)


def snr_beats_reverb(
    table: ResultsTable, noisy: str = "snr0", reverb: str = "rt0.70", clean: str = "orig", metrics=None
) -> TrendResult:
    """For a majority of methods, the mean degradation at ``noisy`` exceeds that at ``reverb``."""
    v, seeds = _values(table)
    methods = sorted({k[0] for k in v})
    metrics = metrics or sorted({k[2] for k in v})
    tests = {}
    for m in methods:
        diffs = []
        for s in seeds:
            d_noise = np.mean([degradation(v[(m, noisy, k, s)], v[(m, clean, k, s)], k) for k in metrics])
            d_rev = np.mean([degradation(v[(m, reverb, k, s)], v[(m, clean, k, s)], k) for k in metrics])
            diffs.append(d_noise - d_rev)
        tests[m] = sign_test(diffs)
    n_pass = sum(t.passed for t in tests.values())
    return TrendResult(f"{noisy} hurts more than {reverb} ({n_pass}/{len(methods)} methods)", n_pass > len(methods) / 2, tests)


def all_trends(table: ResultsTable) -> list[TrendResult]:
    return [
        mcadams_raises_eer(table),
        smoothing_wer_nondecreasing(table),
        noise_degrades_all(table),
        snr_beats_reverb(table),
    ]
