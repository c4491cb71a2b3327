import pytest

from privfeat.experiment import ResultRow, ResultsTable
from privfeat.trends import (
    mcadams_raises_eer,
    noise_degrades_all,
    sign_test,
    smoothing_wer_nondecreasing,
    snr_beats_reverb,
)


def test_sign_test_values():
    t = sign_test([1.0] * 5)
    assert (t.wins, t.losses, t.ties) == (5, 0, 0)
    assert t.p_value == pytest.approx(1 / 32) and t.passed
    t = sign_test([1, 1, 1, 1, -1, 0, 0])
    assert (t.wins, t.losses, t.ties) == (4, 1, 2)
    assert t.p_value == pytest.approx(6 / 32) and not t.passed
    assert sign_test([0, 0]).p_value == 1.0
    with pytest.raises(ValueError):
        sign_test([1.0, float("nan")])


def _table(values):
    return ResultsTable([ResultRow(m, c, k, v, v, v, 1, s) for (m, c, k, s), v in values.items()])


SEEDS = range(6)


def test_mcadams_check():
    good = {("baseline", "orig", "eer", s): 0.05 for s in SEEDS}
    good.update({("mcadams", "orig", "eer", s): 0.2 for s in SEEDS})
    assert mcadams_raises_eer(_table(good)).passed
    bad = dict(good)
    bad.update({("mcadams", "orig", "eer", s): 0.05 for s in SEEDS})
    assert not mcadams_raises_eer(_table(bad)).passed


def test_smoothing_chain_needs_a_rise():
    chain = ("baseline", "mel10", "mel10+tau125")
    flat = {(m, "orig", "wer", s): 0.1 for m in chain for s in SEEDS}
    assert not smoothing_wer_nondecreasing(_table(flat)).passed
    rising = {(m, "orig", "wer", s): 0.1 * i for i, m in enumerate(chain) for s in SEEDS}
    assert smoothing_wer_nondecreasing(_table(rising)).passed
    dip = dict(rising)
    dip.update({("mel10", "orig", "wer", s): 0.5 for s in SEEDS})
    assert not smoothing_wer_nondecreasing(_table(dip)).passed


def _conditions(noise_wer, reverb_wer, mcc_noise):
    v = {}
    for m in ("a", "b", "c"):
        for s in SEEDS:
            v[(m, "orig", "wer", s)] = 0.1
            v[(m, "snr0", "wer", s)] = noise_wer
            v[(m, "rt0.70", "wer", s)] = reverb_wer
            v[(m, "orig", "mcc", s)] = 0.8
            v[(m, "snr0", "mcc", s)] = mcc_noise
            v[(m, "rt0.70", "mcc", s)] = 0.7
    return _table(v)


def test_noise_checks_use_metric_direction():
    assert noise_degrades_all(_conditions(0.5, 0.2, 0.4)).passed
    # MCC rising under noise is an improvement, so the check fails
    assert not noise_degrades_all(_conditions(0.5, 0.2, 0.9)).passed
    assert snr_beats_reverb(_conditions(0.5, 0.2, 0.4)).passed
    assert not snr_beats_reverb(_conditions(0.15, 0.6, 0.75)).passed
