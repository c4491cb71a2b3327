import math

import pytest

from privfeat import experiment
from privfeat.corpus import SyntheticCorpusSpec, synthetic_corpus
from privfeat.experiment import (
    ExperimentGrid,
    ResultRow,
    ResultsTable,
    SweepSettings,
    parse_condition,
    parse_sweep_config,
    run_sweep,
    write_results,
)
from privfeat.transforms import ConfigError, parse_method

TINY = SyntheticCorpusSpec(
    n_speakers=3, train_per_speaker=1, eval_per_speaker=2, words_per_utterance=2, n_meetings=1, meeting_duration_s=8
)


def _tiny(seed):
    return synthetic_corpus(seed, TINY)


def _grid(methods=("baseline", "mel10"), conditions=("orig",), metrics=("wer", "mcc"), seeds=(0,)):
    return ExperimentGrid([parse_method(m) for m in methods], [parse_condition(c) for c in conditions], list(metrics), list(seeds))


def test_conditions():
    assert parse_condition("snr5").name == "snr5"
    assert parse_condition("rt0.37").value == pytest.approx(0.37)
    assert parse_condition("rt60=0.7").name == "rt0.70"
    assert len(experiment.DEFAULT_CONDITIONS) == 7
    with pytest.raises(ConfigError):
        parse_condition("loud")


def test_grid_validation():
    with pytest.raises(ConfigError):
        _grid(metrics=("bleu",))
    with pytest.raises(ConfigError):
        _grid(methods=("baseline", "baseline"))
    with pytest.raises(ConfigError):
        _grid(seeds=())
    g = ExperimentGrid.default()
    assert len(g.methods) * len(g.conditions) * len(g.metrics) == 11 * 7 * 4


def test_sweep_fills_every_cell():
    grid = _grid(conditions=("orig", "snr10"), metrics=("wer", "eer", "mcc", "der"))
    table = run_sweep(grid, _tiny, SweepSettings(replicates=100, eer_weights={"low": 1.0, "high": 1.0}))
    table.check_complete(grid)
    assert len(table.rows) == 2 * 2 * 4
    assert all(r.status == "ok" for r in table.rows)
    for r in table.rows:
        assert r.ci_low <= r.point <= r.ci_high or r.ci_low == r.ci_high
    assert table.value("baseline", "orig", "mcc", 0) > 0.5


def test_failing_method_is_isolated(monkeypatch):
    grid = _grid(methods=("baseline", "mel10", "tau125"))
    ref = run_sweep(_grid(methods=("baseline", "tau125")), _tiny, SweepSettings(replicates=100))

    real = experiment.evaluate_cell

    def broken(corpus, cfg, *args, **kwargs):
        if cfg.name == "mel10":
            raise RuntimeError("boom")
        return real(corpus, cfg, *args, **kwargs)

    monkeypatch.setattr(experiment, "evaluate_cell", broken)
    table = run_sweep(grid, _tiny, SweepSettings(replicates=100))
    table.check_complete(grid)
    failed = [r for r in table.rows if r.status != "ok"]
    assert {r.method for r in failed} == {"mel10"}
    assert all(math.isnan(r.point) and "boom" in r.status for r in failed)
    kept = ResultsTable([r for r in table.rows if r.method != "mel10"])
    assert kept.to_csv() == ref.to_csv()


def test_failing_attacker_marks_whole_method(monkeypatch):
    real = experiment.fit_attacker

    def broken(train, cfg, *args, **kwargs):
        if cfg.n_mels == 10:
            raise ValueError("no templates")
        return real(train, cfg, *args, **kwargs)

    monkeypatch.setattr(experiment, "fit_attacker", broken)
    table = run_sweep(_grid(conditions=("orig", "snr5")), _tiny, SweepSettings(replicates=100))
    assert sum(r.status != "ok" for r in table.rows) == 2 * 2


def test_eer_needs_subset_weights():
    table = run_sweep(_grid(metrics=("eer",)), _tiny, SweepSettings(replicates=100))
    assert all("eer weights must be configured" in r.status for r in table.rows)


def _table():
    return ResultsTable(
        [
            ResultRow("baseline", "orig", "wer", 0.1 + 0.2, 0.01, 1 / 3, 12, 0),
            ResultRow("mel10", "orig", "wer", math.nan, math.nan, math.nan, 0, 0, "error: X: y, z"),
        ]
    )


def test_csv_and_json_round_trip():
    t = _table()
    back = ResultsTable.from_csv(t.to_csv())
    assert back.rows[0] == t.rows[0]
    assert back.rows[0].point == 0.1 + 0.2  # repr keeps all 17 significant digits
    assert math.isnan(back.rows[1].point) and back.rows[1].status == "error: X: y, z"
    j = ResultsTable.from_json(t.to_json())
    assert j.rows[0] == t.rows[0] and math.isnan(j.rows[1].ci_low)
    with pytest.raises(ValueError):
        ResultsTable.from_csv("a,b\n1,2\n")


def test_check_complete_detects_gaps():
    with pytest.raises(AssertionError):
        ResultsTable(_table().rows[:1]).check_complete(_grid(metrics=("wer",)))


def test_write_results_layout(tmp_path):
    write_results(_table(), tmp_path)
    assert (tmp_path / "results.csv").read_text() == _table().to_csv()
    cell = tmp_path / "results" / "baseline" / "orig" / "wer.json"
    assert ResultsTable.from_json(cell.read_text()).rows == _table().rows[:1]


CONFIG = """
[experiment]
methods = baseline, mine
conditions = orig, snr5, rt0.37
metrics = wer, der
seeds = 1, 2
attacker = ignorant
replicates = 200
eer_weights = low:2, high:1

[method mine]
n_mels = 40
tau_ms = 250

[corpus]
speakers = 4
meeting_duration = 12

[noise]
kind = white

[rir]
drr_db = 3
"""


def test_parse_config(tmp_path):
    cfg = parse_sweep_config(CONFIG, tmp_path)
    g = cfg.grid
    assert [m.name for m in g.methods] == ["baseline", "mine"]
    assert g.methods[1].n_mels == 40 and g.methods[1].tau_ms == 250
    assert [c.name for c in g.conditions] == ["orig", "snr5", "rt0.37"]
    assert g.seeds == [1, 2] and g.metrics == ["wer", "der"]
    s = cfg.settings
    assert (s.attacker_mode, s.replicates, s.noise_source, s.rir_drr_db) == ("ignorant", 200, "white", 3.0)
    assert s.eer_weights == {"low": 2.0, "high": 1.0}
    corpus = cfg.corpus_source(0)
    assert len({r.speaker_id for r in corpus.train}) == 4


@pytest.mark.parametrize(
    "text",
    [
        "[experiment]\nmethod = baseline\n",
        "[corpus]\nspeakerz = 3\n",
        "[noise]\nsnr = 3\n",
        "[extra]\na = 1\n",
        "[method x]\nwidth = 3\n",
        "[experiment]\nattacker = oracle\n",
        "[corpus]\nsource = tape\n",
        "[corpus]\nsource = manifest\n",
    ],
)
def test_config_errors(text):
    with pytest.raises(ConfigError):
        parse_sweep_config(text)


def test_shipped_configs_parse():
    from importlib.resources import files

    root = files("privfeat") / "configs"
    default = parse_sweep_config((root / "default.cfg").read_text())
    assert len(default.grid.methods) == 11 and len(default.grid.conditions) == 7
    trend = parse_sweep_config((root / "trend.cfg").read_text())
    assert trend.grid.seeds == list(range(10))
    assert "mel10+tau125" in [m.name for m in trend.grid.methods]
    parse_sweep_config((root / "smoke.cfg").read_text())
