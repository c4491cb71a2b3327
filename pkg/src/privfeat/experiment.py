"""Method x condition sweeps with bootstrap intervals.

Conditions degrade the evaluation audio first (the recorded signal), then the
privacy method is applied, then the (optionally re-fitted) proxy models score
it. All randomness is keyed on the sweep seed and recording ids, never on the
position of a method in the grid, so dropping or adding a method leaves the
other cells untouched.
"""

from __future__ import annotations

import configparser
import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .audio_core import AudioBuffer
from .augmentation import RT60S, SNRS_DB, NoiseSpec, RirSpec, convolve_rir, load_rir, mix_noise, synthesize_rir
from .corpus import Corpus, Recording, SyntheticCorpusSpec, load_manifest, synthetic_corpus
from .metrics import (
    CI_LEVEL,
    DER_COLLAR_S,
    ConfusionCounts,
    MetricUndefined,
    TrialScores,
    bootstrap_ci,
    der,
    eer,
    mcc,
    wer,
    weighted_eer,
)
from .proxies import (
    DIAR_HOP_S,
    DIAR_WINDOW_S,
    MAX_SPEAKERS,
    VAD_HANGOVER,
    AttackerModel,
    diarize,
    dtw_recognize,
    embed,
    energy_vad,
    fit_attacker,
    frame_labels,
    score_trials,
)
from .transforms import DEFAULT_METHODS, ConfigError, TransformConfig, config_from_mapping, featurize, parse_method
from .transforms import mcadams_anonymize, sample_mcadams_coefficient, unprotected_view

log = logging.getLogger(__name__)

METRICS = ("wer", "eer", "mcc", "der")
# +1 when a larger value means a better-performing model
METRIC_DIRECTION = {"wer": -1, "eer": -1, "mcc": +1, "der": -1}
DEFAULT_CONDITIONS = ("orig",) + tuple(f"snr{s:g}" for s in SNRS_DB) + tuple(f"rt{r:.2f}" for r in RT60S)
ATTACKER_MODES = ("ignorant", "semi_informed")


@dataclass(frozen=True)
class Condition:
    kind: str  # "orig", "snr" or "rt60"
    value: float | None = None

    @property
    def name(self) -> str:
        if self.kind == "orig":
            return "orig"
        if self.kind == "snr":
            return f"snr{self.value:g}"
        return f"rt{self.value:.2f}"


def parse_condition(text: str) -> Condition:
    t = text.strip().lower()
    if t == "orig":
        return Condition("orig")
    if t.startswith("snr"):
        return Condition("snr", float(t[3:]))
    if t.startswith("rt60"):
        return Condition("rt60", float(t[4:].lstrip(":=")))
    if t.startswith("rt"):
        return Condition("rt60", float(t[2:]))
    raise ConfigError(f"unknown condition {text!r}")


@dataclass
class ExperimentGrid:
    methods: list
    conditions: list
    metrics: list
    seeds: list

    def __post_init__(self):
        if not self.methods or not self.conditions or not self.metrics or not self.seeds:
            raise ConfigError("methods, conditions, metrics and seeds must all be non-empty")
        bad = [m for m in self.metrics if m not in METRICS]
        if bad:
            raise ConfigError(f"unknown metrics {bad}")
        names = [m.name for m in self.methods]
        if len(set(names)) != len(names):
            raise ConfigError("method names must be unique")

    @classmethod
    def default(cls, seeds=(0,)) -> "ExperimentGrid":
        return cls(
            [parse_method(m) for m in DEFAULT_METHODS],
            [parse_condition(c) for c in DEFAULT_CONDITIONS],
            list(METRICS),
            list(seeds),
        )


@dataclass
class SweepSettings:
    attacker_mode: str = "semi_informed"
    replicates: int = 1000
    level: float = CI_LEVEL
    collar_s: float = DER_COLLAR_S
    noise_source: str = "pink"
    rir_source: str = "synthetic"
    rir_drr_db: float | None = None
    eer_weights: dict | None = None
    asv_mcadams_policy: str = "per_speaker"
    vad_hangover: int = VAD_HANGOVER
    diar_window_s: float = DIAR_WINDOW_S
    diar_hop_s: float = DIAR_HOP_S
    max_speakers: int = MAX_SPEAKERS

    def __post_init__(self):
        if self.attacker_mode not in ATTACKER_MODES:
            raise ConfigError(f"attacker mode must be one of {ATTACKER_MODES}")


@dataclass
class ResultRow:
    method: str
    condition: str
    metric: str
    point: float
    ci_low: float
    ci_high: float
    n_units: int
    seed: int
    status: str = "ok"


FIELDS = ("method", "condition", "metric", "point", "ci_low", "ci_high", "n_units", "seed", "status")


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass
class ResultsTable:
    rows: list = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(FIELDS)
        for r in self.rows:
            w.writerow([_fmt(getattr(r, f)) for f in FIELDS])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ResultsTable":
        rd = csv.DictReader(io.StringIO(text))
        if rd.fieldnames is None or tuple(rd.fieldnames) != FIELDS:
            raise ValueError(f"unexpected results header {rd.fieldnames}")
        rows = [
            ResultRow(
                d["method"],
                d["condition"],
                d["metric"],
                float(d["point"]),
                float(d["ci_low"]),
                float(d["ci_high"]),
                int(d["n_units"]),
                int(d["seed"]),
                d["status"],
            )
            for d in rd
        ]
        return cls(rows)

    def to_records(self) -> list[dict]:
        return [{f: getattr(r, f) for f in FIELDS} for r in self.rows]

    def to_json(self) -> str:
        recs = [{k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in r.items()} for r in self.to_records()]
        return json.dumps(recs, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "ResultsTable":
        recs = json.loads(text)
        rows = []
        for d in recs:
            vals = {k: (math.nan if d[k] is None else d[k]) for k in FIELDS}
            rows.append(ResultRow(**vals))
        return cls(rows)

    def value(self, method: str, condition: str, metric: str, seed: int) -> float:
        for r in self.rows:
            if (r.method, r.condition, r.metric, r.seed) == (method, condition, metric, seed):
                return r.point
        raise KeyError((method, condition, metric, seed))

    def check_complete(self, grid: ExperimentGrid) -> None:
        seen: dict = {}
        for r in self.rows:
            key = (r.method, r.condition, r.metric, r.seed)
            seen[key] = seen.get(key, 0) + 1
        for seed in grid.seeds:
            for m in grid.methods:
                for c in grid.conditions:
                    for metric in grid.metrics:
                        n = seen.get((m.name, c.name, metric, seed), 0)
                        if n != 1:
                            raise AssertionError(f"{(m.name, c.name, metric, seed)} appears {n} times")


# ----------------------------------------------------------------- evaluation


class _SeedCache:
    """Per-seed memo of degraded and anonymized audio shared across methods."""

    def __init__(self, settings: SweepSettings, seed: int, sample_rate: int):
        self.settings = settings
        self.seed = seed
        self.sample_rate = sample_rate
        self.degraded: dict = {}
        self.anonymized: dict = {}
        self.rirs: dict = {}

    def rir(self, rt60: float) -> AudioBuffer:
        if rt60 not in self.rirs:
            src = self.settings.rir_source
            if src == "synthetic":
                spec = RirSpec(rt60_s=rt60, seed=self.seed, sample_rate=self.sample_rate, drr_db=self.settings.rir_drr_db)
                self.rirs[rt60] = synthesize_rir(spec)
            else:
                self.rirs[rt60] = load_rir(Path(src.format(rt60=rt60)))
        return self.rirs[rt60]

    def degrade(self, rec: Recording, cond: Condition) -> AudioBuffer:
        key = (rec.utt_id, cond.name)
        if key not in self.degraded:
            if cond.kind == "orig":
                out = rec.audio
            elif cond.kind == "snr":
                spec = NoiseSpec(self.settings.noise_source, cond.value, self.seed)
                out = mix_noise(rec.audio, spec, key=rec.utt_id).audio
            else:
                out = convolve_rir(rec.audio, self.rir(cond.value))
            self.degraded[key] = out
        return self.degraded[key]

    def anonymize(self, audio: AudioBuffer, key, coeff: float) -> AudioBuffer:
        k = (key, coeff)
        if k not in self.anonymized:
            self.anonymized[k] = mcadams_anonymize(audio, coeff=coeff)
        return self.anonymized[k]


def _featurize(cache: _SeedCache, rec: Recording, audio: AudioBuffer, cfg: TransformConfig, cond_name: str):
    if cfg.mcadams:
        coeff = sample_mcadams_coefficient(cfg, rec.utt_id, rec.speaker_id)
        audio = cache.anonymize(audio, (rec.utt_id, cond_name), coeff)
        return featurize(audio, replace(cfg, mcadams=False)), coeff
    return featurize(audio, cfg), None


def _wer_units(att, recs, feats):
    units = []
    for rec, fm in zip(recs, feats):
        if not rec.tokens:
            continue
        hyp = dtw_recognize(fm, rec.words, att.templates)
        b = wer(rec.tokens, hyp)
        units.append((b.errors, b.n_ref))
    return units


def _wer_metric(units) -> float:
    return sum(u[0] for u in units) / sum(u[1] for u in units)


def _mcc_units(att, recs, feats):
    units = []
    for rec, fm in zip(recs, feats):
        regions = rec.words if rec.words else rec.speech_annotation().speech_regions()
        if not regions:
            continue
        dec = energy_vad(fm, att.vad_threshold, att.hangover_frames)
        units.append(ConfusionCounts.from_labels(frame_labels(fm, regions), dec))
    return units


def _mcc_metric(units) -> float:
    total = ConfusionCounts()
    for u in units:
        total = total + u
    return mcc(total)


def _asv_trials(recs):
    enroll = [r for r in recs if r.role == "enroll"]
    trials = [r for r in recs if r.role == "trial"]
    return [(e.utt_id, t.utt_id, e.speaker_id == t.speaker_id) for e in enroll for t in trials], enroll


def _eer_metric_factory(weights):
    def metric(units) -> float:
        by_subset: dict = {}
        for subset, scores, labels in units:
            by_subset.setdefault(subset, ([], []))
            by_subset[subset][0].append(scores)
            by_subset[subset][1].append(labels)
        if len(by_subset) == 1 and weights is None:
            (s, l), = by_subset.values()
            return eer(TrialScores(np.concatenate(s), np.concatenate(l))).eer
        if weights is None:
            raise ConfigError("several ASV subsets present; eer weights must be configured")
        pairs = []
        for subset, (s, l) in by_subset.items():
            if subset not in weights:
                raise ConfigError(f"no EER weight configured for subset {subset!r}")
            pairs.append((eer(TrialScores(np.concatenate(s), np.concatenate(l))).eer, weights[subset]))
        return weighted_eer(pairs)

    return metric


def _der_metric(units) -> float:
    return float(np.mean(units))


def evaluate_cell(
    corpus: Corpus,
    cfg: TransformConfig,
    cond: Condition,
    metrics,
    attacker: AttackerModel,
    assumed_cfg: TransformConfig,
    settings: SweepSettings,
    cache: _SeedCache,
    seed: int,
) -> dict:
    """Evaluate requested metrics for one (method, condition); returns metric -> ResultRow-ish tuple or exception."""
    attacker.check(assumed_cfg)
    out: dict = {}
    utt_feats = None

    def utterance_features():
        nonlocal utt_feats
        if utt_feats is None:
            utt_feats = [_featurize(cache, r, cache.degrade(r, cond), cfg, cond.name)[0] for r in corpus.eval]
        return utt_feats

    for metric in metrics:
        try:
            if metric == "wer":
                units = _wer_units(attacker, corpus.eval, utterance_features())
                fn = _wer_metric
            elif metric == "mcc":
                units = _mcc_units(attacker, corpus.eval, utterance_features())
                fn = _mcc_metric
            elif metric == "eer":
                trials, enroll = _asv_trials(corpus.eval)
                asv_cfg = replace(cfg, mcadams_policy=settings.asv_mcadams_policy) if cfg.mcadams else cfg
                embs = {}
                for r in corpus.eval:
                    if r.role in ("enroll", "trial"):
                        fm, _ = _featurize(cache, r, cache.degrade(r, cond), asv_cfg, cond.name)
                        embs[r.utt_id] = attacker.embedding_stats.apply(embed(fm))
                sub_of = {r.utt_id: r.subset for r in corpus.eval}
                ts = score_trials(trials, embs)
                enroll_ids = [t[0] for t in trials]
                units = []
                for e in enroll:
                    mask = np.array([eid == e.utt_id for eid in enroll_ids])
                    units.append((sub_of[e.utt_id], ts.scores[mask], ts.is_target[mask]))
                fn = _eer_metric_factory(settings.eer_weights)
            elif metric == "der":
                units = []
                for m in corpus.meetings:
                    fm, _ = _featurize(cache, m, cache.degrade(m, cond), cfg, cond.name)
                    hyp = diarize(
                        fm,
                        m.reference,
                        settings.diar_window_s,
                        settings.diar_hop_s,
                        settings.max_speakers,
                        attacker.embedding_stats,
                        seed,
                    )
                    units.append(der(m.reference, hyp, settings.collar_s).der)
                fn = _der_metric
            else:
                raise ConfigError(f"unknown metric {metric}")
            if not units:
                raise MetricUndefined(f"no evaluation units for {metric}")
            ci = bootstrap_ci(fn, units, settings.replicates, settings.level, seed=seed)
            out[metric] = ResultRow(cfg.name, cond.name, metric, ci.point, ci.low, ci.high, len(units), seed)
        except Exception as exc:  # noqa: BLE001 - recorded as a failure row
            log.warning("cell %s/%s/%s failed: %s", cfg.name, cond.name, metric, exc)
            out[metric] = _failure(cfg.name, cond.name, metric, seed, exc)
    return out


def _failure(method, cond, metric, seed, exc) -> ResultRow:
    msg = f"error: {type(exc).__name__}: {exc}".replace("\n", " ")
    return ResultRow(method, cond, metric, math.nan, math.nan, math.nan, 0, seed, msg)


def run_sweep(
    grid: ExperimentGrid,
    corpus_source: Callable[[int], Corpus] | Corpus,
    settings: SweepSettings | None = None,
    progress: Callable[[str], None] | None = None,
) -> ResultsTable:
    """Evaluate every (seed, method, condition, metric) cell of the grid."""
    settings = settings or SweepSettings()
    table = ResultsTable()
    for seed in grid.seeds:
        corpus = corpus_source(seed) if callable(corpus_source) else corpus_source
        if settings.attacker_mode == "semi_informed" and not corpus.train:
            raise ConfigError("semi-informed attackers need a training split")
        cache = _SeedCache(settings, seed, corpus.sample_rate)
        for method in grid.methods:
            cfg = replace(method, seed=seed)
            fit_cfg = cfg if settings.attacker_mode == "semi_informed" else unprotected_view(cfg)
            try:
                attacker = fit_attacker(
                    corpus.train,
                    fit_cfg,
                    settings.vad_hangover,
                    featurizer=lambda rec, c: _featurize(cache, rec, rec.audio, c, "train")[0],
                )
            except Exception as exc:  # noqa: BLE001
                log.warning("fitting attacker for %s failed: %s", cfg.name, exc)
                for cond in grid.conditions:
                    for metric in grid.metrics:
                        table.rows.append(_failure(cfg.name, cond.name, metric, seed, exc))
                continue
            for cond in grid.conditions:
                try:
                    cell = evaluate_cell(corpus, cfg, cond, grid.metrics, attacker, fit_cfg, settings, cache, seed)
                except Exception as exc:  # noqa: BLE001
                    cell = {m: _failure(cfg.name, cond.name, m, seed, exc) for m in grid.metrics}
                for metric in grid.metrics:
                    table.rows.append(cell[metric])
                if progress:
                    progress(f"seed={seed} method={cfg.name} condition={cond.name}")
    return table


# -------------------------------------------------------------------- config


EXPERIMENT_KEYS = {
    "methods",
    "conditions",
    "metrics",
    "seeds",
    "attacker",
    "replicates",
    "level",
    "collar",
    "asv_mcadams_policy",
    "eer_weights",
    "vad_hangover",
    "diar_window",
    "diar_hop",
    "max_speakers",
}
CORPUS_KEYS = {
    "source",
    "manifest",
    "speakers",
    "train_per_speaker",
    "eval_per_speaker",
    "words_per_utterance",
    "meetings",
    "meeting_duration",
}
NOISE_KEYS = {"kind", "path"}
RIR_KEYS = {"kind", "path", "drr_db"}


@dataclass
class SweepConfig:
    grid: ExperimentGrid
    settings: SweepSettings
    corpus_source: object
    corpus_desc: dict = field(default_factory=dict)


def _split_list(text: str) -> list[str]:
    return [t.strip() for t in text.replace("\n", ",").split(",") if t.strip()]


def _check_keys(section: str, values, allowed) -> None:
    unknown = sorted(set(values) - set(allowed))
    if unknown:
        raise ConfigError(f"[{section}] unknown keys: {', '.join(unknown)}")


def parse_sweep_config(text: str, base_dir: Path | None = None) -> SweepConfig:
    """Parse the INI-style sweep configuration (see README for every key)."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    cp.read_string(text)
    base_dir = base_dir or Path(".")
    custom: dict = {}
    for section in cp.sections():
        if section.startswith("method "):
            name = section[len("method ") :].strip()
            custom[name] = config_from_mapping(dict(cp[section]), name=name)
        elif section not in ("experiment", "corpus", "noise", "rir"):
            raise ConfigError(f"unknown section [{section}]")

    ex = dict(cp["experiment"]) if cp.has_section("experiment") else {}
    _check_keys("experiment", ex, EXPERIMENT_KEYS)
    methods = []
    for name in _split_list(ex.get("methods", ",".join(DEFAULT_METHODS))):
        methods.append(custom[name] if name in custom else parse_method(name))
    conditions = [parse_condition(c) for c in _split_list(ex.get("conditions", ",".join(DEFAULT_CONDITIONS)))]
    metrics = _split_list(ex.get("metrics", ",".join(METRICS)))
    seeds = [int(s) for s in _split_list(ex.get("seeds", "0"))]
    weights = None
    if "eer_weights" in ex:
        weights = {}
        for item in _split_list(ex["eer_weights"]):
            k, v = item.split(":")
            weights[k.strip()] = float(v)

    noise = dict(cp["noise"]) if cp.has_section("noise") else {}
    _check_keys("noise", noise, NOISE_KEYS)
    rir = dict(cp["rir"]) if cp.has_section("rir") else {}
    _check_keys("rir", rir, RIR_KEYS)
    noise_source = str(base_dir / noise["path"]) if "path" in noise else noise.get("kind", "pink")
    rir_source = str(base_dir / rir["path"]) if "path" in rir else rir.get("kind", "synthetic")

    settings = SweepSettings(
        attacker_mode=ex.get("attacker", "semi_informed"),
        replicates=int(ex.get("replicates", 1000)),
        level=float(ex.get("level", CI_LEVEL)),
        collar_s=float(ex.get("collar", DER_COLLAR_S)),
        noise_source=noise_source,
        rir_source=rir_source,
        rir_drr_db=float(rir["drr_db"]) if "drr_db" in rir else None,
        eer_weights=weights,
        asv_mcadams_policy=ex.get("asv_mcadams_policy", "per_speaker"),
        vad_hangover=int(ex.get("vad_hangover", VAD_HANGOVER)),
        diar_window_s=float(ex.get("diar_window", DIAR_WINDOW_S)),
        diar_hop_s=float(ex.get("diar_hop", DIAR_HOP_S)),
        max_speakers=int(ex.get("max_speakers", MAX_SPEAKERS)),
    )

    co = dict(cp["corpus"]) if cp.has_section("corpus") else {}
    _check_keys("corpus", co, CORPUS_KEYS)
    source = co.get("source", "synthetic")
    if source == "synthetic":
        defaults = SyntheticCorpusSpec()
        spec = SyntheticCorpusSpec(
            n_speakers=int(co.get("speakers", defaults.n_speakers)),
            train_per_speaker=int(co.get("train_per_speaker", defaults.train_per_speaker)),
            eval_per_speaker=int(co.get("eval_per_speaker", defaults.eval_per_speaker)),
            words_per_utterance=int(co.get("words_per_utterance", defaults.words_per_utterance)),
            n_meetings=int(co.get("meetings", defaults.n_meetings)),
            meeting_duration_s=float(co.get("meeting_duration", defaults.meeting_duration_s)),
        )
        corpus_source: object = lambda seed, _spec=spec: synthetic_corpus(seed, _spec)
    elif source == "manifest":
        if "manifest" not in co:
            raise ConfigError("[corpus] source = manifest needs a manifest path")
        corpus_source = load_manifest(base_dir / co["manifest"])
    else:
        raise ConfigError(f"unknown corpus source {source!r}")
    grid = ExperimentGrid(methods, conditions, metrics, seeds)
    return SweepConfig(grid, settings, corpus_source, co)


def write_results(table: ResultsTable, out_dir) -> None:
    """results.csv plus results/{method}/{condition}/{metric}.json (one record per seed)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "results.csv").write_text(table.to_csv())
    cells: dict = {}
    for r in table.rows:
        cells.setdefault((r.method, r.condition, r.metric), []).append(r)
    for (method, cond, metric), rows in cells.items():
        path = out_dir / "results" / _safe(method) / _safe(cond) / f"{metric}.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(ResultsTable(rows).to_json() + "\n")


def _safe(name: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "+-._" else "_" for ch in name)
