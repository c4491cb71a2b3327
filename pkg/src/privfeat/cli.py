"""``privfeat`` command line: featurize, anonymize, augment, score, sweep, report.

Exit status is 0 on success, 1 on usage errors and 2 on data errors
(unreadable or malformed inputs, undefined metrics, bad configs).
"""

from __future__ import annotations

import json
import logging
import sys
import time
from pathlib import Path

import click

from . import __version__
from .audio_core import AudioError, features_to_json, load_audio, save_features, write_audio
from .augmentation import NOISE_KINDS, NoiseSpec, RirSpec, convolve_rir, load_rir, mix_noise, synthesize_rir
from .experiment import ResultsTable, parse_sweep_config, run_sweep, write_results
from .metrics import (
    DER_COLLAR_S,
    ConfusionCounts,
    MetricUndefined,
    SegmentAnnotation,
    TrialScores,
    corpus_wer,
    der,
    eer,
    mcc,
    read_rttm,
    read_scores,
    read_transcripts,
    read_trials,
)
from .report import FORMATS, emit_report, summary_lines
from .transforms import ConfigError, config_from_mapping, featurize, mcadams_anonymize, parse_method

log = logging.getLogger("privfeat")

DATA_ERRORS = (AudioError, ConfigError, MetricUndefined, ValueError, KeyError, OSError)


class JsonLineFormatter(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        rec = {
            "ts": round(record.created, 3),
            "level": record.levelname.lower(),
            "logger": record.name,
            "msg": record.getMessage(),
        }
        extra = getattr(record, "fields", None)
        if extra:
            rec.update(extra)
        return json.dumps(rec)


def _setup_logging(level: str) -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(JsonLineFormatter())
    root = logging.getLogger("privfeat")
    root.handlers[:] = [handler]
    root.setLevel(level.upper())
    root.propagate = False


@click.group()
@click.version_option(__version__, prog_name="privfeat")
@click.option("--log-level", default="warning", type=click.Choice(["debug", "info", "warning", "error"]))
def cli(log_level):
    """Privacy-preserving speech features under noise and reverberation."""
    _setup_logging(log_level)


# ------------------------------------------------------------------ featurize


def _config_from_options(method, n_mels, tau_ms, mcadams_range, policy, coeff, seed, config_file):
    if config_file is not None:
        import configparser

        cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        cp.optionxform = str
        cp.read_string(Path(config_file).read_text())
        sections = cp.sections()
        if len(sections) != 1:
            raise ConfigError(f"{config_file}: expected exactly one method section, found {len(sections)}")
        return config_from_mapping(dict(cp[sections[0]]), name=sections[0])
    overrides = {}
    if n_mels is not None:
        overrides["n_mels"] = n_mels
    if tau_ms is not None:
        overrides["tau_ms"] = tau_ms
    if mcadams_range is not None:
        overrides["mcadams_range"] = tuple(mcadams_range)
    if policy is not None:
        overrides["mcadams_policy"] = policy
    if coeff is not None:
        overrides["mcadams_coeff"] = coeff
        overrides.setdefault("mcadams_policy", "fixed")
    overrides["seed"] = seed
    return parse_method(method, **overrides)


@cli.command("featurize")
@click.argument("inputs", nargs=-1, required=True, type=click.Path(dir_okay=False))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False), help="Output directory.")
@click.option("--method", default="baseline", show_default=True, help="e.g. mel10, tau250, mcadams+tau125, lowfreq.")
@click.option("--n-mels", type=int)
@click.option("--tau-ms", type=float)
@click.option("--mcadams-range", type=float, nargs=2)
@click.option("--policy", type=click.Choice(["per_utterance", "per_speaker", "fixed"]))
@click.option("--coeff", type=float, help="Fixed McAdams coefficient.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--speaker", "speaker_id", default="", help="Speaker key for the per_speaker policy.")
@click.option("--config", "config_file", type=click.Path(exists=True, dir_okay=False), help="Method section file.")
@click.option("--format", "fmt", type=click.Choice(["avf", "json"]), default="avf", show_default=True)
def featurize_cmd(inputs, out_dir, method, n_mels, tau_ms, mcadams_range, policy, coeff, seed, speaker_id, config_file, fmt):
    """Compute log-Mel features of WAV files under a privacy method."""
    cfg = _config_from_options(method, n_mels, tau_ms, mcadams_range, policy, coeff, seed, config_file)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for path in inputs:
        fm = featurize(load_audio(path), cfg, utt_id=Path(path).stem, speaker_id=speaker_id)
        target = out / (Path(path).stem + (".avf" if fmt == "avf" else ".json"))
        if fmt == "avf":
            save_features(target, fm)
        else:
            target.write_text(features_to_json(fm))
        log.info("featurized", extra={"fields": {"input": str(path), "output": str(target), "frames": fm.features.shape[0]}})
        click.echo(str(target))


# ------------------------------------------------------------------ anonymize


@cli.command()
@click.argument("input_wav", type=click.Path(dir_okay=False))
@click.argument("output_wav", type=click.Path(dir_okay=False))
@click.option("--coeff", type=float, help="Fixed McAdams coefficient; otherwise drawn from --range.")
@click.option("--range", "mcadams_range", type=float, nargs=2, default=(0.5, 0.9), show_default=True)
@click.option("--policy", type=click.Choice(["per_utterance", "per_speaker"]), default="per_utterance", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--speaker", "speaker_id", default="")
def anonymize(input_wav, output_wav, coeff, mcadams_range, policy, seed, speaker_id):
    """Shift formants of a WAV file with the McAdams transformation."""
    audio = load_audio(input_wav)
    if coeff is not None:
        out = mcadams_anonymize(audio, coeff=coeff)
    else:
        cfg = parse_method("mcadams", mcadams_range=tuple(mcadams_range), mcadams_policy=policy, seed=seed)
        out = mcadams_anonymize(audio, cfg, utt_id=Path(input_wav).stem, speaker_id=speaker_id)
    write_audio(output_wav, out)


# -------------------------------------------------------------------- augment


@cli.command()
@click.argument("input_wav", type=click.Path(dir_okay=False))
@click.argument("output_wav", type=click.Path(dir_okay=False))
@click.option("--snr", "snr_db", type=float, help="Add noise at this SNR in dB.")
@click.option("--noise", default="pink", show_default=True, help=f"{'/'.join(NOISE_KINDS)} or a noise WAV.")
@click.option("--rt60", type=float, help="Convolve with an RIR of this reverberation time in s.")
@click.option("--rir", default="synthetic", show_default=True, help="'synthetic' or an RIR WAV.")
@click.option("--drr-db", type=float, help="Direct-to-reverberant ratio of the synthetic RIR.")
@click.option("--seed", type=int, default=0, show_default=True)
def augment(input_wav, output_wav, snr_db, noise, rt60, rir, drr_db, seed):
    """Degrade a WAV file with additive noise or reverberation."""
    if (snr_db is None) == (rt60 is None):
        raise click.UsageError("give exactly one of --snr or --rt60")
    audio = load_audio(input_wav)
    if snr_db is not None:
        out = mix_noise(audio, NoiseSpec(noise, snr_db, seed), key=Path(input_wav).stem).audio
    else:
        if rir == "synthetic":
            h = synthesize_rir(RirSpec(rt60_s=rt60, seed=seed, sample_rate=audio.sample_rate, drr_db=drr_db))
        else:
            h = load_rir(rir)
        out = convolve_rir(audio, h)
    write_audio(output_wav, out, subtype="FLOAT")


# ---------------------------------------------------------------------- score


def _read_labels(path) -> dict[str, list[int]]:
    out = {}
    for utt, toks in read_transcripts(path).items():
        try:
            out[utt] = [int(t) for t in toks]
        except ValueError as exc:
            raise ValueError(f"{path}: labels for {utt!r} must be 0/1") from exc
    return out


def score_files(metric: str, ref: str, hyp: str, collar: float = DER_COLLAR_S) -> float:
    if metric == "wer":
        r, h = read_transcripts(ref), read_transcripts(hyp)
        extra = sorted(set(h) - set(r))
        if extra:
            raise ValueError(f"hypothesis ids missing from the reference: {', '.join(extra[:5])}")
        return corpus_wer([(r[u], h.get(u, [])) for u in r]).wer
    if metric == "eer":
        trials, scores = read_trials(ref), read_scores(hyp)
        missing = [(e, t) for e, t, _ in trials if (e, t) not in scores]
        if missing:
            raise KeyError(f"no score for trial {missing[0]}")
        return eer(TrialScores([scores[(e, t)] for e, t, _ in trials], [lab for _, _, lab in trials])).eer
    if metric == "mcc":
        r, h = _read_labels(ref), _read_labels(hyp)
        counts = ConfusionCounts()
        for utt, lab in r.items():
            if utt not in h or len(h[utt]) != len(lab):
                raise ValueError(f"hypothesis labels for {utt!r} missing or of the wrong length")
            counts = counts + ConfusionCounts.from_labels(lab, h[utt])
        return mcc(counts)
    if metric == "der":
        r, h = read_rttm(ref), read_rttm(hyp)
        miss = fa = conf = total = 0.0
        for fid, ann in r.items():
            hyp_ann = h.get(fid) or SegmentAnnotation([], ann.total_duration)
            # RTTM files carry no recording length; score both over the longer span
            span = max(ann.total_duration, hyp_ann.total_duration)
            ann = SegmentAnnotation(ann.segments, span)
            hyp_ann = SegmentAnnotation(hyp_ann.segments, span)
            b = der(ann, hyp_ann, collar)
            miss, fa, conf, total = miss + b.miss, fa + b.false_alarm, conf + b.confusion, total + b.scored_speech
        if total <= 0:
            raise MetricUndefined("no scored reference speech")
        return (miss + fa + conf) / total
    raise click.UsageError(f"unknown metric {metric!r}")


@cli.command()
@click.option("--metric", required=True, type=click.Choice(["wer", "eer", "mcc", "der"]))
@click.option("--ref", required=True, type=click.Path(dir_okay=False), help="Transcripts, trials, labels or RTTM.")
@click.option("--hyp", required=True, type=click.Path(dir_okay=False), help="Transcripts, scores, labels or RTTM.")
@click.option("--collar", type=float, default=DER_COLLAR_S, show_default=True, help="DER collar in s.")
def score(metric, ref, hyp, collar):
    """Score a hypothesis file against a reference file and print the value."""
    click.echo(repr(float(score_files(metric, ref, hyp, collar))))


# ---------------------------------------------------------------------- sweep


@cli.command()
@click.option("--config", "config_file", required=True, type=click.Path(dir_okay=False))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--figures/--no-figures", default=True, show_default=True)
def sweep(config_file, out_dir, figures):
    """Run the method x condition grid of a config file and write results."""
    path = Path(config_file)
    cfg = parse_sweep_config(path.read_text(), base_dir=path.parent)
    start = time.time()
    table = run_sweep(
        cfg.grid,
        cfg.corpus_source,
        cfg.settings,
        progress=lambda msg: log.info("cell done", extra={"fields": {"cell": msg}}),
    )
    write_results(table, out_dir)
    emit_report(table, "plotdata", out_dir, figures=figures)
    failed = sum(r.status != "ok" for r in table.rows)
    log.info("sweep finished", extra={"fields": {"rows": len(table.rows), "failed": failed, "seconds": round(time.time() - start, 2)}})
    for line in summary_lines(table):
        click.echo(line)


# --------------------------------------------------------------------- report


@cli.command()
@click.argument("table_path", type=click.Path(dir_okay=False))
@click.option("--format", "fmt", type=click.Choice(FORMATS), default="plotdata", show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--figures/--no-figures", default=True, show_default=True)
def report(table_path, fmt, out_dir, figures):
    """Convert a results.csv or results.json table to csv, json or plot data (+ figures)."""
    text = Path(table_path).read_text()
    table = ResultsTable.from_json(text) if table_path.endswith(".json") else ResultsTable.from_csv(text)
    for p in emit_report(table, fmt, out_dir, figures=figures):
        click.echo(str(p))


# ----------------------------------------------------------------------- main


def main(argv=None) -> int:
    try:
        cli.main(args=argv, prog_name="privfeat", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 1
    except click.UsageError as exc:
        exc.show()
        return 1
    except click.ClickException as exc:
        exc.show()
        return 2
    except DATA_ERRORS as exc:
        click.echo(f"error: {exc}", err=True)
        return 2
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
