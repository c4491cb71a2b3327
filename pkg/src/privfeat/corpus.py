"""Recordings, manifests and the bundled synthetic mini-corpus.

The synthetic corpus uses a cascade formant synthesizer: each "speaker" has
its own pitch, vocal-tract scale, bandwidths, glottal tilt and upper formants,
and each "word" is a short trajectory through vowel targets, some with a
fricative onset. Words are placed in utterances separated by pauses, so word
boundaries double as the VAD reference.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np
import scipy.signal

from .audio_core import AudioBuffer, load_audio, write_audio
from .metrics import Segment, SegmentAnnotation, read_rttm, write_rttm
from .seeding import rng_for

FS = 16000
CONTROL_HOP = 80  # 5 ms parameter update interval

VOWELS = {
    "i": (280.0, 2250.0, 2900.0),
    "e": (480.0, 1900.0, 2600.0),
    "ae": (660.0, 1700.0, 2450.0),
    "a": (750.0, 1200.0, 2500.0),
    "o": (500.0, 900.0, 2400.0),
    "u": (320.0, 850.0, 2300.0),
    "er": (480.0, 1350.0, 1700.0),
}
FRICATIVES = {"s": (4000.0, 7500.0), "sh": (2000.0, 4500.0)}

VOCABULARY = {
    "alpha": (("a", 1.0), ("i", 1.0)),
    "bravo": (("u", 0.9), ("a", 0.9), ("o", 1.0)),
    "sierra": (("s", 0.8), ("e", 1.0), ("ae", 1.0)),
    "delta": (("e", 1.0), ("er", 0.9), ("i", 0.8)),
    "shoe": (("sh", 0.8), ("u", 1.2)),
}


@dataclass
class Recording:
    utt_id: str
    audio: AudioBuffer
    speaker_id: str
    tokens: list = field(default_factory=list)
    words: list = field(default_factory=list)  # [(start_s, end_s)] per token
    role: str = ""  # "enroll", "trial" or ""
    subset: str = "all"
    reference: SegmentAnnotation | None = None  # diarization reference for meetings

    def speech_annotation(self) -> SegmentAnnotation:
        """Speech regions as an annotation (VAD reference)."""
        if self.reference is not None:
            return self.reference
        segs = [Segment(a, b, self.speaker_id) for a, b in self.words]
        return SegmentAnnotation(segs, self.audio.duration_seconds)


@dataclass
class Corpus:
    train: list
    eval: list
    meetings: list
    sample_rate: int = FS

    @property
    def duration_seconds(self) -> float:
        return sum(r.audio.duration_seconds for r in self.train + self.eval + self.meetings)

    def to_manifest(self, directory) -> Path:
        """Write WAVs, meeting RTTMs and a JSON-lines manifest; returns the manifest path."""
        directory = Path(directory)
        (directory / "wav").mkdir(parents=True, exist_ok=True)
        lines = []
        for split, recs in (("train", self.train), ("eval", self.eval), ("meeting", self.meetings)):
            for r in recs:
                wav = directory / "wav" / f"{r.utt_id}.wav"
                write_audio(wav, r.audio, subtype="FLOAT")
                rec = {
                    "utt_id": r.utt_id,
                    "path": str(wav.relative_to(directory)),
                    "speaker_id": r.speaker_id,
                    "split": split,
                    "tokens": list(r.tokens),
                    "words": [[round(a, 6), round(b, 6)] for a, b in r.words],
                    "role": r.role,
                    "subset": r.subset,
                }
                if r.reference is not None:
                    rttm = directory / "rttm" / f"{r.utt_id}.rttm"
                    rttm.parent.mkdir(exist_ok=True)
                    write_rttm(rttm, {r.utt_id: r.reference})
                    rec["rttm"] = str(rttm.relative_to(directory))
                lines.append(json.dumps(rec))
        path = directory / "manifest.jsonl"
        path.write_text("\n".join(lines) + "\n")
        return path


MANIFEST_FIELDS = ("utt_id", "path", "speaker_id", "split", "tokens", "words", "role", "subset", "rttm")


def _parse_tsv_record(header: list, line: str) -> dict:
    vals = line.rstrip("\n").split("\t")
    rec = dict(zip(header, vals))
    if "tokens" in rec:
        rec["tokens"] = rec["tokens"].split()
    if rec.get("words"):
        rec["words"] = [[float(x) for x in w.split("-")] for w in rec["words"].split()]
    return rec


def load_manifest(path) -> Corpus:
    """Load a JSON-lines (``.jsonl``) or tab-separated (``.tsv``, header row) manifest.

    Fields: utt_id, path, speaker_id, split (train|eval|meeting), tokens,
    words ([start, end] per token), role (enroll|trial), subset, rttm.
    Paths are resolved relative to the manifest's directory.
    """
    path = Path(path)
    base = path.parent
    text = path.read_text().splitlines()
    if path.suffix == ".tsv":
        header = text[0].split("\t")
        records = [_parse_tsv_record(header, ln) for ln in text[1:] if ln.strip()]
    else:
        records = [json.loads(ln) for ln in text if ln.strip()]
    train, ev, meetings = [], [], []
    for lineno, rec in enumerate(records, 1):
        unknown = set(rec) - set(MANIFEST_FIELDS)
        if unknown:
            raise ValueError(f"{path}: record {lineno} has unknown fields {sorted(unknown)}")
        for key in ("utt_id", "path", "speaker_id"):
            if key not in rec:
                raise ValueError(f"{path}: record {lineno} lacks {key!r}")
        audio = load_audio(base / rec["path"])
        words = [tuple(float(x) for x in w) for w in rec.get("words") or []]
        reference = None
        if rec.get("rttm"):
            anns = read_rttm(base / rec["rttm"], audio.duration_seconds)
            reference = anns.get(rec["utt_id"]) or next(iter(anns.values()))
            reference.total_duration = audio.duration_seconds
        r = Recording(
            rec["utt_id"],
            audio,
            rec["speaker_id"],
            list(rec.get("tokens") or []),
            words,
            rec.get("role", "") or "",
            rec.get("subset", "all") or "all",
            reference,
        )
        split = rec.get("split", "eval")
        {"train": train, "eval": ev, "meeting": meetings}.get(split, ev).append(r)
    return Corpus(train, ev, meetings, train[0].audio.sample_rate if train else FS)


# ------------------------------------------------------------- synthesis


@numba.njit(cache=True)
def _cascade(excitation, freqs, bws, fs, hop):  # pragma: no cover - compiled
    n = excitation.shape[0]
    n_form = freqs.shape[1]
    y1 = np.zeros(n_form)
    y2 = np.zeros(n_form)
    out = np.empty(n)
    for t in range(n):
        c = min(t // hop, freqs.shape[0] - 1)
        x = excitation[t]
        for k in range(n_form):
            r = np.exp(-np.pi * bws[c, k] / fs)
            b1 = 2.0 * r * np.cos(2.0 * np.pi * freqs[c, k] / fs)
            b2 = -r * r
            g = 1.0 - b1 - b2
            y = g * x + b1 * y1[k] + b2 * y2[k]
            y2[k] = y1[k]
            y1[k] = y
            x = y
        out[t] = x
    return out


@dataclass(frozen=True)
class Speaker:
    speaker_id: str
    f0: float
    tract_scale: float
    bw_scale: float
    tilt: float
    f4: float
    f5: float
    breath: float
    rate: float
    level: float

    @property
    def subset(self) -> str:
        return "low" if self.f0 < 160.0 else "high"


def make_speaker(seed: int, index: int) -> Speaker:
    rng = rng_for(seed, "speaker", index)
    low = index % 2 == 0
    return Speaker(
        speaker_id=f"spk{index:02d}",
        f0=float(rng.uniform(85, 150) if low else rng.uniform(170, 250)),
        tract_scale=float(rng.uniform(0.85, 1.18)),
        bw_scale=float(rng.uniform(0.7, 1.5)),
        tilt=float(rng.uniform(0.8, 0.97)),
        f4=float(rng.uniform(3200, 4200)),
        f5=float(rng.uniform(4500, 5600)),
        breath=float(rng.uniform(0.005, 0.06)),
        rate=float(rng.uniform(0.85, 1.2)),
        level=float(rng.uniform(0.25, 0.5)),
    )


def synthesize_word(token: str, spk: Speaker, rng: np.random.Generator, fs: int = FS) -> np.ndarray:
    phones = VOCABULARY[token]
    dur = 0.45 * spk.rate * rng.uniform(0.9, 1.1)
    weights = np.array([w for _, w in phones])
    bounds = np.concatenate([[0.0], np.cumsum(weights / weights.sum())]) * dur
    n = int(dur * fs)
    n_ctrl = n // CONTROL_HOP + 1
    tc = np.arange(n_ctrl) * CONTROL_HOP / fs

    # formant targets at phone centers, linear transitions between them
    centers, targets, voiced_mask = [], [], []
    for (name, _), a, b in zip(phones, bounds[:-1], bounds[1:]):
        centers.append(0.5 * (a + b))
        if name in VOWELS:
            targets.append(VOWELS[name])
            voiced_mask.append(1.0)
        else:
            targets.append(VOWELS["er"])
            voiced_mask.append(0.0)
    centers = np.asarray(centers)
    targets = np.asarray(targets) * spk.tract_scale * rng.uniform(0.97, 1.03)
    f123 = np.stack([np.interp(tc, centers, targets[:, k]) for k in range(3)], axis=1)
    freqs = np.concatenate([f123, np.full((n_ctrl, 1), spk.f4), np.full((n_ctrl, 1), spk.f5)], axis=1)
    freqs = np.minimum(freqs, 0.45 * fs)
    base_bw = np.array([60.0, 90.0, 120.0, 180.0, 250.0])
    bws = np.broadcast_to(base_bw * spk.bw_scale, freqs.shape).copy()

    # voicing gate per sample
    ts = np.arange(n) / fs
    gate = np.zeros(n)
    for (name, _), a, b in zip(phones, bounds[:-1], bounds[1:]):
        if name in VOWELS:
            gate[(ts >= a) & (ts < b)] = 1.0
    gate = np.convolve(gate, np.hanning(int(0.03 * fs)) / (0.015 * fs), mode="same")

    # glottal pulse train with declination and jitter, then spectral tilt
    f0 = spk.f0 * rng.uniform(0.95, 1.05) * (1.08 - 0.16 * ts / dur)
    f0 = f0 * (1.0 + 0.01 * rng.standard_normal(n).cumsum() / np.sqrt(n))
    phase = np.cumsum(f0 / fs)
    pulses = np.diff(np.floor(phase), prepend=0.0)
    glottal = scipy.signal.lfilter([1.0], [1.0, -2 * spk.tilt, spk.tilt**2], pulses)
    glottal = scipy.signal.lfilter([1.0, -1.0], [1.0, -0.995], glottal)
    excitation = glottal * gate
    excitation += spk.breath * rng.standard_normal(n) * gate * np.std(glottal)
    voiced = _cascade(excitation, freqs, bws, float(fs), CONTROL_HOP)
    voiced /= np.max(np.abs(voiced)) + 1e-12

    out = voiced
    for (name, _), a, b in zip(phones, bounds[:-1], bounds[1:]):
        if name in FRICATIVES:
            lo, hi = FRICATIVES[name]
            sos = scipy.signal.butter(4, [lo, min(hi, 0.49 * fs)], btype="band", fs=fs, output="sos")
            noise = scipy.signal.sosfilt(sos, rng.standard_normal(n))
            env = ((ts >= a) & (ts < b)).astype(float)
            env = np.convolve(env, np.hanning(int(0.02 * fs)) / (0.01 * fs), mode="same")
            out = out + 0.35 * noise / (np.max(np.abs(noise)) + 1e-12) * env
    # word-level onset/offset ramps
    ramp = int(0.01 * fs)
    win = np.ones(n)
    win[:ramp] = np.linspace(0, 1, ramp)
    win[-ramp:] = np.linspace(1, 0, ramp)
    return out * win * spk.level * rng.uniform(0.85, 1.15)


DITHER = 1e-4


def synthesize_utterance(
    utt_id: str,
    spk: Speaker,
    tokens: list,
    seed: int,
    fs: int = FS,
    pause=(0.2, 0.6),
    edge=(0.25, 0.4),
) -> Recording:
    rng = rng_for(seed, "utterance", utt_id)
    pieces = [np.zeros(int(rng.uniform(*edge) * fs))]
    cursor = len(pieces[0])
    words = []
    for i, tok in enumerate(tokens):
        if i:
            gap = np.zeros(int(rng.uniform(*pause) * fs))
            pieces.append(gap)
            cursor += len(gap)
        w = synthesize_word(tok, spk, rng, fs)
        words.append((cursor / fs, (cursor + len(w)) / fs))
        pieces.append(w)
        cursor += len(w)
    pieces.append(np.zeros(int(rng.uniform(*edge) * fs)))
    x = np.concatenate(pieces)
    x = x + DITHER * rng.standard_normal(len(x))
    return Recording(utt_id, AudioBuffer(x, fs), spk.speaker_id, list(tokens), words, subset=spk.subset)


def synthesize_meeting(meeting_id: str, speakers: list, seed: int, min_duration_s: float, fs: int = FS) -> Recording:
    rng = rng_for(seed, "meeting", meeting_id)
    vocab = sorted(VOCABULARY)
    pieces = [np.zeros(int(0.3 * fs))]
    cursor = len(pieces[0])
    segments = []
    prev = None
    while cursor / fs < min_duration_s:
        choices = [s for s in speakers if s is not prev] if len(speakers) > 1 else speakers
        spk = choices[int(rng.integers(len(choices)))]
        prev = spk
        n_words = int(rng.integers(3, 7))
        toks = [vocab[int(rng.integers(len(vocab)))] for _ in range(n_words)]
        turn_start = cursor
        for i, tok in enumerate(toks):
            if i:
                gap = np.zeros(int(rng.uniform(0.08, 0.2) * fs))
                pieces.append(gap)
                cursor += len(gap)
            w = synthesize_word(tok, spk, rng, fs)
            pieces.append(w)
            cursor += len(w)
        segments.append(Segment(turn_start / fs, cursor / fs, spk.speaker_id))
        gap = np.zeros(int(rng.uniform(0.25, 0.6) * fs))
        pieces.append(gap)
        cursor += len(gap)
    x = np.concatenate(pieces)
    x = x + DITHER * rng.standard_normal(len(x))
    ref = SegmentAnnotation(segments, len(x) / fs)
    return Recording(meeting_id, AudioBuffer(x, fs), "+".join(s.speaker_id for s in speakers), reference=ref)


@dataclass(frozen=True)
class SyntheticCorpusSpec:
    n_speakers: int = 10
    train_per_speaker: int = 2
    eval_per_speaker: int = 5
    words_per_utterance: int = 4
    n_meetings: int = 3
    meeting_speakers: tuple = (2, 3, 2)
    meeting_duration_s: float = 20.0


def synthetic_corpus(seed: int, spec: SyntheticCorpusSpec = SyntheticCorpusSpec()) -> Corpus:
    """Generate the ~5 minute mini-corpus: train/eval utterances plus meetings.

    Meetings use their own speakers, disjoint from the utterance speakers.
    The first eval utterance of each speaker is its ASV enrollment; the rest
    are trials.
    """
    vocab = sorted(VOCABULARY)
    speakers = [make_speaker(seed, i) for i in range(spec.n_speakers)]
    train, ev = [], []
    for spk in speakers:
        for j in range(spec.train_per_speaker + spec.eval_per_speaker):
            is_train = j < spec.train_per_speaker
            utt_id = f"{spk.speaker_id}_{'tr' if is_train else 'ev'}{j:02d}"
            rng = rng_for(seed, "tokens", utt_id)
            toks = [vocab[int(rng.integers(len(vocab)))] for _ in range(spec.words_per_utterance)]
            rec = synthesize_utterance(utt_id, spk, toks, seed)
            if is_train:
                train.append(rec)
            else:
                rec.role = "enroll" if j == spec.train_per_speaker else "trial"
                ev.append(rec)
    meetings = []
    for m in range(spec.n_meetings):
        k = spec.meeting_speakers[m % len(spec.meeting_speakers)]
        spk = [make_speaker(seed, 100 + 10 * m + i) for i in range(k)]
        meetings.append(synthesize_meeting(f"meet{m:02d}", spk, seed, spec.meeting_duration_s))
    return Corpus(train, ev, meetings)
