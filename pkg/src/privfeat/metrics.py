"""Privacy and utility metrics: WER, EER, MCC, DER and bootstrap intervals."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .seeding import rng_for

DER_COLLAR_S = 0.25
CI_LEVEL = 0.95


class MetricUndefined(ValueError):
    """The metric has no value for this input (e.g. a missing trial class)."""


# ------------------------------------------------------------------ types


@dataclass
class TrialScores:
    scores: np.ndarray
    is_target: np.ndarray
    unit_ids: list = field(default_factory=list)

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.is_target = np.asarray(self.is_target, dtype=bool)
        if self.scores.shape != self.is_target.shape:
            raise ValueError("scores and labels differ in length")
        if not self.unit_ids:
            self.unit_ids = [""] * len(self.scores)

    @classmethod
    def from_entries(cls, entries):
        """Build from (score, "target"|"nontarget", unit_id) triples."""
        entries = list(entries)
        return cls(
            [e[0] for e in entries],
            [e[1] in ("target", True, 1) for e in entries],
            [e[2] if len(e) > 2 else "" for e in entries],
        )


@dataclass
class Segment:
    start: float
    end: float
    speaker: str


@dataclass
class SegmentAnnotation:
    segments: list
    total_duration: float

    def __post_init__(self):
        for s in self.segments:
            if not s.start < s.end:
                raise ValueError(f"segment start {s.start} is not before end {s.end}")
            if s.start < -1e-9 or s.end > self.total_duration + 1e-9:
                raise ValueError(f"segment [{s.start}, {s.end}] lies outside [0, {self.total_duration}]")

    @property
    def speakers(self) -> list:
        return sorted({s.speaker for s in self.segments})

    def speech_regions(self) -> list[tuple[float, float]]:
        """Union of all segments as sorted disjoint intervals."""
        out: list[list[float]] = []
        for s in sorted(self.segments, key=lambda s: s.start):
            if out and s.start <= out[-1][1]:
                out[-1][1] = max(out[-1][1], s.end)
            else:
                out.append([s.start, s.end])
        return [(a, b) for a, b in out]

    def relabel(self, mapping: dict) -> "SegmentAnnotation":
        return SegmentAnnotation(
            [Segment(s.start, s.end, mapping.get(s.speaker, s.speaker)) for s in self.segments],
            self.total_duration,
        )


@dataclass
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn)

    @classmethod
    def from_labels(cls, truth, decision) -> "ConfusionCounts":
        t = np.asarray(truth, dtype=bool)
        d = np.asarray(decision, dtype=bool)
        return cls(
            int(np.sum(t & d)), int(np.sum(~t & d)), int(np.sum(~t & ~d)), int(np.sum(t & ~d))
        )


@dataclass
class Interval:
    point: float
    low: float
    high: float
    level: float = CI_LEVEL
    replicates: int = 0


# --------------------------------------------------------------------- WER


@dataclass
class WerBreakdown:
    substitutions: int
    deletions: int
    insertions: int
    n_ref: int

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    @property
    def wer(self) -> float:
        return self.errors / self.n_ref


def wer(ref: Sequence[str], hyp: Sequence[str]) -> WerBreakdown:
    """Levenshtein alignment with unit costs.

    Among equal-cost alignments the backtrace prefers a substitution (or
    match), then an insertion, then a deletion.
    """
    ref, hyp = list(ref), list(hyp)
    if not ref:
        raise ValueError("reference transcript is empty")
    n, m = len(ref), len(hyp)
    d = np.zeros((n + 1, m + 1), dtype=np.int64)
    d[:, 0] = np.arange(n + 1)
    d[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            sub = d[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1])
            d[i, j] = min(sub, d[i, j - 1] + 1, d[i - 1, j] + 1)
    s = dl = ins = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and d[i, j] == d[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]):
            s += ref[i - 1] != hyp[j - 1]
            i, j = i - 1, j - 1
        elif j > 0 and d[i, j] == d[i, j - 1] + 1:
            ins += 1
            j -= 1
        else:
            dl += 1
            i -= 1
    return WerBreakdown(int(s), dl, ins, n)


def corpus_wer(pairs) -> WerBreakdown:
    """Pool edit counts over (ref, hyp) pairs."""
    s = dl = ins = n = 0
    for ref, hyp in pairs:
        b = wer(ref, hyp)
        s, dl, ins, n = s + b.substitutions, dl + b.deletions, ins + b.insertions, n + b.n_ref
    if n == 0:
        raise ValueError("no reference words")
    return WerBreakdown(s, dl, ins, n)


# --------------------------------------------------------------------- EER


@dataclass
class EerResult:
    eer: float
    threshold: float


def eer(trials: TrialScores) -> EerResult:
    """Equal error rate at the operating point where FAR and FRR are closest.

    Thresholds sweep every distinct score (accept iff score >= threshold)
    plus one threshold above the maximum that rejects everything; the EER is
    the mean of FAR and FRR at the first threshold minimizing |FAR - FRR|.
    Interpolating between points is avoided because tied scores make steps
    of several trials, where no interpolated point is attainable.
    """
    scores, tgt = trials.scores, trials.is_target
    n_t, n_n = int(tgt.sum()), int((~tgt).sum())
    if n_t == 0 or n_n == 0:
        raise MetricUndefined("EER needs at least one target and one nontarget trial")
    t_sorted = np.sort(scores[tgt])
    n_sorted = np.sort(scores[~tgt])
    thr = np.append(np.unique(scores), np.inf)
    frr = np.searchsorted(t_sorted, thr, side="left") / n_t
    far = (n_n - np.searchsorted(n_sorted, thr, side="left")) / n_n
    k = int(np.argmin(np.abs(far - frr)))
    return EerResult(float((far[k] + frr[k]) / 2.0), float(thr[k]))


def weighted_eer(per_subset: Sequence[tuple[float, float]]) -> float:
    """Weighted mean of subset EERs from (eer, weight) pairs."""
    vals = np.asarray([p[0] for p in per_subset], dtype=np.float64)
    w = np.asarray([p[1] for p in per_subset], dtype=np.float64)
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    if w.sum() <= 0:
        raise ValueError("total weight must be positive")
    return float(np.sum(w * vals) / np.sum(w))


# --------------------------------------------------------------------- MCC


def mcc(counts: ConfusionCounts) -> float:
    if counts.total <= 0:
        raise ValueError("no scored frames")
    tp, fp, tn, fn = (float(v) for v in (counts.tp, counts.fp, counts.tn, counts.fn))
    denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    if denom == 0:
        return 0.0
    return (tp * tn - fp * fn) / np.sqrt(denom)


# --------------------------------------------------------------------- DER


@dataclass
class DerBreakdown:
    miss: float
    false_alarm: float
    confusion: float
    scored_speech: float
    mapping: dict = field(default_factory=dict)

    @property
    def der(self) -> float:
        return (self.miss + self.false_alarm + self.confusion) / self.scored_speech


def _activity(ann: SegmentAnnotation, speakers: list, mids: np.ndarray) -> np.ndarray:
    act = np.zeros((len(mids), len(speakers)), dtype=bool)
    col = {s: i for i, s in enumerate(speakers)}
    for seg in ann.segments:
        act[:, col[seg.speaker]] |= (mids >= seg.start) & (mids < seg.end)
    return act


def der(ref: SegmentAnnotation, hyp: SegmentAnnotation, collar_s: float = DER_COLLAR_S) -> DerBreakdown:
    """Diarization error rate with a no-score collar around reference boundaries.

    Speakers are matched one-to-one by maximizing scored overlap (Hungarian
    assignment). Overlapping reference speech counts once per speaker.
    """
    if abs(ref.total_duration - hyp.total_duration) > 1e-6:
        raise ValueError(f"durations differ: {ref.total_duration} vs {hyp.total_duration}")
    total = ref.total_duration
    bounds = sorted({b for s in ref.segments for b in (s.start, s.end)})
    cuts = {0.0, total}
    for s in list(ref.segments) + list(hyp.segments):
        cuts.update((s.start, s.end))
    if collar_s > 0:
        for b in bounds:
            cuts.update((b - collar_s, b + collar_s))
    cuts = np.array(sorted(c for c in cuts if 0.0 <= c <= total))
    dur = np.diff(cuts)
    keep = dur > 0
    mids = ((cuts[:-1] + cuts[1:]) / 2.0)[keep]
    dur = dur[keep]
    if collar_s > 0 and bounds:
        b = np.asarray(bounds)
        near = np.min(np.abs(mids[:, None] - b[None, :]), axis=1) < collar_s
        mids, dur = mids[~near], dur[~near]

    ref_spk, hyp_spk = ref.speakers, hyp.speakers
    R = _activity(ref, ref_spk, mids)
    H = _activity(hyp, hyp_spk, mids)
    n_ref = R.sum(axis=1)
    n_hyp = H.sum(axis=1)
    scored = float(np.sum(n_ref * dur))
    if scored <= 0:
        raise MetricUndefined("no scored reference speech after collar removal")

    mapping: dict = {}
    correct = np.zeros(len(mids))
    if ref_spk and hyp_spk:
        overlap = (R * dur[:, None]).T.astype(np.float64) @ H.astype(np.float64)
        rows, cols = linear_sum_assignment(-overlap)
        for r, c in zip(rows, cols):
            if overlap[r, c] > 0:
                mapping[hyp_spk[c]] = ref_spk[r]
                correct += R[:, r] & H[:, c]
    miss = float(np.sum(np.maximum(n_ref - n_hyp, 0) * dur))
    fa = float(np.sum(np.maximum(n_hyp - n_ref, 0) * dur))
    conf = float(np.sum((np.minimum(n_ref, n_hyp) - correct) * dur))
    return DerBreakdown(miss, fa, conf, scored, mapping)


# --------------------------------------------------------------- bootstrap


def bootstrap_ci(
    metric: Callable[[list], float],
    units: Sequence,
    replicates: int = 1000,
    level: float = CI_LEVEL,
    seed: int = 0,
    max_retries: int = 100,
) -> Interval:
    """Percentile bootstrap over resampled units.

    Each replicate draws len(units) units with replacement using a generator
    derived from (seed, replicate index), so replicates are order-free.
    Replicates on which ``metric`` raises :class:`MetricUndefined` are
    redrawn up to ``max_retries`` times.
    """
    units = list(units)
    if not units:
        raise ValueError("no units to resample")
    if replicates < 100:
        raise ValueError("use at least 100 bootstrap replicates")
    if not 0 < level < 1:
        raise ValueError("level must be in (0, 1)")
    point = float(metric(units))
    n = len(units)
    values = np.empty(replicates)
    for r in range(replicates):
        for attempt in range(max_retries + 1):
            idx = rng_for(seed, "bootstrap", r, attempt).integers(0, n, size=n)
            try:
                values[r] = metric([units[i] for i in idx])
                break
            except MetricUndefined:
                continue
        else:
            raise MetricUndefined(f"metric undefined on replicate {r} after {max_retries} redraws")
    alpha = 1.0 - level
    low, high = np.percentile(values, [100 * alpha / 2, 100 * (1 - alpha / 2)])
    return Interval(point, float(low), float(high), level, replicates)


# -------------------------------------------------------------- file formats


def read_rttm(path, total_duration: float | None = None) -> dict[str, SegmentAnnotation]:
    """Parse RTTM-style lines into one annotation per file id.

    Accepts the standard 10-field SPEAKER lines and the short form
    ``type file channel start duration speaker``.
    """
    per_file: dict[str, list[Segment]] = defaultdict(list)
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        parts = line.split()
        if not parts or parts[0].startswith(("#", ";")):
            continue
        if len(parts) not in (6,) and len(parts) < 8:
            raise ValueError(f"{path}:{lineno}: expected an RTTM line, got {line!r}")
        start, dur = float(parts[3]), float(parts[4])
        speaker = parts[5] if len(parts) == 6 else parts[7]
        if dur <= 0:
            continue
        per_file[parts[1]].append(Segment(start, start + dur, speaker))
    out = {}
    for fid, segs in per_file.items():
        end = max(s.end for s in segs)
        out[fid] = SegmentAnnotation(segs, max(end, total_duration or 0.0))
    return out


def write_rttm(path, annotations: dict[str, SegmentAnnotation]) -> None:
    lines = []
    for fid, ann in annotations.items():
        for s in sorted(ann.segments, key=lambda s: (s.start, s.speaker)):
            lines.append(
                f"SPEAKER {fid} 1 {s.start:.3f} {s.end - s.start:.3f} <NA> <NA> {s.speaker} <NA> <NA>"
            )
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def read_transcripts(path) -> dict[str, list[str]]:
    out = {}
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if parts:
            out[parts[0]] = parts[1:]
    return out


def read_trials(path) -> list[tuple[str, str, bool]]:
    """Lines ``enroll_id test_id target|nontarget``."""
    out = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        parts = line.split()
        if not parts:
            continue
        if len(parts) < 3 or parts[2] not in ("target", "nontarget"):
            raise ValueError(f"{path}:{lineno}: expected 'enroll test target|nontarget'")
        out.append((parts[0], parts[1], parts[2] == "target"))
    return out


def read_scores(path) -> dict[tuple[str, str], float]:
    """Lines ``enroll_id test_id score``."""
    out = {}
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if parts:
            out[(parts[0], parts[1])] = float(parts[2])
    return out
