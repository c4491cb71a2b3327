"""Classical stand-ins for the ASR, ASV, VAD and diarization models.

Energy thresholding replaces the neural VAD, mean/std statistics pooling
replaces the speaker encoder, spectral clustering of window embeddings does
diarization, and isolated-word DTW template matching does recognition.
An :class:`AttackerModel` bundles everything an evaluator fits on data.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np
import scipy.fft
from scipy.special import logsumexp
from sklearn.cluster import KMeans

from .audio_core import FeatureMatrix
from .metrics import ConfusionCounts, Segment, SegmentAnnotation, TrialScores, mcc
from .transforms import TransformConfig, featurize

VAD_HANGOVER = 2
VAD_THRESHOLDS_DB = np.arange(0.0, 40.5, 0.5)
DIAR_WINDOW_S = 1.5
DIAR_HOP_S = 0.75
MAX_SPEAKERS = 8
DIAR_KEEP = 0.5  # fraction of neighbours kept per row of the affinity
WCCN_RIDGE = 1e-2
RECOG_CEPS = 12  # cepstral coefficients c1..c12 for template matching


# ---------------------------------------------------------------------- VAD


def frame_energy(features: FeatureMatrix) -> np.ndarray:
    """Log of the summed Mel energies per frame."""
    return logsumexp(features.features, axis=1)


def energy_vad(
    features: FeatureMatrix | np.ndarray, threshold_db: float, hangover_frames: int = VAD_HANGOVER
) -> np.ndarray:
    """Frames more than ``threshold_db`` above the 10th-percentile energy are speech.

    Each positive frame also marks the following ``hangover_frames`` frames.
    ``features`` may also be a precomputed :func:`frame_energy` vector.
    """
    e = frame_energy(features) if isinstance(features, FeatureMatrix) else np.asarray(features)
    if e.size == 0:
        return np.zeros(0, dtype=bool)
    floor = np.percentile(e, 10)
    speech = e > floor + threshold_db / 10.0 * np.log(10.0)
    if hangover_frames > 0:
        out = speech.copy()
        for k in range(1, hangover_frames + 1):
            out[k:] |= speech[:-k]
        speech = out
    return speech


def frame_labels(features: FeatureMatrix, regions) -> np.ndarray:
    """Ground-truth speech flag per frame: frame center inside any (start, end) region."""
    t = features.frame_times()
    lab = np.zeros(t.size, dtype=bool)
    for a, b in regions:
        lab |= (t >= a) & (t < b)
    return lab


def calibrate_vad(pairs, hangover_frames: int = VAD_HANGOVER, grid=VAD_THRESHOLDS_DB) -> float:
    """Threshold (dB) maximizing pooled MCC over (features, frame labels) pairs."""
    best, best_thr = -np.inf, float(grid[0])
    energies = [(frame_energy(fm), lab) for fm, lab in pairs]
    for thr in grid:
        counts = ConfusionCounts()
        for e, lab in energies:
            counts = counts + ConfusionCounts.from_labels(lab, energy_vad(e, thr, hangover_frames))
        score = mcc(counts)
        if score > best + 1e-12:
            best, best_thr = score, float(thr)
    return best_thr


# ---------------------------------------------------------------- embeddings


def embed(features: FeatureMatrix | np.ndarray) -> np.ndarray:
    """Per-coefficient mean and standard deviation over frames, unit-normalized."""
    x = features.features if isinstance(features, FeatureMatrix) else np.asarray(features)
    if x.shape[0] == 0:
        raise ValueError("cannot embed an empty feature matrix")
    mu = x.mean(axis=0)
    sd = x.std(axis=0) if x.shape[0] > 1 else np.zeros_like(mu)
    v = np.concatenate([mu, sd])
    norm = np.linalg.norm(v)
    return v / norm if norm > 0 else v


@dataclass
class EmbeddingStats:
    """Centering plus within-class covariance normalization (WCCN) from labelled training embeddings.

    ``transform`` is W^-1/2 where W is the average within-speaker scatter,
    ridge-regularized by ``ridge * trace(W) / dim``. Without speaker labels
    only the mean is learned.
    """

    mean: np.ndarray | None = None
    transform: np.ndarray | None = None

    def apply(self, v: np.ndarray) -> np.ndarray:
        if self.mean is None:
            return v
        w = v - self.mean
        if self.transform is not None:
            w = w @ self.transform.T
        n = np.linalg.norm(w, axis=-1, keepdims=True)
        return np.where(n > 0, w / np.where(n > 0, n, 1.0), w)

    @classmethod
    def fit(cls, embeddings, speakers=None, ridge: float = WCCN_RIDGE) -> "EmbeddingStats":
        e = np.asarray(list(embeddings), dtype=np.float64)
        if len(e) == 0:
            return cls()
        mean = e.mean(axis=0)
        if speakers is None:
            return cls(mean)
        spk = np.asarray(list(speakers))
        if spk.shape[0] != e.shape[0]:
            raise ValueError("one speaker label per embedding is required")
        scatter = np.zeros((e.shape[1], e.shape[1]))
        for s in np.unique(spk):
            d = e[spk == s] - e[spk == s].mean(axis=0)
            scatter += d.T @ d
        scatter /= len(e)
        scatter += (ridge * np.trace(scatter) / len(scatter) + 1e-12) * np.eye(len(scatter))
        vals, vecs = np.linalg.eigh(scatter)
        return cls(mean, (vecs / np.sqrt(vals)) @ vecs.T)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def score_trials(trials, embeddings: dict, unit_of=None) -> TrialScores:
    """Cosine-score (enroll_id, test_id, is_target) trials against an id -> embedding map."""
    scores, labels, units = [], [], []
    for enroll, test, target in trials:
        if enroll not in embeddings or test not in embeddings:
            missing = enroll if enroll not in embeddings else test
            raise KeyError(f"no embedding for {missing!r}")
        scores.append(cosine(embeddings[enroll], embeddings[test]))
        labels.append(bool(target))
        units.append(unit_of(enroll) if unit_of else enroll)
    return TrialScores(scores, labels, units)


# --------------------------------------------------------------- diarization


def _windows(regions, window_s: float, hop_s: float):
    out = []
    for a, b in regions:
        if b - a <= window_s:
            out.append((a, b))
            continue
        s = a
        while s + window_s < b:
            out.append((s, s + window_s))
            s += hop_s
        out.append((b - window_s, b))
    return out


def prune_affinity(affinity: np.ndarray, keep: float) -> np.ndarray:
    """Keep the top ``keep`` fraction of each row, then symmetrize."""
    if not 0 < keep <= 1:
        raise ValueError("keep must be in (0, 1]")
    n = affinity.shape[0]
    m = max(1, int(round(keep * n)))
    out = np.zeros_like(affinity)
    idx = np.argsort(affinity, axis=1)[:, ::-1][:, :m]
    rows = np.arange(n)[:, None]
    out[rows, idx] = affinity[rows, idx]
    return 0.5 * (out + out.T)


def estimate_speaker_count(affinity: np.ndarray, max_speakers: int) -> tuple[int, np.ndarray, np.ndarray]:
    """Largest-eigengap count on the unnormalized Laplacian; also returns its eigenpairs."""
    lap = np.diag(affinity.sum(axis=1)) - affinity
    vals, vecs = np.linalg.eigh(lap)
    kmax = min(max_speakers, len(vals) - 1)
    if kmax < 1:
        return 1, vals, vecs
    gaps = np.diff(vals[: kmax + 1])
    return int(np.argmax(gaps)) + 1, vals, vecs


def diarize(
    features: FeatureMatrix,
    oracle_vad: SegmentAnnotation,
    window_s: float = DIAR_WINDOW_S,
    hop_s: float = DIAR_HOP_S,
    max_speakers: int = MAX_SPEAKERS,
    stats: EmbeddingStats | None = None,
    seed: int = 0,
    keep: float = DIAR_KEEP,
) -> SegmentAnnotation:
    """Spectral clustering of sliding-window embeddings inside oracle speech regions.

    The speaker count comes from the largest eigengap of the unnormalized
    graph Laplacian of the (nonnegative) cosine affinity, after keeping only
    the ``keep`` fraction of strongest neighbours per row. Each instant is
    labelled by the window whose center is closest.
    """
    if not window_s > hop_s > 0:
        raise ValueError("need window_s > hop_s > 0")
    regions = oracle_vad.speech_regions()
    if not regions:
        raise ValueError("oracle VAD contains no speech")
    stats = stats or EmbeddingStats()
    wins, embs = [], []
    for a, b in _windows(regions, window_s, hop_s):
        x = features.frames_in(a, b)
        if x.shape[0] >= 1:
            wins.append((a, b))
            embs.append(stats.apply(embed(x)))
    total = oracle_vad.total_duration
    if len(wins) < 2:
        return SegmentAnnotation([Segment(a, b, "S0") for a, b in regions], total)

    E = np.asarray(embs)
    norms = np.linalg.norm(E, axis=1, keepdims=True)
    E = E / np.where(norms > 0, norms, 1.0)
    affinity = np.clip(E @ E.T, 0.0, None)
    np.fill_diagonal(affinity, 0.0)
    affinity = prune_affinity(affinity, keep)
    k, vals, vecs = estimate_speaker_count(affinity, max_speakers)
    if k == 1:
        labels = np.zeros(len(wins), dtype=int)
    else:
        spectral = vecs[:, :k]
        labels = KMeans(n_clusters=k, n_init=10, random_state=seed).fit_predict(spectral)

    centers = np.array([(a + b) / 2.0 for a, b in wins])
    segments = []
    for a, b in regions:
        inside = np.flatnonzero([(wa < b and wb > a) for wa, wb in wins])
        if inside.size == 0:
            continue
        cs = centers[inside]
        order = np.argsort(cs)
        inside, cs = inside[order], cs[order]
        cuts = np.concatenate([[a], (cs[:-1] + cs[1:]) / 2.0, [b]])
        for i, w in enumerate(inside):
            lo, hi = max(cuts[i], a), min(cuts[i + 1], b)
            if hi <= lo:
                continue
            lab = f"S{labels[w]}"
            if segments and segments[-1].speaker == lab and abs(segments[-1].end - lo) < 1e-9:
                segments[-1].end = hi
            else:
                segments.append(Segment(lo, hi, lab))
    return SegmentAnnotation(segments, total)


# ---------------------------------------------------------------------- DTW


def pairwise_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Euclidean distances between the rows of ``a`` and ``b``."""
    sq = np.sum(a * a, axis=1)[:, None] + np.sum(b * b, axis=1)[None, :] - 2.0 * (a @ b.T)
    return np.sqrt(np.maximum(sq, 0.0))


@numba.njit(cache=True)
def _dtw_columns(cost, offsets):  # pragma: no cover - compiled
    """DTW over the column blocks cost[:, offsets[t]:offsets[t + 1]], one distance per block.

    Steps (i-1, j-1), (i-1, j) and (i, j-1) weighted 2, 1 and 1; the path
    cost is normalized by n + m.
    """
    n = cost.shape[0]
    out = np.empty(offsets.shape[0] - 1)
    for t in range(offsets.shape[0] - 1):
        lo = offsets[t]
        m = offsets[t + 1] - lo
        prev = np.full(m + 1, np.inf)
        cur = np.full(m + 1, np.inf)
        prev[0] = 0.0
        for i in range(1, n + 1):
            cur[0] = np.inf
            for j in range(1, m + 1):
                c = cost[i - 1, lo + j - 1]
                best = prev[j - 1] + 2.0 * c
                v = prev[j] + c
                if v < best:
                    best = v
                v = cur[j - 1] + c
                if v < best:
                    best = v
                cur[j] = best
            for j in range(m + 1):
                prev[j] = cur[j]
            prev[0] = np.inf
        out[t] = prev[m] / (n + m)
    return out


def dtw_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Symmetric-step DTW with Euclidean local cost, normalized by len(a) + len(b)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ValueError("DTW needs non-empty sequences")
    cost = np.ascontiguousarray(pairwise_distances(a, b))
    return float(_dtw_columns(cost, np.array([0, b.shape[0]], dtype=np.int64))[0])


def cepstra(x: np.ndarray, n_ceps: int = RECOG_CEPS) -> np.ndarray:
    """DCT-II of log-Mel frames keeping c1..c_n_ceps (c0, the overall level, is dropped).

    Truncation smooths away pitch harmonics that 80-band log-Mel frames
    still resolve; with fewer bands than ``n_ceps`` + 1 all of c1.. are kept.
    """
    x = np.asarray(x, dtype=np.float64)
    c = scipy.fft.dct(x, type=2, norm="ortho", axis=-1)
    return np.ascontiguousarray(c[..., 1 : n_ceps + 1])


def word_cepstra(features: FeatureMatrix, boundaries, cmn: bool = True) -> list[np.ndarray]:
    """Cepstra of each word segment, less the mean over all word frames of the recording (CMN).

    Mean normalization removes the fixed spectral colouring of a speaker or
    channel, which otherwise dominates differences between vowels.
    """
    segs = [cepstra(features.frames_in(a, b)) for a, b in boundaries]
    frames = [x for x in segs if x.shape[0]]
    if cmn and frames:
        mu = np.concatenate(frames).mean(axis=0)
        segs = [x - mu for x in segs]
    return segs


@dataclass
class WordTemplate:
    token: str
    features: np.ndarray

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        if self.features.shape[0] == 0:
            raise ValueError(f"template for {self.token!r} is empty")


def dtw_recognize(features: FeatureMatrix, boundaries, templates) -> list[str]:
    """Label each word segment with the token of its nearest template under DTW.

    Segments are compared as mean-normalized cepstra (:func:`word_cepstra`);
    templates are expected to hold the same, as built by :func:`fit_attacker`.
    """
    if not templates:
        raise ValueError("no templates")
    bank = np.concatenate([t.features for t in templates])
    offsets = np.concatenate([[0], np.cumsum([t.features.shape[0] for t in templates])]).astype(np.int64)
    out = []
    for (a, b), seg in zip(boundaries, word_cepstra(features, boundaries)):
        if seg.shape[0] == 0:
            raise ValueError(f"word segment [{a}, {b}] contains no frames")
        dists = _dtw_columns(np.ascontiguousarray(pairwise_distances(seg, bank)), offsets)
        out.append(templates[int(np.argmin(dists))].token)
    return out


# ------------------------------------------------------------------ attacker


def method_signature(cfg: TransformConfig) -> tuple:
    """What a semi-informed attacker knows: the method and its parameters, not the random draws."""
    return (
        cfg.mcadams,
        cfg.lowfreq,
        cfg.n_mels,
        cfg.tau_ms,
        cfg.smoothing_hop_ms,
        cfg.mcadams_range,
        cfg.lowfreq_rate,
    )


class AttackerMismatch(ValueError):
    """An attacker model was applied to features from a method it was not fitted on."""


@dataclass
class AttackerModel:
    templates: list
    vad_threshold: float
    embedding_stats: EmbeddingStats
    fitted_on: TransformConfig
    hangover_frames: int = VAD_HANGOVER
    info: dict = field(default_factory=dict)

    def check(self, cfg: TransformConfig) -> None:
        if method_signature(cfg) != method_signature(self.fitted_on):
            raise AttackerMismatch(
                f"attacker fitted on {self.fitted_on.name!r} cannot score features from {cfg.name!r}"
            )


def fit_attacker(train, cfg: TransformConfig, hangover_frames: int = VAD_HANGOVER, featurizer=None) -> AttackerModel:
    """Re-fit every proxy on training recordings processed with ``cfg``.

    Templates are the training words (as mean-normalized cepstra), the VAD threshold is re-calibrated and
    the embedding normalization re-estimated on the transformed data. The
    normalization is fitted on whole-utterance embeddings and on
    diarization-sized windows so it serves both ASV and diarization.
    """
    train = list(train)
    if not train:
        raise ValueError("empty training manifest")
    featurizer = featurizer or (lambda rec, c: featurize(rec.audio, c, rec.utt_id, rec.speaker_id))
    templates, vad_pairs, embs, spks = [], [], [], []
    for rec in train:
        fm = featurizer(rec, cfg)
        for tok, seg in zip(rec.tokens, word_cepstra(fm, rec.words)):
            if seg.shape[0]:
                templates.append(WordTemplate(tok, seg))
        regions = rec.words if rec.words else rec.speech_annotation().speech_regions()
        vad_pairs.append((fm, frame_labels(fm, regions)))
        embs.append(embed(fm))
        spks.append(rec.speaker_id)
        span = [(regions[0][0], regions[-1][1])] if regions else []
        for a, b in _windows(span, DIAR_WINDOW_S, DIAR_HOP_S):
            x = fm.frames_in(a, b)
            if x.shape[0]:
                embs.append(embed(x))
                spks.append(rec.speaker_id)
    thr = calibrate_vad(vad_pairs, hangover_frames)
    stats = EmbeddingStats.fit(embs, spks)
    return AttackerModel(templates, thr, stats, cfg, hangover_frames)
