import numpy as np
import pytest

from privfeat.corpus import (
    VOCABULARY,
    SyntheticCorpusSpec,
    load_manifest,
    make_speaker,
    synthesize_meeting,
    synthesize_utterance,
    synthetic_corpus,
)

SMALL = SyntheticCorpusSpec(
    n_speakers=4, train_per_speaker=1, eval_per_speaker=2, words_per_utterance=2, n_meetings=1, meeting_duration_s=6
)


def test_default_corpus_shape():
    c = synthetic_corpus(0)
    assert len({r.speaker_id for r in c.train + c.eval}) == 10
    assert len(VOCABULARY) == 5
    assert 4.5 * 60 < c.duration_seconds < 6 * 60
    assert len(c.meetings) == 3
    assert [len(m.reference.speakers) for m in c.meetings] == [2, 3, 2]
    enrolls = [r for r in c.eval if r.role == "enroll"]
    assert len(enrolls) == 10
    assert {r.subset for r in c.eval} == {"low", "high"}


def test_corpus_is_deterministic():
    a, b = synthetic_corpus(3, SMALL), synthetic_corpus(3, SMALL)
    for x, y in zip(a.train + a.eval + a.meetings, b.train + b.eval + b.meetings):
        assert np.array_equal(x.audio.samples, y.audio.samples)
    c = synthetic_corpus(4, SMALL)
    assert not np.array_equal(a.train[0].audio.samples, c.train[0].audio.samples)


def test_meeting_speakers_are_disjoint():
    c = synthetic_corpus(1, SMALL)
    utt_spk = {r.speaker_id for r in c.train + c.eval}
    assert not utt_spk & set(c.meetings[0].reference.speakers)


def test_word_boundaries_are_inside_audio():
    spk = make_speaker(0, 1)
    rec = synthesize_utterance("u", spk, ["alpha", "shoe", "delta"], seed=0)
    assert len(rec.words) == 3
    dur = rec.audio.duration_seconds
    for (a, b), (c, _) in zip(rec.words, rec.words[1:] + [(dur, dur)]):
        assert 0 < a < b <= c <= dur
    # the pauses are (dithered) silence, the words are not
    x = rec.audio.samples
    a, b = rec.words[0]
    assert np.std(x[: int(a * 16000) - 10]) < 1e-3 < np.std(x[int(a * 16000) : int(b * 16000)])


def test_meeting_reference_turns_alternate():
    spk = [make_speaker(0, 100), make_speaker(0, 101)]
    m = synthesize_meeting("m", spk, 0, 8.0)
    segs = m.reference.segments
    assert m.audio.duration_seconds >= 8.0
    assert all(s1.speaker != s2.speaker for s1, s2 in zip(segs, segs[1:]))
    assert all(s1.end <= s2.start for s1, s2 in zip(segs, segs[1:]))


def test_speakers_differ():
    a, b = make_speaker(0, 0), make_speaker(0, 1)
    assert a.subset == "low" and b.subset == "high"
    assert a != b


def test_manifest_round_trip(tmp_path):
    c = synthetic_corpus(0, SMALL)
    path = c.to_manifest(tmp_path)
    back = load_manifest(path)
    assert [r.utt_id for r in back.train] == [r.utt_id for r in c.train]
    assert [r.role for r in back.eval] == [r.role for r in c.eval]
    r0, b0 = c.eval[0], back.eval[0]
    assert np.allclose(r0.audio.samples, b0.audio.samples, atol=1e-7)
    assert b0.tokens == r0.tokens
    assert np.allclose(b0.words, r0.words, atol=1e-6)
    m0 = back.meetings[0]
    assert m0.reference.speakers == c.meetings[0].reference.speakers


def test_manifest_rejects_unknown_fields(tmp_path):
    c = synthetic_corpus(0, SMALL)
    path = c.to_manifest(tmp_path)
    path.write_text(path.read_text().replace('"role"', '"rolle"', 1))
    with pytest.raises(ValueError, match="unknown fields"):
        load_manifest(path)


def test_tsv_manifest(tmp_path):
    c = synthetic_corpus(0, SMALL)
    c.to_manifest(tmp_path)
    r = c.train[0]
    words = " ".join(f"{a}-{b}" for a, b in r.words)
    (tmp_path / "m.tsv").write_text(
        "utt_id\tpath\tspeaker_id\tsplit\ttokens\twords\n"
        f"{r.utt_id}\twav/{r.utt_id}.wav\t{r.speaker_id}\ttrain\t{' '.join(r.tokens)}\t{words}\n"
    )
    back = load_manifest(tmp_path / "m.tsv")
    assert back.train[0].tokens == r.tokens
    assert np.allclose(back.train[0].words, r.words)
