import numpy as np
import pytest

from fvk import corpus
from fvk.audio import frame_count, generative_frontend, load_wav
from fvk.corpus import (
    CorpusError,
    Manifest,
    ManifestRow,
    SyntheticSpeaker,
    TextSequence,
    build_corpus,
    check_split_disjoint,
    estimate_f0,
    gender_from_f0,
    load_corpus,
    load_manifest,
    render_utterance,
    sample_speakers,
)


def make_speaker(f0=120.0, tilt=-5.0, rate=1.0):
    return SyntheticSpeaker("t000", f0, 8.0, (520.0, 1500.0, 2600.0), tilt, rate)


# ---------------------------------------------------------------------------
# speakers

def test_sample_speakers_covers_labels():
    sps = sample_speakers(4, seed=3)
    assert {s.gender_label for s in sps} == {"F", "M"}
    assert {s.accent_label for s in sps} == {"A", "B"}


def test_sample_speakers_deterministic():
    a = sample_speakers(6, seed=9)
    b = sample_speakers(6, seed=9)
    assert a == b


def test_sample_speakers_canonical_pool():
    sps = sample_speakers(108, seed=1)
    assert len({s.speaker_id for s in sps}) == 108


def test_sample_speakers_needs_two():
    with pytest.raises(CorpusError):
        sample_speakers(1, seed=0)


def test_labels_derive_from_parameters():
    assert make_speaker(f0=170.0).gender_label == "F"
    assert make_speaker(f0=160.0).gender_label == "M"
    assert make_speaker(tilt=-1.0).accent_label == "A"
    assert make_speaker(tilt=1.0).accent_label == "B"


def test_formants_must_increase():
    with pytest.raises(CorpusError):
        SyntheticSpeaker("x", 120.0, 8.0, (1500.0, 520.0, 2600.0), -5.0, 1.0)


# ---------------------------------------------------------------------------
# text

def test_text_rejects_bad_ids():
    with pytest.raises(CorpusError):
        TextSequence((0, 99))
    with pytest.raises(CorpusError):
        TextSequence(())


def test_text_parse_round_trip():
    t = TextSequence((4, 0, 31))
    assert TextSequence.parse(str(t)) == t


# ---------------------------------------------------------------------------
# rendering

def test_render_deterministic():
    sp = make_speaker()
    text = TextSequence((1, 5, 9))
    a = render_utterance(sp, text, seed=42)
    b = render_utterance(sp, text, seed=42)
    assert np.array_equal(a.samples, b.samples)


def test_render_rate_halves_frames():
    cfg = generative_frontend()
    text = TextSequence((4,))
    slow = render_utterance(make_speaker(rate=1.0), text, 1)
    fast = render_utterance(make_speaker(rate=2.0), text, 1)
    f_slow = frame_count(slow.samples.size, cfg)
    f_fast = frame_count(fast.samples.size, cfg)
    assert abs(f_fast - f_slow / 2) <= 1


def test_render_octave_pair_dft_oracle():
    base = dict(f0_range=8.0, formants=(520.0, 1500.0, 2600.0), spectral_tilt=-5.0, rate=1.0)
    low = SyntheticSpeaker("lo", 110.0, **base)
    high = SyntheticSpeaker("hi", 220.0, **base)
    text = TextSequence((1, 5, 9))
    peaks = []
    for sp in (low, high):
        clip = render_utterance(sp, text, seed=3)
        spec = np.abs(np.fft.rfft(clip.samples))
        freqs = np.fft.rfftfreq(clip.samples.size, 1.0 / clip.sample_rate)
        peaks.append(freqs[int(np.argmax(spec))])
    bin_hz = 16000.0 / render_utterance(low, text, 3).samples.size
    assert abs(peaks[1] - 2.0 * peaks[0]) <= 2.0 * bin_hz


def test_gender_recoverable_from_audio():
    rng = np.random.default_rng(0)
    for i, sp in enumerate(sample_speakers(20, seed=5)):
        clip = render_utterance(sp, corpus.random_text(rng), seed=(7, i))
        assert gender_from_f0(estimate_f0(clip)) == sp.gender_label


# ---------------------------------------------------------------------------
# corpus build / manifests

def test_build_corpus_row_counts(tmp_path):
    sps = sample_speakers(10, seed=2)
    manifests = build_corpus(sps, 20, tmp_path / "c", seed=2)
    assert len(manifests["train"]) == 200
    assert "validation" not in manifests


def test_build_corpus_validation_split(tmp_path):
    sps = sample_speakers(4, seed=2)
    manifests = build_corpus(sps, 6, tmp_path / "c", seed=2, validation_per_speaker=2)
    assert len(manifests["train"]) == 16
    assert len(manifests["validation"]) == 8
    assert set(manifests["validation"].speakers()) <= set(manifests["train"].speakers())


def test_build_corpus_cloning_disjoint(tmp_path):
    train = sample_speakers(4, seed=2)
    clone = sample_speakers(16, seed=3, id_prefix="cln")
    manifests = build_corpus(train, 3, tmp_path / "c", seed=2, cloning_speakers=clone)
    train_ids = set(manifests["train"].speakers())
    clone_ids = set(manifests["cloning"].speakers())
    assert len(clone_ids) == 16
    assert not (train_ids & clone_ids)
    check_split_disjoint(manifests["train"], manifests["cloning"])


def test_build_corpus_empty_speakers(tmp_path):
    with pytest.raises(CorpusError):
        build_corpus([], 5, tmp_path / "c", seed=0)


def test_build_corpus_round_trip(tmp_path):
    sps = sample_speakers(4, seed=8)
    built = build_corpus(sps, 4, tmp_path / "c", seed=8)
    manifests, speakers, splits = load_corpus(tmp_path / "c")
    assert len(manifests["train"]) == len(built["train"])
    assert [s.speaker_id for s in speakers] == [s.speaker_id for s in sps]
    assert speakers[0].gender_label == sps[0].gender_label
    clip = manifests["train"].load_clip(manifests["train"].rows[0])
    assert clip.sample_rate == 16000


def test_build_corpus_wavs_deterministic(tmp_path):
    sps = sample_speakers(3, seed=4)
    build_corpus(sps, 2, tmp_path / "a", seed=4)
    build_corpus(sps, 2, tmp_path / "b", seed=4)
    rel = f"{sps[0].speaker_id}/utt000.wav"
    assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


def test_load_manifest_well_formed(tmp_path):
    p = tmp_path / "m.tsv"
    p.write_text("a.wav\tspk0\t1 2 3\nb.wav\tspk1\t4\na.wav\tspk0\t1 2 3\n")
    m = load_manifest(p, check_audio=False)
    assert len(m) == 3  # duplicates are kept
    assert m.rows[1].text == TextSequence((4,))


def test_load_manifest_bad_column_count(tmp_path):
    p = tmp_path / "m.tsv"
    p.write_text("a.wav\tspk0\t1 2\nb.wav\tonly-two-columns\n")
    with pytest.raises(CorpusError, match=":2"):
        load_manifest(p, check_audio=False)


def test_load_manifest_missing_audio(tmp_path):
    p = tmp_path / "m.tsv"
    p.write_text("nowhere.wav\tspk0\t1 2\n")
    with pytest.raises(CorpusError, match="nowhere.wav"):
        load_manifest(p)


def test_split_overlap_detected(tmp_path):
    rows = [ManifestRow("a.wav", "spk0", TextSequence((1,)))]
    with pytest.raises(CorpusError, match="spk0"):
        check_split_disjoint(
            Manifest(rows, "train", tmp_path), Manifest(rows, "cloning", tmp_path)
        )
