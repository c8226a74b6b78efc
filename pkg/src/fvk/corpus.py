"""Parametric multi-speaker corpus with controllable speaker attributes.

Speakers are defined by pitch, formant layout, spectral tilt and speaking
rate; utterances are rendered with a harmonic source filtered by per-symbol
formant resonators. The attributes are recoverable from the rendered audio
(an f0 threshold separates the gender labels exactly), which is what makes
the embedding-space and morphing experiments verifiable.

External WAV corpora can be substituted through the same manifest format:
``relative/path.wav<TAB>speaker_id<TAB>symbol ids space-separated``.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal as sig

from . import worker_count
from .audio import AudioClip, generative_frontend, load_wav, write_wav

NUM_SYMBOLS = 32
GENDER_F0_THRESHOLD_HZ = 165.0

_SYMBOL_SEED = 20240917


def _build_symbol_table():
    rng = np.random.default_rng(np.random.PCG64(_SYMBOL_SEED))
    durations = rng.integers(3, 9, size=NUM_SYMBOLS)
    offsets = np.stack(
        [
            rng.uniform(-120.0, 220.0, NUM_SYMBOLS),
            rng.uniform(-350.0, 450.0, NUM_SYMBOLS),
            rng.uniform(-250.0, 350.0, NUM_SYMBOLS),
        ],
        axis=1,
    )
    return durations, offsets


SYMBOL_DURATIONS, SYMBOL_FORMANT_OFFSETS = _build_symbol_table()


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class TextSequence:
    """Sequence of unit-symbol ids; each symbol has a fixed nominal duration."""

    symbols: tuple

    def __post_init__(self):
        if len(self.symbols) == 0:
            raise CorpusError("text must contain at least one symbol")
        if any(not 0 <= s < NUM_SYMBOLS for s in self.symbols):
            raise CorpusError(f"symbol ids must be < {NUM_SYMBOLS}: {self.symbols}")

    @property
    def nominal_frames(self):
        return int(sum(SYMBOL_DURATIONS[s] for s in self.symbols))

    def __str__(self):
        return " ".join(str(s) for s in self.symbols)

    @classmethod
    def parse(cls, text):
        return cls(tuple(int(tok) for tok in text.split()))


def random_text(rng, min_symbols=3, max_symbols=6) -> TextSequence:
    n = int(rng.integers(min_symbols, max_symbols + 1))
    return TextSequence(tuple(int(s) for s in rng.integers(0, NUM_SYMBOLS, size=n)))


@dataclass(frozen=True)
class SyntheticSpeaker:
    speaker_id: str
    f0_base: float
    f0_range: float
    formants: tuple
    spectral_tilt: float
    rate: float
    gender_label: str = field(init=False)
    accent_label: str = field(init=False)

    def __post_init__(self):
        if self.f0_base <= 0:
            raise CorpusError(f"{self.speaker_id}: f0_base must be positive")
        if not (self.formants[0] < self.formants[1] < self.formants[2]):
            raise CorpusError(f"{self.speaker_id}: formants must be strictly increasing")
        object.__setattr__(
            self, "gender_label", "F" if self.f0_base >= GENDER_F0_THRESHOLD_HZ else "M"
        )
        object.__setattr__(self, "accent_label", "A" if self.spectral_tilt < 0 else "B")


def sample_speakers(n, seed, id_prefix="spk", id_offset=0):
    """Deterministic speaker draw; n >= 4 covers both genders and both accents."""
    if n < 2:
        raise CorpusError("need at least 2 speakers")
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x5EA4E5)))
    speakers = []
    for i in range(n):
        female = i % 2 == 1
        accent_b = (i // 2) % 2 == 1
        f0 = rng.uniform(180.0, 255.0) if female else rng.uniform(95.0, 150.0)
        tilt = rng.uniform(2.0, 6.0) if accent_b else rng.uniform(-9.0, -4.0)
        speakers.append(
            SyntheticSpeaker(
                speaker_id=f"{id_prefix}{id_offset + i:03d}",
                f0_base=float(f0),
                f0_range=float(rng.uniform(6.0, 16.0)),
                formants=(
                    float(rng.uniform(420.0, 620.0)),
                    float(rng.uniform(1350.0, 1800.0)),
                    float(rng.uniform(2350.0, 2900.0)),
                ),
                spectral_tilt=float(tilt),
                rate=float(rng.uniform(0.9, 1.1)),
            )
        )
    return speakers


# ---------------------------------------------------------------------------
# rendering

def _resonator_coeffs(center_hz, bandwidth_hz, sample_rate):
    r = np.exp(-np.pi * bandwidth_hz / sample_rate)
    theta = 2.0 * np.pi * center_hz / sample_rate
    # two-pole resonator, gain-compensated so the peak response is O(1)
    b = np.array([1.0 - r])
    a = np.array([1.0, -2.0 * r * np.cos(theta), r * r])
    return b, a


def symbol_frame_counts(text: TextSequence, rate: float):
    return [max(1, int(round(SYMBOL_DURATIONS[s] / rate))) for s in text.symbols]


def render_utterance(speaker: SyntheticSpeaker, text: TextSequence, seed) -> AudioClip:
    """Render one utterance; deterministic for a given (speaker, text, seed)."""
    cfg = generative_frontend()
    sr = cfg.sample_rate
    frames = symbol_frame_counts(text, speaker.rate)
    total_frames = sum(frames)
    n = cfg.window_size + (total_frames - 1) * cfg.hop_length

    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xAD10)))

    # slowly varying pitch contour inside +-f0_range/2
    knots = max(4, total_frames // 4)
    walk = np.cumsum(rng.standard_normal(knots))
    walk = walk - walk.mean()
    walk = walk / max(np.abs(walk).max(), 1e-9) * (speaker.f0_range / 2.0)
    f0 = speaker.f0_base + np.interp(np.arange(n), np.linspace(0, n - 1, knots), walk)

    phase = 2.0 * np.pi * np.cumsum(f0) / sr
    k_max = min(50, int((sr / 2 - 400) / (speaker.f0_base + speaker.f0_range)))
    harmonics = np.arange(1, k_max + 1)
    source = (np.sin(np.outer(harmonics, phase)) / harmonics[:, None]).sum(axis=0)
    fundamental = np.sin(phase)

    # per-symbol formant targets, filtered segment by segment with carried state
    bandwidths = (80.0, 120.0, 160.0)
    gains = (1.0, 0.63, 0.35)
    voiced = np.zeros(n)
    bounds = np.concatenate([[0], np.cumsum(frames)]) * cfg.hop_length
    bounds[-1] = n
    states = [None, None, None]
    for sym, lo, hi in zip(text.symbols, bounds[:-1], bounds[1:]):
        seg = source[lo:hi]
        for fi in range(3):
            center = speaker.formants[fi] + SYMBOL_FORMANT_OFFSETS[sym, fi]
            center = float(np.clip(center, 150.0, sr / 2 - 500.0))
            b, a = _resonator_coeffs(center, bandwidths[fi], sr)
            if states[fi] is None:
                states[fi] = np.zeros(2)
            out, states[fi] = sig.lfilter(b, a, seg, zi=states[fi])
            voiced[lo:hi] += gains[fi] * out

    wave = 1.1 * fundamental + voiced

    # spectral tilt in dB/octave around 500 Hz
    spec = np.fft.rfft(wave)
    freqs = np.maximum(np.fft.rfftfreq(n, 1.0 / sr), 60.0)
    spec *= (freqs / 500.0) ** (speaker.spectral_tilt / 6.0206)
    wave = np.fft.irfft(spec, n=n)

    wave *= 0.06 / max(np.sqrt(np.mean(wave**2)), 1e-9)
    return AudioClip(np.clip(wave, -1.0, 1.0), sr)


# ---------------------------------------------------------------------------
# f0 probe

def estimate_f0(clip: AudioClip, fmin=70.0, fmax=320.0, subharmonic_ratio=0.12):
    """Pitch estimate: the lowest strong peak of the magnitude spectrum.

    The dominant peak is located first; if an integer subharmonic of it
    carries a real lump (at least ``subharmonic_ratio`` of the peak), the
    estimate drops to the lowest such lump. That rescues resynthesized audio
    whose fundamental is weaker than a higher harmonic, without halving
    voices that genuinely have no energy an octave down.
    """
    x = clip.samples - clip.samples.mean()
    n = x.size
    # averaged short-time spectrum: robust to slow phase drift (e.g. in
    # phase-reconstructed audio) that smears a single long transform
    win_len = min(2048, n)
    hop = max(1, win_len // 4)
    window = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(win_len) / win_len)
    starts = range(0, n - win_len + 1, hop)
    frames = np.stack([x[s : s + win_len] * window for s in starts])
    mag = np.abs(np.fft.rfft(frames, n=2048, axis=1)).mean(axis=0)
    df = clip.sample_rate / 2048.0

    def lump(center_hz, half_width_hz=20.0):
        lo = max(1, int((center_hz - half_width_hz) / df))
        hi = min(mag.size - 1, int((center_hz + half_width_hz) / df) + 1)
        k = lo + int(np.argmax(mag[lo:hi]))
        return k, mag[k]

    lo = max(1, int(fmin / df))
    hi = min(mag.size - 1, int(2.0 * fmax / df))
    peak_bin = lo + int(np.argmax(mag[lo:hi]))
    peak_mag = mag[peak_bin]
    peak_hz = peak_bin * df

    best_bin = peak_bin
    for divisor in (4, 3, 2):
        cand = peak_hz / divisor
        if cand < fmin or cand > fmax:
            continue
        k, m = lump(cand)
        if m >= subharmonic_ratio * peak_mag:
            best_bin = k
            break

    k = best_bin
    if 0 < k < mag.size - 1:  # parabolic refinement on log magnitude
        a, b, c = np.log(mag[k - 1 : k + 2] + 1e-12)
        denom = a - 2 * b + c
        if abs(denom) > 1e-12:
            return float((k + 0.5 * (a - c) / denom) * df)
    return float(k * df)


def gender_from_f0(f0_hz):
    return "F" if f0_hz >= GENDER_F0_THRESHOLD_HZ else "M"


# ---------------------------------------------------------------------------
# manifests

@dataclass(frozen=True)
class ManifestRow:
    path: str
    speaker_id: str
    text: TextSequence


@dataclass
class Manifest:
    rows: list
    split: str
    root: Path

    def speakers(self):
        return sorted({r.speaker_id for r in self.rows})

    def rows_for(self, speaker_id):
        return [r for r in self.rows if r.speaker_id == speaker_id]

    def audio_path(self, row: ManifestRow) -> Path:
        return self.root / row.path

    def load_clip(self, row: ManifestRow) -> AudioClip:
        return load_wav(self.audio_path(row))

    def __len__(self):
        return len(self.rows)


def save_manifest(manifest: Manifest, path):
    with open(path, "w") as fh:
        for r in manifest.rows:
            fh.write(f"{r.path}\t{r.speaker_id}\t{r.text}\n")


def load_manifest(path, split="train", check_audio=True) -> Manifest:
    path = Path(path)
    rows = []
    missing = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise CorpusError(
                    f"{path}:{lineno}: expected 3 tab-separated columns, got {len(parts)}"
                )
            rel, speaker_id, text = parts
            try:
                seq = TextSequence.parse(text)
            except (ValueError, CorpusError) as exc:
                raise CorpusError(f"{path}:{lineno}: bad symbol column ({exc})") from exc
            if check_audio and not (path.parent / rel).exists():
                missing.append(f"{path}:{lineno}: missing audio {rel}")
            rows.append(ManifestRow(rel, speaker_id, seq))
    if missing:
        raise CorpusError("; ".join(missing[:5]))
    return Manifest(rows, split, path.parent)


def check_split_disjoint(train: Manifest, cloning: Manifest):
    overlap = set(train.speakers()) & set(cloning.speakers())
    if overlap:
        raise CorpusError(f"cloning speakers leak into the train split: {sorted(overlap)}")


# ---------------------------------------------------------------------------
# corpus construction

def save_speaker_table(path, speakers, splits):
    with open(path, "w") as fh:
        fh.write(
            "speaker_id\tf0_base\tf0_range\tf1\tf2\tf3\ttilt\trate\tgender\taccent\tsplit\n"
        )
        for sp in speakers:
            fh.write(
                f"{sp.speaker_id}\t{sp.f0_base:.3f}\t{sp.f0_range:.3f}"
                f"\t{sp.formants[0]:.3f}\t{sp.formants[1]:.3f}\t{sp.formants[2]:.3f}"
                f"\t{sp.spectral_tilt:.3f}\t{sp.rate:.3f}"
                f"\t{sp.gender_label}\t{sp.accent_label}\t{splits[sp.speaker_id]}\n"
            )


def load_speaker_table(path):
    speakers, splits = [], {}
    with open(path) as fh:
        header = fh.readline()
        if not header.startswith("speaker_id"):
            raise CorpusError(f"{path}: not a speaker table")
        for line in fh:
            f = line.rstrip("\n").split("\t")
            sp = SyntheticSpeaker(
                speaker_id=f[0],
                f0_base=float(f[1]),
                f0_range=float(f[2]),
                formants=(float(f[3]), float(f[4]), float(f[5])),
                spectral_tilt=float(f[6]),
                rate=float(f[7]),
            )
            speakers.append(sp)
            splits[sp.speaker_id] = f[10]
    return speakers, splits


def _utterance_seed(seed, speaker_id, j):
    return (seed, sum(ord(c) * 131**i for i, c in enumerate(speaker_id)) % (2**31), j)


def build_corpus(
    speakers,
    texts_per_speaker,
    out_dir,
    seed,
    cloning_speakers=(),
    validation_per_speaker=0,
    text_symbols=(3, 6),
):
    """Render WAVs and write manifests; returns {split: Manifest}.

    ``speakers`` populate the train (and validation) splits;
    ``cloning_speakers`` get their own split and must be distinct speakers.
    """
    speakers = list(speakers)
    cloning_speakers = list(cloning_speakers)
    if not speakers:
        raise CorpusError("speaker list is empty")
    if validation_per_speaker >= texts_per_speaker:
        raise CorpusError("validation_per_speaker must leave training utterances")
    ids = [sp.speaker_id for sp in speakers]
    clone_ids = {sp.speaker_id for sp in cloning_speakers}
    if clone_ids & set(ids):
        raise CorpusError("cloning speakers must be disjoint from train speakers")

    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CorpusError(f"cannot create corpus dir {out_dir}: {exc}") from exc

    jobs = []  # (split, speaker, j, text, rel_path)
    for sp in speakers + cloning_speakers:
        trng = np.random.default_rng(np.random.SeedSequence(_utterance_seed(seed, sp.speaker_id, 1_000_000)))
        seen = set()
        for j in range(texts_per_speaker):
            text = random_text(trng, *text_symbols)
            while text.symbols in seen:
                text = random_text(trng, *text_symbols)
            seen.add(text.symbols)
            if sp.speaker_id in clone_ids:
                split = "cloning"
            elif j >= texts_per_speaker - validation_per_speaker:
                split = "validation"
            else:
                split = "train"
            jobs.append((split, sp, j, text, f"{sp.speaker_id}/utt{j:03d}.wav"))

    def render_job(job):
        split, sp, j, text, rel = job
        target = out_dir / rel
        target.parent.mkdir(parents=True, exist_ok=True)
        clip = render_utterance(sp, text, _utterance_seed(seed, sp.speaker_id, j))
        try:
            write_wav(target, clip)
        except OSError as exc:
            raise CorpusError(f"cannot write {target}: {exc}") from exc

    workers = min(worker_count(), 8)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(render_job, jobs))
    else:
        for job in jobs:
            render_job(job)

    manifests = {}
    for split in ("train", "validation", "cloning"):
        rows = [ManifestRow(rel, sp.speaker_id, text) for s, sp, j, text, rel in jobs if s == split]
        if not rows:
            continue
        m = Manifest(rows, split, out_dir)
        save_manifest(m, out_dir / f"manifest_{split}.tsv")
        manifests[split] = m

    splits = {sp.speaker_id: "cloning" if sp.speaker_id in clone_ids else "train" for sp in speakers + cloning_speakers}
    save_speaker_table(out_dir / "speakers.tsv", speakers + cloning_speakers, splits)
    with open(out_dir / "corpus.cfg", "w") as fh:
        fh.write(f"seed={seed}\ntexts_per_speaker={texts_per_speaker}\n")
        fh.write(f"validation_per_speaker={validation_per_speaker}\n")
        fh.write(f"text_symbols={text_symbols[0]},{text_symbols[1]}\n")
    return manifests


def load_corpus(out_dir):
    """Read back manifests and the speaker table of a built corpus."""
    out_dir = Path(out_dir)
    manifests = {}
    for split in ("train", "validation", "cloning"):
        p = out_dir / f"manifest_{split}.tsv"
        if p.exists():
            manifests[split] = load_manifest(p, split=split)
    if "train" in manifests and "cloning" in manifests:
        check_split_disjoint(manifests["train"], manifests["cloning"])
    speakers, splits = load_speaker_table(out_dir / "speakers.tsv")
    return manifests, speakers, splits
