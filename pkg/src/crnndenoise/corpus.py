"""Synthetic paired corpus: clean utterances, noisy mixtures, and transcripts.

Clean speech stands in for real recordings as a concatenation of per-word
harmonic segments (fixed duration, short complementary cross-fades), fully
determined by ``(transcript, seed)``. Noise comes from a bank of seeded
generator families (white, pink, harmonic babble, AM tones), mixed at a
requested SNR; a seeded synthetic room impulse response is convolved either
onto the mixture (default) or onto the clean signal before mixing. The
stored reference ``clean`` is the reverberated clean signal (same room as
the mixture) in both orders, so ``noisy - clean`` is an additive noise term
and enhancement metrics measure noise removal, not dereverberation. The
manifest's ``snr_db`` always describes the additive mix itself, before any
reverberation is applied on top of it.

Utterance generation is embarrassingly parallel in principle; this
implementation generates sequentially and writes the manifest as a single
writer, which keeps byte-for-byte determinism trivial.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.signal import fftconvolve

from .dsp import SAMPLE_RATE, Waveform, write_wav
from .errors import ConfigError
from .vocab import Vocabulary

__all__ = [
    "MAX_TRANSCRIPT_WORDS",
    "CorpusConfig",
    "ManifestRow",
    "Utterance",
    "build_corpus",
    "convolve_rir",
    "generate_clean",
    "load_corpus_meta",
    "load_manifest",
    "make_rir",
    "measure_snr_db",
    "mix_at_snr",
    "noise_signal",
    "split_counts",
]

MAX_TRANSCRIPT_WORDS = 60

_MANIFEST_NAME = "manifest.jsonl"
_META_NAME = "corpus.json"
_WAV_DIR = "wav"


@dataclass
class CorpusConfig:
    """Knobs for corpus synthesis. Defaults describe the full-scale recipe;

    the desk preset shrinks counts and transcript lengths for fast runs."""

    total: int = 420
    vocab_size: int = 857
    snr_min_db: float = 0.0
    snr_max_db: float = 30.0
    noise_environments: int = 25
    rir_count: int = 5
    words_min: int = 8
    words_max: int = 60
    word_ms: int = 120
    crossfade_ms: int = 8
    mix_then_rir: bool = True
    sample_rate: int = SAMPLE_RATE
    rms: float = 0.1

    def validate(self) -> None:
        if self.total < 1:
            raise ConfigError(f"corpus.total must be >= 1, got {self.total}")
        if self.vocab_size < 4:
            raise ConfigError(f"corpus.vocab_size must be >= 4, got {self.vocab_size}")
        if not 0.0 <= self.snr_min_db <= self.snr_max_db <= 30.0:
            raise ConfigError(
                "corpus.snr_min_db/snr_max_db must satisfy 0 <= min <= max <= 30, "
                f"got [{self.snr_min_db}, {self.snr_max_db}]"
            )
        if self.noise_environments < 1:
            raise ConfigError(
                f"corpus.noise_environments must be >= 1, got {self.noise_environments}"
            )
        if self.rir_count < 1:
            raise ConfigError(f"corpus.rir_count must be >= 1, got {self.rir_count}")
        if not 1 <= self.words_min <= self.words_max <= MAX_TRANSCRIPT_WORDS:
            raise ConfigError(
                "corpus.words_min/words_max must satisfy "
                f"1 <= min <= max <= {MAX_TRANSCRIPT_WORDS}, got [{self.words_min}, {self.words_max}]"
            )
        if self.word_ms < 20:
            raise ConfigError(f"corpus.word_ms must be >= 20 ms, got {self.word_ms}")
        if not 0 < self.crossfade_ms < self.word_ms:
            raise ConfigError(
                f"corpus.crossfade_ms must be in (0, word_ms), got {self.crossfade_ms}"
            )
        if self.sample_rate != SAMPLE_RATE:
            raise ConfigError(
                f"corpus.sample_rate: only {SAMPLE_RATE} Hz is supported, got {self.sample_rate}"
            )
        if not 0.0 < self.rms <= 0.3:
            raise ConfigError(f"corpus.rms must be in (0, 0.3], got {self.rms}")


@dataclass
class Utterance:
    """One synthesized corpus item, in memory."""

    utt_id: str
    clean: Waveform
    noisy: Waveform
    transcript: list[int]
    snr_db: float
    rir_id: int
    split: str

    def __post_init__(self):
        if not 1 <= len(self.transcript) <= MAX_TRANSCRIPT_WORDS:
            raise ValueError(
                f"{self.utt_id}: transcript length {len(self.transcript)} outside [1, {MAX_TRANSCRIPT_WORDS}]"
            )
        if len(self.clean) != len(self.noisy):
            raise ValueError(f"{self.utt_id}: clean and noisy lengths differ")
        if not 0.0 <= self.snr_db <= 30.0:
            raise ValueError(f"{self.utt_id}: snr_db {self.snr_db} outside [0, 30]")


@dataclass
class ManifestRow:
    """One line of the corpus manifest."""

    utt_id: str
    clean_path: str
    noisy_path: str
    transcript: list[int]
    words: list[str]
    snr_db: float
    rir_id: int
    split: str


# ---------------------------------------------------------------------------
# clean speech
# ---------------------------------------------------------------------------


def _word_segment(vocab: Vocabulary, word_id: int, n_samples: int, fade: int, sample_rate: int, rms: float) -> np.ndarray:
    sig = vocab.signature(word_id)
    t = np.arange(n_samples) / sample_rate
    x = np.zeros(n_samples)
    for hz, w, ph in zip(sig.partial_hz, sig.weights, sig.phases):
        x += w * np.sin(2.0 * np.pi * hz * t + ph)
    level = float(np.sqrt(np.mean(x * x)))
    if level > 0.0:
        x *= rms / level
    # complementary half-cosine fades; overlapped edges sum to a cross-fade
    u = 0.5 - 0.5 * np.cos(np.pi * np.arange(fade) / fade)
    x[:fade] *= u
    x[-fade:] *= u[::-1]
    return x


def generate_clean(
    transcript: list[int],
    vocab: Vocabulary,
    seed: int,
    word_ms: int = 120,
    crossfade_ms: int = 8,
    sample_rate: int = SAMPLE_RATE,
    rms: float = 0.1,
) -> Waveform:
    """Deterministic clean utterance for a transcript.

    Consecutive word segments overlap by the cross-fade length, so the total
    length is ``n_words * word_len - (n_words - 1) * fade_len``. The ``seed``
    must match the vocabulary's seed so signatures line up across a corpus.
    """
    if len(transcript) == 0:
        raise ValueError("generate_clean: transcript is empty")
    if len(transcript) > MAX_TRANSCRIPT_WORDS:
        raise ValueError(
            f"generate_clean: transcript of {len(transcript)} words exceeds the {MAX_TRANSCRIPT_WORDS}-word cap"
        )
    if vocab.seed != seed:
        vocab = Vocabulary(vocab.size, seed)
    n_word = int(round(word_ms * sample_rate / 1000.0))
    fade = int(round(crossfade_ms * sample_rate / 1000.0))
    if not 0 < fade < n_word:
        raise ConfigError(f"generate_clean: cross-fade {fade} samples must be shorter than a word")
    hop = n_word - fade
    out = np.zeros(hop * (len(transcript) - 1) + n_word)
    for pos, word_id in enumerate(transcript):
        seg = _word_segment(vocab, int(word_id), n_word, fade, sample_rate, rms)
        start = pos * hop
        out[start : start + n_word] += seg
    return Waveform(out, sample_rate=sample_rate)


# ---------------------------------------------------------------------------
# rooms and noise
# ---------------------------------------------------------------------------


def make_rir(seed: int, rir_id: int, sample_rate: int = SAMPLE_RATE, n_taps: int = 1024) -> Waveform:
    """Synthetic room impulse response: unit direct path plus a decaying tail."""
    rng = np.random.default_rng([seed, 201, rir_id])
    tau = rng.uniform(160.0, 480.0)  # 10-30 ms decay constants
    taps = np.arange(n_taps)
    tail = rng.standard_normal(n_taps) * np.exp(-taps / tau)
    rir = 0.25 * tail
    rir[0] = 1.0
    return Waveform(rir, sample_rate=sample_rate)


def convolve_rir(x: Waveform, rir: Waveform) -> Waveform:
    """Convolve a signal with an energy-normalized impulse response.

    The result is truncated to the input length so pairings stay aligned.
    """
    if x.sample_rate != rir.sample_rate:
        raise ConfigError(
            f"convolve_rir: sample rates differ ({x.sample_rate} vs {rir.sample_rate})"
        )
    h = np.asarray(rir.samples, dtype=np.float64)
    energy = float(np.sqrt(h @ h))
    if energy == 0.0:
        raise ValueError("convolve_rir: impulse response has zero energy")
    h = h / energy
    y = fftconvolve(np.asarray(x.samples, dtype=np.float64), h)[: len(x)]
    return Waveform(y, sample_rate=x.sample_rate)


def noise_signal(seed: int, env_id: int, realization: int, n_samples: int, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Unit-RMS noise of one environment.

    ``env_id`` selects the environment (its family and fixed parameters);
    ``realization`` varies the draw, so distinct utterances sharing an
    environment still see fresh noise.
    """
    env_rng = np.random.default_rng([seed, 301, env_id])
    rng = np.random.default_rng([seed, 401, env_id, realization])
    family = env_id % 4
    t = np.arange(n_samples) / sample_rate
    if family == 0:  # white
        x = rng.standard_normal(n_samples)
    elif family == 1:  # pink-ish 1/f
        w = rng.standard_normal(n_samples)
        spec = np.fft.rfft(w)
        bins = np.arange(spec.shape[0])
        spec /= np.sqrt(np.maximum(bins, 1))
        x = np.fft.irfft(spec, n=n_samples)
    elif family == 2:  # babble: several drifting harmonic voices
        f0s = env_rng.uniform(120.0, 500.0, 6)
        x = np.zeros(n_samples)
        for f0 in f0s:
            rate = rng.uniform(0.8, 5.0)
            ph = rng.uniform(0.0, 2.0 * np.pi, 4)
            envl = 0.5 + 0.5 * np.sin(2.0 * np.pi * rate * t + ph[0])
            voice = np.zeros(n_samples)
            for k in (1, 2, 3):
                voice += np.sin(2.0 * np.pi * f0 * k * t + ph[k]) / k
            x += envl * voice
    else:  # amplitude-modulated tone over a low white floor
        carrier = env_rng.uniform(300.0, 4000.0)
        rate = env_rng.uniform(2.0, 20.0)
        ph = rng.uniform(0.0, 2.0 * np.pi, 2)
        x = (1.0 + 0.8 * np.sin(2.0 * np.pi * rate * t + ph[0])) * np.sin(
            2.0 * np.pi * carrier * t + ph[1]
        )
        x = x + 0.1 * rng.standard_normal(n_samples)
    level = float(np.sqrt(np.mean(x * x)))
    if level == 0.0:  # pragma: no cover - generators above never emit silence
        raise ValueError(f"noise environment {env_id} produced a silent signal")
    return x / level


def measure_snr_db(clean: np.ndarray, residual: np.ndarray) -> float:
    """Power ratio of a signal to a residual, in dB."""
    p_c = float(np.mean(np.square(clean)))
    p_r = float(np.mean(np.square(residual)))
    if p_c <= 0.0 or p_r <= 0.0:
        raise ValueError("measure_snr_db: zero-power operand")
    return 10.0 * math.log10(p_c / p_r)


def mix_at_snr(clean: Waveform, noise, snr_db: float) -> Waveform:
    """Add noise scaled so the mixture hits the requested global SNR exactly.

    ``noise`` may be a Waveform or a plain array; it is tiled or cropped to
    the clean signal's length before the power match.
    """
    c = np.asarray(clean.samples, dtype=np.float64)
    n = np.asarray(noise.samples if isinstance(noise, Waveform) else noise, dtype=np.float64)
    if n.shape[0] < c.shape[0]:
        reps = int(np.ceil(c.shape[0] / n.shape[0]))
        n = np.tile(n, reps)
    n = n[: c.shape[0]]
    p_c = float(np.mean(c * c))
    p_n = float(np.mean(n * n))
    if p_c <= 0.0:
        raise ValueError("mix_at_snr: clean signal has zero power")
    if p_n <= 0.0:
        raise ValueError("mix_at_snr: noise signal has zero power")
    alpha = math.sqrt(p_c / (p_n * 10.0 ** (snr_db / 10.0)))
    return Waveform(c + alpha * n, sample_rate=clean.sample_rate)


# ---------------------------------------------------------------------------
# corpus assembly
# ---------------------------------------------------------------------------


def split_counts(total: int) -> tuple[int, int, int]:
    """5:1:1 split sizes: floors for train and validation, remainder to test."""
    train = total * 5 // 7
    val = total // 7
    return train, val, total - train - val


def _split_of(index: int, counts: tuple[int, int, int]) -> str:
    if index < counts[0]:
        return "train"
    if index < counts[0] + counts[1]:
        return "val"
    return "test"


def synthesize_utterance(cfg: CorpusConfig, vocab: Vocabulary, seed: int, index: int, counts: tuple[int, int, int]) -> Utterance:
    """Generate one utterance; deterministic in (cfg, seed, index)."""
    rng = np.random.default_rng([seed, 11, index])
    n_words = int(rng.integers(cfg.words_min, cfg.words_max + 1))
    transcript = [int(w) for w in rng.integers(3, cfg.vocab_size, n_words)]
    snr_db = float(rng.uniform(cfg.snr_min_db, cfg.snr_max_db))
    env_id = int(rng.integers(0, cfg.noise_environments))
    rir_id = int(rng.integers(0, cfg.rir_count))

    clean = generate_clean(
        transcript,
        vocab,
        seed,
        word_ms=cfg.word_ms,
        crossfade_ms=cfg.crossfade_ms,
        sample_rate=cfg.sample_rate,
        rms=cfg.rms,
    )
    noise = noise_signal(seed, env_id, index, len(clean), cfg.sample_rate)
    rir = make_rir(seed, rir_id, cfg.sample_rate)
    reverberant_clean = convolve_rir(clean, rir)
    if cfg.mix_then_rir:
        noisy = convolve_rir(mix_at_snr(clean, noise, snr_db), rir)
    else:
        noisy = mix_at_snr(reverberant_clean, noise, snr_db)

    # one shared guard factor keeps PCM headroom without touching the SNR
    peak = max(
        float(np.max(np.abs(reverberant_clean.samples))),
        float(np.max(np.abs(noisy.samples))),
    )
    if peak > 0.97:
        g = 0.97 / peak
        reverberant_clean = Waveform(reverberant_clean.samples * g, sample_rate=cfg.sample_rate)
        noisy = Waveform(noisy.samples * g, sample_rate=cfg.sample_rate)

    return Utterance(
        utt_id=f"utt_{index:05d}",
        clean=reverberant_clean,
        noisy=noisy,
        transcript=transcript,
        snr_db=snr_db,
        rir_id=rir_id,
        split=_split_of(index, counts),
    )


def _manifest_line(row: ManifestRow) -> str:
    payload = {
        "id": row.utt_id,
        "clean_path": row.clean_path,
        "noisy_path": row.noisy_path,
        "transcript": row.transcript,
        "words": row.words,
        "snr_db": row.snr_db,
        "rir_id": row.rir_id,
        "split": row.split,
    }
    return json.dumps(payload, separators=(", ", ": "))


def build_corpus(cfg: CorpusConfig, seed: int, out_dir) -> Path:
    """Synthesize a full corpus under ``out_dir`` and return the manifest path.

    Writes ``wav/<id>_{clean,noisy}.wav`` pairs, a JSON-lines manifest, and a
    ``corpus.json`` metadata snapshot. Everything is deterministic in
    ``(cfg, seed)``; a rerun produces byte-identical files.
    """
    cfg.validate()
    root = Path(out_dir)
    try:
        (root / _WAV_DIR).mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create corpus directory {root}: {exc}") from exc

    vocab = Vocabulary(cfg.vocab_size, seed)
    counts = split_counts(cfg.total)
    rows: list[ManifestRow] = []
    for index in range(cfg.total):
        utt = synthesize_utterance(cfg, vocab, seed, index, counts)
        clean_rel = f"{_WAV_DIR}/{utt.utt_id}_clean.wav"
        noisy_rel = f"{_WAV_DIR}/{utt.utt_id}_noisy.wav"
        write_wav(root / clean_rel, utt.clean)
        write_wav(root / noisy_rel, utt.noisy)
        rows.append(
            ManifestRow(
                utt_id=utt.utt_id,
                clean_path=clean_rel,
                noisy_path=noisy_rel,
                transcript=utt.transcript,
                words=[vocab.word_string(w) for w in utt.transcript],
                snr_db=utt.snr_db,
                rir_id=utt.rir_id,
                split=utt.split,
            )
        )

    manifest_path = root / _MANIFEST_NAME
    tmp = manifest_path.with_suffix(".jsonl.tmp")
    tmp.write_text("".join(_manifest_line(r) + "\n" for r in rows))
    tmp.replace(manifest_path)

    meta = {"seed": seed, "counts": {"train": counts[0], "val": counts[1], "test": counts[2]}}
    meta.update(asdict(cfg))
    meta_path = root / _META_NAME
    tmp = meta_path.with_suffix(".json.tmp")
    tmp.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    tmp.replace(meta_path)
    return manifest_path


def load_manifest(corpus_dir, split: str | None = None) -> list[ManifestRow]:
    """Read manifest rows, optionally filtered to one split."""
    path = Path(corpus_dir) / _MANIFEST_NAME
    if not path.is_file():
        raise OSError(f"manifest not found: {path}")
    rows: list[ManifestRow] = []
    for line_no, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{line_no}: malformed manifest line: {exc}") from exc
        row = ManifestRow(
            utt_id=obj["id"],
            clean_path=obj["clean_path"],
            noisy_path=obj["noisy_path"],
            transcript=[int(w) for w in obj["transcript"]],
            words=list(obj["words"]),
            snr_db=float(obj["snr_db"]),
            rir_id=int(obj["rir_id"]),
            split=obj["split"],
        )
        if split is None or row.split == split:
            rows.append(row)
    return rows


def load_corpus_meta(corpus_dir) -> dict:
    path = Path(corpus_dir) / _META_NAME
    if not path.is_file():
        raise OSError(f"corpus metadata not found: {path}")
    return json.loads(path.read_text())
