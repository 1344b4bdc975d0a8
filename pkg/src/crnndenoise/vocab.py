"""Word inventory with deterministic per-word spectral signatures.

Ids are dense in ``[0, size)``. The first three are reserved: 0 is the
sequence-start token, 1 the sequence-end token, 2 an unused padding token
kept for format stability. Real words occupy ``[3, size)`` and transcripts
may only contain those.

Each word's signature is a harmonic stack: a fundamental drawn from an
even-numbered bin of the 512-point analysis grid (so a 256-sample window
holds a whole number of cycles) plus overtones with randomized weights and
phases. Every word owns a unique (fundamental slot, overtone subset) pair:
the first 96 words take the 96 distinct fundamental slots with their full
overtone stacks, and later words revisit slots with a different overtone
subset. Distinct subsets keep the magnitude templates of same-fundamental
words linearly independent, so a nearest-template classifier separates the
whole inventory, while small vocabularies keep pairwise-distinct dominant
bins (a per-segment DFT argmax separates them). The total number of
distinct pairs bounds the vocabulary size. Signatures depend only on
``(seed, word_id)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

__all__ = [
    "BOS_ID",
    "EOS_ID",
    "PAD_ID",
    "FIRST_WORD_ID",
    "WordSignature",
    "Vocabulary",
    "max_vocabulary_size",
]

BOS_ID = 0
EOS_ID = 1
PAD_ID = 2
FIRST_WORD_ID = 3

_GRID_BIN_HZ = 16000.0 / 512.0  # 31.25 Hz
_F0_SLOTS = 96
_F0_FIRST_BIN = 8  # 250 Hz
_MAX_PARTIAL_HZ = 7200.0  # keep harmonics clear of the Nyquist region
_MAX_HARMONIC = 7  # overtone subsets are drawn from harmonics 2..7


def _slot_f0_hz(slot: int) -> float:
    return (_F0_FIRST_BIN + 2 * slot) * _GRID_BIN_HZ


def _overtone_room(slot: int) -> int:
    """How many overtones (harmonics 2 and up) fit below the band edge."""
    highest = int(_MAX_PARTIAL_HZ // _slot_f0_hz(slot))
    return max(0, min(highest, _MAX_HARMONIC) - 1)


def max_vocabulary_size() -> int:
    """Largest supported vocabulary: one word per distinct
    (fundamental slot, overtone subset) pair, plus the reserved ids."""
    return FIRST_WORD_ID + sum(1 << _overtone_room(s) for s in range(_F0_SLOTS))


def _slot_and_subset(word_index: int) -> tuple[int, int]:
    """Unique (slot, overtone subset) for the ``word_index``-th word.

    Enumeration is generation-major: generation 0 walks all 96 slots with
    every available overtone present, generation g revisits the slots that
    still have an unused subset (complementing g's bits keeps early
    generations spectrally rich).
    """
    g = 0
    i = word_index
    while True:
        row = [s for s in range(_F0_SLOTS) if (1 << _overtone_room(s)) > g]
        if not row:
            raise ConfigError(
                f"word index {word_index} exceeds the signature capacity "
                f"({max_vocabulary_size()} ids including reserved ones)"
            )
        if i < len(row):
            slot = row[i]
            subset = ~g & ((1 << _overtone_room(slot)) - 1)
            return slot, subset
        i -= len(row)
        g += 1


@dataclass(frozen=True)
class WordSignature:
    """Harmonic recipe for one word."""

    word_id: int
    f0_hz: float
    harmonics: np.ndarray  # harmonic numbers per partial; first is 1
    weights: np.ndarray  # amplitude per partial, fundamental first
    phases: np.ndarray  # radians per partial

    @property
    def partial_hz(self) -> np.ndarray:
        return self.f0_hz * self.harmonics


class Vocabulary:
    """Deterministic word inventory of a given size."""

    def __init__(self, size: int = 857, seed: int = 0):
        if size <= FIRST_WORD_ID:
            raise ConfigError(
                f"vocabulary size must exceed {FIRST_WORD_ID} reserved ids, got {size}"
            )
        if size > max_vocabulary_size():
            raise ConfigError(
                f"vocabulary size {size} exceeds the {max_vocabulary_size()} distinct"
                " spectral signatures available"
            )
        self.size = int(size)
        self.seed = int(seed)
        self._signatures: dict[int, WordSignature] = {}

    @property
    def word_ids(self) -> range:
        """Ids usable in transcripts (reserved tokens excluded)."""
        return range(FIRST_WORD_ID, self.size)

    def is_word(self, word_id: int) -> bool:
        return FIRST_WORD_ID <= word_id < self.size

    def word_string(self, word_id: int) -> str:
        if not self.is_word(word_id):
            raise ValueError(f"word id {word_id} is reserved or outside the vocabulary")
        return f"w{word_id:04d}"

    def signature(self, word_id: int) -> WordSignature:
        if not self.is_word(word_id):
            raise ValueError(
                f"word id {word_id} is reserved or outside vocabulary of size {self.size}"
            )
        sig = self._signatures.get(word_id)
        if sig is None:
            sig = self._make_signature(word_id)
            self._signatures[word_id] = sig
        return sig

    def _make_signature(self, word_id: int) -> WordSignature:
        rng = np.random.default_rng([self.seed, 101, word_id])
        slot, subset = _slot_and_subset(word_id - FIRST_WORD_ID)
        f0 = _slot_f0_hz(slot)
        harmonics = np.array(
            [1] + [j + 2 for j in range(_overtone_room(slot)) if subset >> j & 1]
        )
        weights = np.empty(len(harmonics))
        weights[0] = 1.0
        if len(harmonics) > 1:
            # overtones stay below ~0.64 so the fundamental wins the DFT
            # argmax even when it straddles two bins of a word-length DFT
            # (a half-bin sinusoid keeps only ~2/pi of its on-bin peak)
            weights[1:] = rng.uniform(0.25, 0.55, len(harmonics) - 1)
        phases = rng.uniform(0.0, 2.0 * np.pi, len(harmonics))
        return WordSignature(
            word_id=word_id, f0_hz=f0, harmonics=harmonics, weights=weights, phases=phases
        )

    def mean_spectrum(self, word_id: int, n_bins: int = 256, fft_size: int = 512, sample_rate: int = 16000) -> np.ndarray:
        """Coarse magnitude template of a word on the analysis grid.

        Used by nearest-template classification in tests and diagnostics.
        """
        sig = self.signature(word_id)
        template = np.zeros(n_bins)
        for hz, w in zip(sig.partial_hz, sig.weights):
            b = int(round(hz * fft_size / sample_rate))
            if 0 <= b < n_bins:
                template[b] += w
        return template
