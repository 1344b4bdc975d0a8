"""Synthetic corpus tests.

Mixing and convolution are validated against direct per-sample oracles, the
split arithmetic and manifest format against hand-computed values, and the
whole builder against itself (two runs from one seed must agree to the
byte). A nearest-template probe certifies that the clean signals actually
carry the word identity an evaluator later tries to recover.
"""

from __future__ import annotations

import json
import shutil

import numpy as np
import pytest

from crnndenoise.corpus import (
    MAX_TRANSCRIPT_WORDS,
    CorpusConfig,
    Utterance,
    build_corpus,
    convolve_rir,
    generate_clean,
    load_corpus_meta,
    load_manifest,
    make_rir,
    measure_snr_db,
    mix_at_snr,
    noise_signal,
    split_counts,
)
from crnndenoise.dsp import SAMPLE_RATE, Waveform, features_of, read_wav
from crnndenoise.errors import ConfigError
from crnndenoise.vocab import FIRST_WORD_ID, Vocabulary

from conftest import tiny_corpus_config


def direct_convolution(x, h):
    """O(n*m) reference convolution, truncated to len(x)."""
    out = np.zeros(len(x))
    for i, hv in enumerate(h[: len(x)]):
        if hv != 0.0:
            out[i:] += hv * x[: len(x) - i]
    return out


# ---------------------------------------------------------------------------
# splits and configuration
# ---------------------------------------------------------------------------


def test_split_counts_follow_the_five_one_one_ratio():
    assert split_counts(750) == (535, 107, 108)
    assert split_counts(420) == (300, 60, 60)
    assert split_counts(7) == (5, 1, 1)


def test_split_counts_always_total_up():
    for total in range(7, 200):
        tr, va, te = split_counts(total)
        assert tr + va + te == total
        assert tr >= va and tr >= te


def test_config_rejects_out_of_range_snr():
    with pytest.raises(ConfigError):
        tiny_corpus_config(snr_max_db=31.0).validate()
    with pytest.raises(ConfigError):
        tiny_corpus_config(snr_min_db=-1.0).validate()
    with pytest.raises(ConfigError):
        tiny_corpus_config(snr_min_db=9.0, snr_max_db=5.0).validate()


def test_config_rejects_bad_vocab_and_rates():
    with pytest.raises(ConfigError):
        tiny_corpus_config(vocab_size=3).validate()
    with pytest.raises(ConfigError):
        tiny_corpus_config(sample_rate=8000).validate()
    with pytest.raises(ConfigError):
        tiny_corpus_config(words_max=61).validate()
    with pytest.raises(ConfigError):
        tiny_corpus_config(crossfade_ms=200).validate()


def test_transcripts_longer_than_the_cap_are_rejected():
    wave = Waveform(np.zeros(1000), SAMPLE_RATE)
    with pytest.raises(ValueError):
        Utterance(
            utt_id="utt_x",
            clean=wave,
            noisy=wave,
            transcript=[FIRST_WORD_ID] * (MAX_TRANSCRIPT_WORDS + 1),
            snr_db=10.0,
            rir_id=0,
            split="train",
        )


# ---------------------------------------------------------------------------
# room impulse responses
# ---------------------------------------------------------------------------


def test_rir_has_unit_direct_path_tap():
    rir = make_rir(0, 2)
    assert rir.samples[0] == 1.0
    assert len(rir.samples) == 1024


def test_identity_rir_passes_the_signal_through(rng):
    x = Waveform(rng.standard_normal(2000) * 0.1, SAMPLE_RATE)
    delta = Waveform(np.r_[1.0, np.zeros(255)], SAMPLE_RATE)
    out = convolve_rir(x, delta)
    np.testing.assert_allclose(out.samples, x.samples, atol=1e-12)


def test_delayed_impulse_shifts_the_signal(rng):
    x = Waveform(rng.standard_normal(500) * 0.1, SAMPLE_RATE)
    k = 7
    h = np.zeros(64)
    h[k] = 1.0
    out = convolve_rir(x, Waveform(h, SAMPLE_RATE))
    np.testing.assert_allclose(out.samples[k:], x.samples[:-k], atol=1e-10)
    np.testing.assert_allclose(out.samples[:k], 0.0, atol=1e-10)


def test_convolution_matches_direct_oracle(rng):
    x = rng.standard_normal(700) * 0.2
    rir = make_rir(5, 3)
    h = rir.samples / np.sqrt(np.sum(rir.samples**2))
    ref = direct_convolution(x, h)
    out = convolve_rir(Waveform(x, SAMPLE_RATE), rir)
    assert np.abs(out.samples - ref).max() <= 1e-6


def test_distinct_rir_ids_give_distinct_rooms():
    a = make_rir(0, 0).samples
    b = make_rir(0, 1).samples
    assert not np.array_equal(a, b)
    np.testing.assert_array_equal(a, make_rir(0, 0).samples)


# ---------------------------------------------------------------------------
# noise and mixing
# ---------------------------------------------------------------------------


def test_noise_families_have_unit_rms():
    for env in range(4):
        n = noise_signal(0, env, 0, 8000)
        assert np.sqrt(np.mean(n**2)) == pytest.approx(1.0, abs=1e-9)


def test_noise_is_deterministic_per_realization():
    a = noise_signal(3, 1, 5, 4000)
    b = noise_signal(3, 1, 5, 4000)
    c = noise_signal(3, 1, 6, 4000)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_zero_db_mix_has_equal_powers(rng):
    clean = Waveform(rng.standard_normal(4000) * 0.1, SAMPLE_RATE)
    noise = noise_signal(0, 0, 0, 4000)
    mixed = mix_at_snr(clean, noise, 0.0)
    added = mixed.samples - clean.samples
    p_clean = np.mean(clean.samples**2)
    p_added = np.mean(added**2)
    assert abs(p_clean - p_added) < 1e-9 * max(p_clean, 1e-12)


@pytest.mark.parametrize("target_db", [0.0, 3.0, 10.0, 17.5, 30.0])
def test_mix_hits_the_requested_snr(rng, target_db):
    clean = Waveform(rng.standard_normal(6000) * 0.1, SAMPLE_RATE)
    noise = noise_signal(1, 2, 0, 6000)
    mixed = mix_at_snr(clean, noise, target_db)
    measured = measure_snr_db(clean.samples, mixed.samples - clean.samples)
    assert measured == pytest.approx(target_db, abs=1e-6)


def test_mix_tiles_short_noise(rng):
    clean = Waveform(rng.standard_normal(5000) * 0.1, SAMPLE_RATE)
    short = noise_signal(0, 0, 0, 1024)
    mixed = mix_at_snr(clean, short, 5.0)
    assert len(mixed.samples) == 5000
    measured = measure_snr_db(clean.samples, mixed.samples - clean.samples)
    assert measured == pytest.approx(5.0, abs=1e-6)


# ---------------------------------------------------------------------------
# clean-signal synthesis and the word identity it must carry
# ---------------------------------------------------------------------------


def test_clean_length_counts_words_minus_crossfades():
    v = Vocabulary(size=11, seed=123)
    w = generate_clean([3, 4], v, seed=123)
    word = int(0.120 * SAMPLE_RATE)
    fade = int(0.008 * SAMPLE_RATE)
    assert len(w.samples) == 2 * word - fade


def test_clean_synthesis_is_deterministic():
    v = Vocabulary(size=11, seed=123)
    a = generate_clean([3, 5, 4], v, seed=9)
    b = generate_clean([3, 5, 4], v, seed=9)
    np.testing.assert_array_equal(a.samples, b.samples)


def test_clean_rms_is_near_the_configured_level():
    v = Vocabulary(size=11, seed=123)
    w = generate_clean([3, 4, 5], v, seed=0, rms=0.1)
    assert np.sqrt(np.mean(w.samples**2)) == pytest.approx(0.1, rel=0.15)


def test_each_word_peaks_at_its_own_fundamental():
    v = Vocabulary(size=11, seed=123)
    argmaxes = {}
    for word_id in v.word_ids:
        w = generate_clean([word_id], v, seed=1)
        spec = np.abs(np.fft.rfft(w.samples))
        peak_hz = np.argmax(spec) * SAMPLE_RATE / len(w.samples)
        assert peak_hz == pytest.approx(v.signature(word_id).f0_hz, abs=10.0)
        argmaxes[word_id] = int(np.argmax(spec))
    assert len(set(argmaxes.values())) == len(argmaxes)


def test_nearest_template_recovers_every_word():
    # the learnability floor: mean feature spectra must identify each word
    v = Vocabulary(size=11, seed=123)
    templates = np.stack([v.mean_spectrum(i) for i in v.word_ids])
    templates = templates / np.linalg.norm(templates, axis=1, keepdims=True)
    hits = 0
    for k, word_id in enumerate(v.word_ids):
        w = generate_clean([word_id], v, seed=2)
        mags = features_of(w).magnitudes.mean(axis=0)
        mags = mags / np.linalg.norm(mags)
        assert int(np.argmax(templates @ mags)) == k
        hits += 1
    assert hits == len(v.word_ids)


# ---------------------------------------------------------------------------
# the builder end to end
# ---------------------------------------------------------------------------


def test_built_corpus_has_consistent_manifest(tiny_corpus_dir):
    rows = load_manifest(tiny_corpus_dir)
    assert len(rows) == 7
    by_split = {s: [r for r in rows if r.split == s] for s in ("train", "val", "test")}
    assert (len(by_split["train"]), len(by_split["val"]), len(by_split["test"])) == (5, 1, 1)
    for row in rows:
        assert 5.0 <= row.snr_db <= 15.0
        assert all(FIRST_WORD_ID <= t < 11 for t in row.transcript)
        assert row.words == [f"w{t:04d}" for t in row.transcript]
        clean = read_wav(f"{tiny_corpus_dir}/{row.clean_path}")
        noisy = read_wav(f"{tiny_corpus_dir}/{row.noisy_path}")
        assert len(clean.samples) == len(noisy.samples)
        assert np.abs(noisy.samples).max() <= 1.0


def test_manifest_lines_keep_a_fixed_key_order(tiny_corpus_dir):
    with open(f"{tiny_corpus_dir}/manifest.jsonl", encoding="utf-8") as fh:
        first = fh.readline()
    assert list(json.loads(first).keys()) == [
        "id", "clean_path", "noisy_path", "transcript", "words", "snr_db", "rir_id", "split",
    ]


def test_corpus_meta_round_trips(tiny_corpus_dir):
    meta = load_corpus_meta(tiny_corpus_dir)
    assert meta["seed"] == 123
    assert meta["counts"] == {"train": 5, "val": 1, "test": 1}
    assert meta["vocab_size"] == 11


def test_rebuild_is_byte_identical(tmp_path):
    cfg = tiny_corpus_config(total=7)
    a = tmp_path / "a"
    b = tmp_path / "b"
    build_corpus(cfg, seed=55, out_dir=a)
    build_corpus(cfg, seed=55, out_dir=b)
    for rel in sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file()):
        assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel


def test_different_seeds_change_the_audio(tmp_path):
    cfg = tiny_corpus_config(total=7)
    a = tmp_path / "a"
    b = tmp_path / "b"
    build_corpus(cfg, seed=1, out_dir=a)
    build_corpus(cfg, seed=2, out_dir=b)
    rows_a = load_manifest(a)
    rows_b = load_manifest(b)
    assert any(
        read_wav(a / ra.noisy_path).samples.tolist() != read_wav(b / rb.noisy_path).samples.tolist()
        for ra, rb in zip(rows_a, rows_b)
    )


def test_noisy_minus_clean_is_additive_noise_in_both_orders(tmp_path):
    # with the reference stored as the reverberated clean signal, the
    # residual must carry no clean component in either mixing order
    for order in (True, False):
        out = tmp_path / ("o1" if order else "o2")
        build_corpus(tiny_corpus_config(mix_then_rir=order), seed=3, out_dir=out)
        row = load_manifest(out)[0]
        clean = read_wav(out / row.clean_path).samples
        noisy = read_wav(out / row.noisy_path).samples
        resid = noisy - clean
        # projection of the residual onto the clean signal is tiny compared
        # to the residual itself (quantization noise aside)
        coupling = abs(np.dot(resid, clean)) / (np.linalg.norm(resid) * np.linalg.norm(clean))
        assert coupling < 0.05


def test_load_manifest_filters_by_split(tiny_corpus_dir):
    val = load_manifest(tiny_corpus_dir, split="val")
    assert len(val) == 1
    assert val[0].split == "val"


def test_load_manifest_missing_corpus_raises_oserror(tmp_path):
    with pytest.raises(OSError):
        load_manifest(tmp_path / "nonexistent")


def test_load_manifest_reports_malformed_lines(tmp_path, tiny_corpus_dir):
    broken = tmp_path / "broken"
    shutil.copytree(tiny_corpus_dir, broken)
    with open(broken / "manifest.jsonl", "a", encoding="utf-8") as fh:
        fh.write("{not json\n")
    with pytest.raises(ConfigError, match=r"jsonl:8: malformed"):
        load_manifest(broken)
