"""Evaluation metrics and the corpus-level evaluation driver.

Waveform metrics compare the enhanced signal against the clean reference
over the interior of the region the analysis/synthesis pipeline covers
(one frame in from each edge, where overlap-add synthesis is exact): plain
signal-to-noise ratio, plus the classic source-separation decomposition
(distortion, interference, artifact ratios) computed in closed form by
projecting the estimate onto the clean signal and onto the span of the
clean signal and the injected noise. Spectral quality uses log-spectral
distance on magnitude features and the same squared-error measure the
trainer optimizes. Recognition quality uses word-level edit distance:
per-utterance word error rate, exact-match rate, and a corpus rate that
weights utterances by reference length.

All decibel values are clipped to [-100, 100] so degenerate signals
(identical, silent, or orthogonal) stay representable in reports.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .dsp import (
    FRAME_LEN,
    FeatureSequence,
    covered_length,
    features_of,
    frame_count,
    read_wav,
    reconstruct,
)
from .errors import ConfigError, DimensionError
from .corpus import load_manifest
from .model import CrnnConfig, LmConfig, ModelParams, crnn_forward, lm_greedy_decode

__all__ = [
    "snr",
    "lsd",
    "bss_eval",
    "edit_distance",
    "wer",
    "MetricRow",
    "MetricReport",
    "evaluate",
    "write_report",
    "REPORT_COLUMNS",
]

DB_CAP = 100.0
REPORT_COLUMNS = "id,snr_db,lsd,mse,sir_db,sdr_db,sar_db,wer,correct"


def _db_ratio(num: float, den: float) -> float:
    """10·log10(num/den), clipped to ±DB_CAP, with zero cases pinned."""
    if den <= 0.0:
        return 0.0 if num <= 0.0 else DB_CAP
    if num <= 0.0:
        return -DB_CAP
    return float(np.clip(10.0 * np.log10(num / den), -DB_CAP, DB_CAP))


def snr(clean: np.ndarray, estimate: np.ndarray) -> float:
    """Signal-to-noise ratio in dB: clean power over residual power."""
    clean = np.asarray(clean, dtype=np.float64)
    estimate = np.asarray(estimate, dtype=np.float64)
    if clean.shape != estimate.shape:
        raise DimensionError(f"snr: shapes differ, {clean.shape} vs {estimate.shape}")
    return _db_ratio(float(np.sum(clean**2)), float(np.sum((clean - estimate) ** 2)))


def lsd(clean_mags: np.ndarray, est_mags: np.ndarray, eps: float = 1e-8) -> float:
    """Log-spectral distance in dB, root-mean-square over bins then
    averaged over frames."""
    clean_mags = np.asarray(clean_mags, dtype=np.float64)
    est_mags = np.asarray(est_mags, dtype=np.float64)
    if clean_mags.shape != est_mags.shape or clean_mags.ndim != 2:
        raise DimensionError(
            f"lsd: need matching 2-D magnitudes, got {clean_mags.shape} vs {est_mags.shape}"
        )
    diff = 20.0 * np.log10((est_mags + eps) / (clean_mags + eps))
    return float(np.mean(np.sqrt(np.mean(diff**2, axis=1))))


def bss_eval(clean: np.ndarray, noise_ref: np.ndarray, estimate: np.ndarray) -> tuple[float, float, float]:
    """Source-separation ratios in dB, returned as ``(sdr, sir, sar)``.

    The estimate is split into a target part (its projection onto the clean
    signal), an interference part (the rest of its projection onto the
    clean-plus-noise plane), and an artifact part (whatever is left). When
    the noise reference is degenerate (zero or collinear with the clean
    signal) the plane collapses to the clean line and interference is zero.
    """
    s = np.asarray(clean, dtype=np.float64).ravel()
    n = np.asarray(noise_ref, dtype=np.float64).ravel()
    e = np.asarray(estimate, dtype=np.float64).ravel()
    if not (s.shape == n.shape == e.shape):
        raise DimensionError(
            f"bss_eval: shapes differ, {s.shape} vs {n.shape} vs {e.shape}"
        )
    ss = float(s @ s)
    if ss <= 0.0:
        return -DB_CAP, -DB_CAP, -DB_CAP
    es = float(e @ s)
    s_target = (es / ss) * s

    sn = float(s @ n)
    nn = float(n @ n)
    en = float(e @ n)
    det = ss * nn - sn * sn
    if nn <= 0.0 or det <= 1e-12 * ss * nn:
        e_proj = s_target
    else:
        c1 = (es * nn - en * sn) / det
        c2 = (en * ss - es * sn) / det
        e_proj = c1 * s + c2 * n

    e_interf = e_proj - s_target
    e_artif = e - e_proj
    p_target = float(s_target @ s_target)
    sir = _db_ratio(p_target, float(e_interf @ e_interf))
    sdr = _db_ratio(p_target, float((e_interf + e_artif) @ (e_interf + e_artif)))
    sar = _db_ratio(float(e_proj @ e_proj), float(e_artif @ e_artif))
    return sdr, sir, sar


def edit_distance(ref: list, hyp: list) -> int:
    """Levenshtein distance with unit costs, two-row dynamic program."""
    if len(ref) < len(hyp):
        ref, hyp = hyp, ref  # keep the inner row short
    prev = list(range(len(hyp) + 1))
    for i, r in enumerate(ref, start=1):
        cur = [i] + [0] * len(hyp)
        for j, h in enumerate(hyp, start=1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (r != h))
        prev = cur
    return prev[-1]


def wer(ref: list, hyp: list) -> float:
    """Word error rate: edit distance over reference length.

    An empty reference scores 0.0 against an empty hypothesis and the
    hypothesis length (as a float) otherwise, so insertions against
    silence still register.
    """
    if len(ref) == 0:
        return 0.0 if len(hyp) == 0 else float(len(hyp))
    return edit_distance(ref, hyp) / len(ref)


# ---------------------------------------------------------------------------
# corpus evaluation
# ---------------------------------------------------------------------------


@dataclass
class MetricRow:
    id: str
    snr_db: float
    lsd: float
    mse: float
    sir_db: float
    sdr_db: float
    sar_db: float
    wer: float
    correct: bool
    edits: int = 0
    ref_words: int = 0
    hyp_words: list[int] = field(default_factory=list)


@dataclass
class MetricReport:
    split: str
    estimate_source: str
    rows: list[MetricRow]

    def aggregates(self) -> dict[str, float | None]:
        """Corpus-level summary. Error-rate fields are None when no
        recognizer ran (per-row values are nan then)."""
        n = len(self.rows)
        mean = lambda key: float(np.mean([getattr(r, key) for r in self.rows]))
        agg: dict[str, float | None] = {
            "snr": mean("snr_db"),
            "lsd": mean("lsd"),
            "mse": mean("mse"),
            "sir": mean("sir_db"),
            "sdr": mean("sdr_db"),
            "sar": mean("sar_db"),
        }
        if any(math.isnan(r.wer) for r in self.rows):
            agg["wer"] = None
            agg["ser"] = None
        else:
            total_ref = sum(r.ref_words for r in self.rows)
            total_edits = sum(r.edits for r in self.rows)
            agg["wer"] = total_edits / total_ref if total_ref else 0.0
            agg["ser"] = sum(1 for r in self.rows if not r.correct) / n
        return agg


def evaluate(
    corpus_dir: str,
    split: str,
    params: ModelParams,
    model_cfg: CrnnConfig,
    lm_cfg: LmConfig,
    *,
    estimate_source: str = "model",
    lm_enabled: bool = True,
) -> MetricReport:
    """Score one manifest split utterance by utterance.

    ``estimate_source`` selects what stands in as the enhanced signal:
    ``model`` runs the denoiser and rebuilds audio from denoised magnitudes
    with the noisy phases; ``noisy`` and ``clean`` pass those signals
    through unchanged, giving the do-nothing floor and the oracle ceiling.
    The recognizer (when enabled) always decodes from the encoder state on
    the estimate's own input features. Spectral metrics use every analyzed
    frame; waveform metrics compare interior samples only (one frame in
    from each edge), because overlap-add synthesis cannot reproduce the
    outermost samples, where the analysis window falls to zero.
    """
    if estimate_source not in ("model", "noisy", "clean"):
        raise ConfigError(
            f"estimate_source must be one of model, noisy, clean; got {estimate_source!r}"
        )
    rows_in = load_manifest(corpus_dir, split=split)
    if not rows_in:
        raise ConfigError(f"no utterances in split {split!r} of corpus {corpus_dir}")

    out_rows: list[MetricRow] = []
    for row in rows_in:
        clean_wave = read_wav(os.path.join(corpus_dir, row.clean_path))
        noisy_wave = read_wav(os.path.join(corpus_dir, row.noisy_path))
        cov = covered_length(frame_count(len(noisy_wave.samples)))
        clean_sig = clean_wave.samples[:cov]
        noisy_sig = noisy_wave.samples[:cov]
        noise_ref = noisy_sig - clean_sig
        # waveform metrics skip the edge samples overlap-add cannot rebuild
        interior = slice(FRAME_LEN, cov - FRAME_LEN) if cov > 2 * FRAME_LEN else slice(0, cov)

        clean_feats = features_of(clean_wave)
        noisy_feats = features_of(noisy_wave)

        if estimate_source == "model":
            denoised, state = crnn_forward(noisy_feats, params.crnn, model_cfg)
            est_mags = denoised.data.astype(np.float64)
            est_sig = reconstruct(FeatureSequence(est_mags, noisy_feats.phases)).samples
        elif estimate_source == "noisy":
            _, state = crnn_forward(noisy_feats, params.crnn, model_cfg)
            est_mags = noisy_feats.magnitudes
            est_sig = noisy_sig
        else:  # clean
            _, state = crnn_forward(clean_feats, params.crnn, model_cfg)
            est_mags = clean_feats.magnitudes
            est_sig = clean_sig

        mse = float(np.sum((est_mags - clean_feats.magnitudes) ** 2) / est_mags.shape[0])
        sdr, sir, sar = bss_eval(clean_sig[interior], noise_ref[interior], est_sig[interior])

        ref = [int(w) for w in row.transcript]
        if lm_enabled:
            hyp = lm_greedy_decode(state, params.lm, lm_cfg, max_len=lm_cfg.max_words)
            edits = edit_distance(ref, hyp)
            row_wer = wer(ref, hyp)
            correct = edits == 0
        else:
            hyp, edits, row_wer, correct = [], 0, math.nan, False

        out_rows.append(
            MetricRow(
                id=row.utt_id,
                snr_db=snr(clean_sig[interior], est_sig[interior]),
                lsd=lsd(clean_feats.magnitudes, est_mags),
                mse=mse,
                sir_db=sir,
                sdr_db=sdr,
                sar_db=sar,
                wer=row_wer,
                correct=correct,
                edits=edits,
                ref_words=len(ref),
                hyp_words=hyp,
            )
        )
    return MetricReport(split=split, estimate_source=estimate_source, rows=out_rows)


def _fmt(x: float) -> str:
    return "nan" if math.isnan(x) else f"{x:.8g}"


def write_report(report: MetricReport, out_dir: str) -> tuple[str, str]:
    """Write ``report.csv`` (one row per utterance) and ``summary.json``
    (counts plus corpus aggregates). Returns both paths."""
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, "report.csv")
    tmp = csv_path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(REPORT_COLUMNS + "\n")
        for r in report.rows:
            fh.write(
                f"{r.id},{_fmt(r.snr_db)},{_fmt(r.lsd)},{_fmt(r.mse)},{_fmt(r.sir_db)},"
                f"{_fmt(r.sdr_db)},{_fmt(r.sar_db)},{_fmt(r.wer)},{'true' if r.correct else 'false'}\n"
            )
    os.replace(tmp, csv_path)

    json_path = os.path.join(out_dir, "summary.json")
    payload = {
        "split": report.split,
        "estimate_source": report.estimate_source,
        "count": len(report.rows),
        "aggregates": report.aggregates(),
    }
    tmp = json_path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, allow_nan=False)
        fh.write("\n")
    os.replace(tmp, json_path)
    return csv_path, json_path
