"""Training loop, curriculum schedule, and loss plumbing.

The run optimizes the denoiser on a spectral reconstruction loss and,
optionally, a word decoder on a recognition loss. With the curriculum
enabled the run starts in a denoise-only phase and switches — once the
validation reconstruction loss plateaus — to a joint phase where the
combined objective (reconstruction plus ``lambda1`` times recognition)
trains both parts together. The switch happens once and never reverts.
With the curriculum disabled but the decoder enabled, the joint phase
runs from the first epoch. With the decoder disabled the run is
denoise-only throughout.

Each utterance is one optimization step: forward, reverse sweep, global
gradient-norm clip, then a decoupled-weight-decay Adam update — one
optimizer state for the denoiser group and one for the decoder group,
the latter stepped only in the joint phase. Validation runs after every
epoch and drives a plateau counter (``patience`` epochs without at least
``min_delta`` improvement); in the first curriculum phase a full counter
triggers the one-way phase switch. Runs always last ``epochs_max``
epochs, so runs that differ only in schedule see the same data budget.

The epoch log is a CSV with columns
``epoch,phase,train_L_re,train_L_lm,val_L_re,val_L_lm,wall_seconds``;
loss columns that do not apply to the active phase hold ``nan``.
"""

from __future__ import annotations

import logging
import math
import os
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Graph, Tensor
from .checkpoint import (
    PHASE_DENOISE_ONLY,
    PHASE_JOINT,
    AdamSnapshot,
    Checkpoint,
    apply_params,
    load_checkpoint,
    restore_adam,
    save_checkpoint,
    snapshot_adam,
)
from .corpus import load_manifest
from .dsp import features_of, read_wav
from .errors import ConfigError, NumericsError
from .model import (
    CrnnConfig,
    LmConfig,
    ModelParams,
    crnn_forward,
    init_model_params,
    lm_decode,
    named_parameters,
)
from .optim import AdamState, adam_step, clip_global_norm
from .vocab import EOS_ID

__all__ = [
    "TrainConfig",
    "CurriculumState",
    "TrainResult",
    "curriculum_update",
    "loss_re",
    "loss_combined",
    "train",
    "variant_label",
    "LOG_COLUMNS",
]

log = logging.getLogger("crnndenoise.train")

LOG_COLUMNS = "epoch,phase,train_L_re,train_L_lm,val_L_re,val_L_lm,wall_seconds"


@dataclass(frozen=True)
class TrainConfig:
    """Optimization and schedule settings."""

    lr: float = 6.4710e-5
    beta1: float = 0.8
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay_crnn: float = 2.8951e-5
    weight_decay_lm: float = 3.6998e-5
    lambda1: float = 0.1
    epochs_max: int = 40
    patience: int = 10
    min_delta: float = 1e-4
    grad_clip: float = 5.0
    lm: bool = True
    curriculum: bool = True
    seed: int = 0

    def validate(self) -> None:
        if self.curriculum and not self.lm:
            raise ConfigError(
                "train.curriculum requires the word decoder; set lm = on or curriculum = off"
            )
        if self.lr <= 0:
            raise ConfigError(f"train.lr must be > 0, got {self.lr}")
        for name in ("beta1", "beta2"):
            val = getattr(self, name)
            if not 0.0 <= val < 1.0:
                raise ConfigError(f"train.{name} must be in [0, 1), got {val}")
        if self.epsilon <= 0:
            raise ConfigError(f"train.epsilon must be > 0, got {self.epsilon}")
        if self.weight_decay_crnn < 0 or self.weight_decay_lm < 0:
            raise ConfigError("weight decay must be >= 0")
        if self.lambda1 < 0:
            raise ConfigError(f"train.lambda1 must be >= 0, got {self.lambda1}")
        if self.epochs_max < 1:
            raise ConfigError(f"train.epochs_max must be >= 1, got {self.epochs_max}")
        if self.patience < 1:
            raise ConfigError(f"train.patience must be >= 1, got {self.patience}")
        if self.min_delta < 0:
            raise ConfigError(f"train.min_delta must be >= 0, got {self.min_delta}")
        if self.grad_clip <= 0:
            raise ConfigError(f"train.grad_clip must be > 0, got {self.grad_clip}")


@dataclass(frozen=True)
class CurriculumState:
    """Plateau bookkeeping for the active phase."""

    phase: str
    best_val: float = math.inf
    epochs_since_improvement: int = 0


def curriculum_update(
    state: CurriculumState, val_loss: float, patience: int, min_delta: float
) -> tuple[CurriculumState, bool]:
    """Advance the plateau counter with one validation result.

    Returns the new state and whether this update crossed the patience
    threshold. An improvement must beat the best seen value by more than
    ``min_delta`` to reset the counter. The caller decides what a full
    counter means (the phase switch, in the first curriculum phase); a
    switch must start a fresh state for the new phase.
    """
    if not math.isfinite(val_loss):
        raise NumericsError(
            f"plateau tracking needs a finite validation loss, got {val_loss}"
        )
    if val_loss < state.best_val - min_delta:
        return replace(state, best_val=val_loss, epochs_since_improvement=0), False
    counter = state.epochs_since_improvement + 1
    return replace(state, epochs_since_improvement=counter), counter >= patience


def loss_re(denoised: Tensor, clean_mags: np.ndarray) -> Tensor:
    """Reconstruction loss: squared spectral error, summed over bins and
    averaged over frames."""
    return ad.mse_loss(denoised, clean_mags)


def loss_combined(l_re: Tensor, l_lm: Tensor | None, lambda1: float) -> Tensor:
    """Joint objective: reconstruction plus ``lambda1`` times recognition.

    With ``lambda1`` equal to zero the sum is exact in IEEE arithmetic, so
    the loss (and every gradient flowing to the denoiser) matches the
    decoder-free run bit for bit.
    """
    if l_lm is None:
        raise ValueError("loss_combined: recognition loss is required; use loss_re without a decoder")
    return ad.add(l_re, ad.scale(l_lm, lambda1))


def variant_label(cfg: TrainConfig) -> str:
    """Ablation-variant tag for artifacts: the denoiser alone, with the word
    decoder, or with the decoder under the two-phase schedule."""
    if not cfg.lm:
        return "crnn"
    return "crnn_lm_cl" if cfg.curriculum else "crnn_lm"


@dataclass
class TrainResult:
    epochs_run: int
    final_phase: str
    best_score: float
    switched_epoch: int | None
    best_path: str
    last_path: str
    phase1_path: str | None
    log_path: str
    history: list[dict] = field(default_factory=list)
    params: ModelParams | None = None


@dataclass
class _Item:
    utt_id: str
    noisy: np.ndarray  # (T, 256) float32
    clean: np.ndarray  # (T, 256) float32
    words: list[int]


def _load_items(corpus_dir: str, split: str) -> list[_Item]:
    rows = load_manifest(corpus_dir, split=split)
    if not rows:
        raise ConfigError(f"no utterances in split {split!r} of corpus {corpus_dir}")
    items = []
    for row in rows:
        noisy = features_of(read_wav(os.path.join(corpus_dir, row.noisy_path)))
        clean = features_of(read_wav(os.path.join(corpus_dir, row.clean_path)))
        items.append(
            _Item(
                utt_id=row.utt_id,
                noisy=noisy.magnitudes.astype(np.float32),
                clean=clean.magnitudes.astype(np.float32),
                words=[int(w) for w in row.transcript],
            )
        )
    return items


def _fmt(x: float) -> str:
    return "nan" if math.isnan(x) else f"{x:.8g}"


def _targets(words: list[int]) -> np.ndarray:
    return np.array([*words, EOS_ID], dtype=np.int64)


def _param_arrays(named: dict[str, Tensor]) -> dict[str, np.ndarray]:
    return {k: np.array(t.data, copy=True) for k, t in named.items()}


def _grad_arrays(named: dict[str, Tensor]) -> dict[str, np.ndarray]:
    grads: dict[str, np.ndarray] = {}
    for name, tensor in named.items():
        if tensor.grad is None:
            raise NumericsError(f"parameter {name} received no gradient")
        grads[name] = tensor.grad
    return grads


def _clear_grads(named: dict[str, Tensor]) -> None:
    for tensor in named.values():
        tensor.grad = None


def train(
    corpus_dir: str,
    out_dir: str,
    model_cfg: CrnnConfig,
    lm_cfg: LmConfig,
    cfg: TrainConfig,
    *,
    init_checkpoint: str | None = None,
    val_split: str = "val",
    config_text: str = "",
) -> TrainResult:
    """Run the full training schedule and write checkpoints and the log.

    ``init_checkpoint`` warm-starts the parameters (optimizer state and
    schedule start fresh). ``val_split`` names the manifest split used for
    validation; ``config_text`` is embedded verbatim in every checkpoint so
    later commands can rebuild the model without the original flags.
    """
    cfg.validate()
    model_cfg.validate()
    lm_cfg.validate()
    os.makedirs(out_dir, exist_ok=True)

    train_items = _load_items(corpus_dir, "train")
    val_items = _load_items(corpus_dir, val_split)
    log.info("loaded %d train / %d val utterances", len(train_items), len(val_items))

    params = init_model_params(model_cfg, lm_cfg, cfg.seed)
    if init_checkpoint is not None:
        ckpt = load_checkpoint(init_checkpoint)
        apply_params(ckpt.params, named_parameters(params))
        log.info("warm start from %s", init_checkpoint)

    crnn_named = named_parameters(params.crnn, "crnn.")
    lm_named = named_parameters(params.lm, "lm.")
    crnn_state = AdamState(
        lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, epsilon=cfg.epsilon,
        weight_decay=cfg.weight_decay_crnn,
    )
    lm_state = AdamState(
        lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, epsilon=cfg.epsilon,
        weight_decay=cfg.weight_decay_lm,
    )

    start_phase = PHASE_DENOISE_ONLY if (cfg.curriculum or not cfg.lm) else PHASE_JOINT
    sched = CurriculumState(phase=start_phase)
    switched_epoch: int | None = None
    best_score = math.inf
    best_path = os.path.join(out_dir, "checkpoint_best.ckpt")
    last_path = os.path.join(out_dir, "checkpoint_last.ckpt")
    phase1_path: str | None = None
    log_path = os.path.join(out_dir, f"training_log_{variant_label(cfg)}.csv")
    history: list[dict] = []

    def joint_active() -> bool:
        return cfg.lm and sched.phase == PHASE_JOINT

    def make_checkpoint(epoch: int) -> Checkpoint:
        adam: list[AdamSnapshot] = [snapshot_adam(crnn_state)]
        if cfg.lm:
            adam.append(snapshot_adam(lm_state))
        return Checkpoint(
            config_text=config_text,
            phase=sched.phase,
            epoch=epoch,
            best_val=sched.best_val,
            epochs_since_improvement=sched.epochs_since_improvement,
            params={**_param_arrays(crnn_named), **_param_arrays(lm_named)},
            adam=adam,
        )

    def epoch_losses(items: list[_Item], train_mode: bool, epoch: int) -> tuple[float, float]:
        """Mean reconstruction and recognition loss; the latter is nan
        outside the joint phase. In train mode every utterance also takes
        an optimization step."""
        order = np.arange(len(items))
        if train_mode:
            rng = np.random.default_rng([cfg.seed, 500 + epoch])
            rng.shuffle(order)
        sum_re = 0.0
        sum_lm = 0.0
        for idx in order:
            item = items[idx]
            if train_mode:
                with Graph() as graph:
                    denoised, state = crnn_forward(item.noisy, params.crnn, model_cfg)
                    l_re = loss_re(denoised, item.clean)
                    if joint_active():
                        logits = lm_decode(state, item.words, params.lm, lm_cfg)
                        l_lm = ad.cross_entropy(logits, _targets(item.words))
                        loss = loss_combined(l_re, l_lm, cfg.lambda1)
                        sum_lm += float(l_lm.data)
                    else:
                        loss = l_re
                    loss_val = float(loss.data)
                    if not math.isfinite(loss_val):
                        raise NumericsError(
                            f"training loss is not finite at epoch {epoch}"
                            f" on utterance {item.utt_id} (got {loss_val})"
                        )
                    ad.backward(loss, graph)
                sum_re += float(l_re.data)
                grads = _grad_arrays(crnn_named)
                if joint_active():
                    lm_grads = _grad_arrays(lm_named)
                    clip_global_norm({**grads, **lm_grads}, cfg.grad_clip)
                    adam_step(crnn_named, grads, crnn_state)
                    adam_step(lm_named, lm_grads, lm_state)
                else:
                    clip_global_norm(grads, cfg.grad_clip)
                    adam_step(crnn_named, grads, crnn_state)
                _clear_grads(crnn_named)
                _clear_grads(lm_named)
            else:
                denoised, state = crnn_forward(item.noisy, params.crnn, model_cfg)
                l_re_val = float(loss_re(denoised, item.clean).data)
                if not math.isfinite(l_re_val):
                    raise NumericsError("validation reconstruction loss is not finite")
                sum_re += l_re_val
                if joint_active():
                    logits = lm_decode(state, item.words, params.lm, lm_cfg)
                    sum_lm += float(ad.cross_entropy(logits, _targets(item.words)).data)
        mean_re = sum_re / len(items)
        mean_lm = sum_lm / len(items) if joint_active() else math.nan
        return mean_re, mean_lm

    with open(log_path, "w", encoding="utf-8") as log_file:
        log_file.write(LOG_COLUMNS + "\n")
        epochs_run = 0
        for epoch in range(1, cfg.epochs_max + 1):
            t0 = time.monotonic()
            phase = sched.phase
            train_re, train_lm = epoch_losses(train_items, train_mode=True, epoch=epoch)
            val_re, val_lm = epoch_losses(val_items, train_mode=False, epoch=epoch)
            wall = time.monotonic() - t0
            epochs_run = epoch

            row = {
                "epoch": epoch,
                "phase": phase,
                "train_L_re": train_re,
                "train_L_lm": train_lm,
                "val_L_re": val_re,
                "val_L_lm": val_lm,
                "wall_seconds": wall,
            }
            history.append(row)
            log_file.write(
                f"{epoch},{phase},{_fmt(train_re)},{_fmt(train_lm)},"
                f"{_fmt(val_re)},{_fmt(val_lm)},{_fmt(wall)}\n"
            )
            log_file.flush()
            log.info(
                "epoch %d [%s] train_L_re=%.6g val_L_re=%.6g (%.2fs)", epoch, phase, train_re, val_re, wall
            )

            # The schedule watches the reconstruction loss; the recognition
            # term enters the saved-checkpoint score but not the plateau.
            score = val_re if math.isnan(val_lm) else val_re + cfg.lambda1 * val_lm
            if score < best_score - cfg.min_delta:
                best_score = score
                save_checkpoint(best_path, make_checkpoint(epoch))

            sched, exhausted = curriculum_update(sched, val_re, cfg.patience, cfg.min_delta)
            save_checkpoint(last_path, make_checkpoint(epoch))

            if exhausted and cfg.curriculum and sched.phase == PHASE_DENOISE_ONLY:
                phase1_path = os.path.join(out_dir, "checkpoint_phase1.ckpt")
                save_checkpoint(phase1_path, make_checkpoint(epoch))
                sched = CurriculumState(phase=PHASE_JOINT)
                best_score = math.inf  # the joint score is a new scale
                log.info("validation plateau after epoch %d: switching to joint phase", epoch)
                switched_epoch = epoch

    if not os.path.exists(best_path):
        save_checkpoint(best_path, make_checkpoint(epochs_run))
    return TrainResult(
        epochs_run=epochs_run,
        final_phase=sched.phase,
        best_score=best_score,
        switched_epoch=switched_epoch,
        best_path=best_path,
        last_path=last_path,
        phase1_path=phase1_path,
        log_path=log_path,
        history=history,
        params=params,
    )
