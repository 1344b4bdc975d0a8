"""Configuration files, presets, and config snapshots.

Run settings live in flat text files of ``key = value`` lines (``#``
comments and blank lines ignored). Keys are grouped by dotted prefix:
``corpus.*`` feeds synthesis, ``model.*`` the architecture, ``train.*``
the optimization schedule. Two built-in presets ship with the package:
``desk`` (small vocabulary and model, minutes on a laptop) and ``paper``
(the full-scale recipe). A user config file and command-line flags
override preset values key by key.

The same ``key = value`` grammar doubles as the snapshot format embedded
in checkpoints and run manifests, so any trained model can be rebuilt
from its checkpoint alone: ``snapshot_text`` serializes the live configs
and ``configs_from_snapshot`` parses them back.
"""

from __future__ import annotations

import json
import os
from dataclasses import replace
from importlib import resources
from typing import Callable

from .corpus import CorpusConfig
from .errors import ConfigError
from .model import CrnnConfig, LmConfig
from .training import TrainConfig

__all__ = [
    "PRESETS",
    "parse_config_text",
    "read_config_file",
    "load_preset",
    "merge_config",
    "validate_config_keys",
    "corpus_config_from",
    "model_configs_from",
    "train_config_from",
    "snapshot_text",
    "configs_from_snapshot",
    "write_json_atomic",
]

PRESETS = ("desk", "paper")


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    """Parse ``key = value`` lines into a string map."""
    kv: dict[str, str] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{line_no}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not key:
            raise ConfigError(f"{source}:{line_no}: missing key before '='")
        if key in kv:
            raise ConfigError(f"{source}:{line_no}: duplicate key {key!r}")
        kv[key] = value
    return kv


def read_config_file(path: str | os.PathLike) -> dict[str, str]:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read(), source=os.fspath(path))


def load_preset(name: str) -> dict[str, str]:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(PRESETS)}")
    text = resources.files("crnndenoise.presets").joinpath(f"{name}.cfg").read_text("utf-8")
    return parse_config_text(text, source=f"preset:{name}")


def merge_config(*layers: dict[str, str]) -> dict[str, str]:
    """Later layers override earlier ones key by key."""
    merged: dict[str, str] = {}
    for layer in layers:
        merged.update(layer)
    return merged


# ---------------------------------------------------------------------------
# typed conversion
# ---------------------------------------------------------------------------


def _as_int(value: str) -> int:
    return int(value, 10)


def _as_float(value: str) -> float:
    return float(value)


_TRUE_WORDS = {"on", "true", "yes", "1"}
_FALSE_WORDS = {"off", "false", "no", "0"}


def _as_bool(value: str) -> bool:
    word = value.strip().lower()
    if word in _TRUE_WORDS:
        return True
    if word in _FALSE_WORDS:
        return False
    raise ValueError(f"expected on/off, got {value!r}")


def _as_int_tuple(value: str) -> tuple[int, ...]:
    parts = [p.strip() for p in value.split(",") if p.strip()]
    if not parts:
        raise ValueError("expected a comma-separated integer list")
    return tuple(int(p, 10) for p in parts)


_CORPUS_FIELDS: dict[str, Callable[[str], object]] = {
    "total": _as_int,
    "vocab_size": _as_int,
    "snr_min_db": _as_float,
    "snr_max_db": _as_float,
    "noise_environments": _as_int,
    "rir_count": _as_int,
    "words_min": _as_int,
    "words_max": _as_int,
    "word_ms": _as_int,
    "crossfade_ms": _as_int,
    "mix_then_rir": _as_bool,
    "sample_rate": _as_int,
    "rms": _as_float,
}

_CRNN_FIELDS: dict[str, Callable[[str], object]] = {
    "context_frames": _as_int,
    "context_back": _as_int,
    "conv_filters": _as_int_tuple,
    "dilation": _as_int_tuple,
    "lstm_layers": _as_int,
    "hidden": _as_int,
}

_LM_FIELDS: dict[str, Callable[[str], object]] = {
    "vocab_size": _as_int,
    "embed_dim": _as_int,
    "max_words": _as_int,
}

_TRAIN_FIELDS: dict[str, Callable[[str], object]] = {
    "lr": _as_float,
    "beta1": _as_float,
    "beta2": _as_float,
    "epsilon": _as_float,
    "weight_decay_crnn": _as_float,
    "weight_decay_lm": _as_float,
    "lambda1": _as_float,
    "epochs_max": _as_int,
    "patience": _as_int,
    "min_delta": _as_float,
    "grad_clip": _as_float,
    "lm": _as_bool,
    "curriculum": _as_bool,
    "seed": _as_int,
}


def _known_keys() -> set[str]:
    keys = {f"corpus.{name}" for name in _CORPUS_FIELDS}
    keys |= {f"model.{name}" for name in _CRNN_FIELDS}
    keys |= {f"model.{name}" for name in _LM_FIELDS}
    keys |= {f"train.{name}" for name in _TRAIN_FIELDS}
    return keys


def validate_config_keys(kv: dict[str, str]) -> None:
    unknown = sorted(set(kv) - _known_keys())
    if unknown:
        raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")


def _collect(kv: dict[str, str], section: str, fields: dict[str, Callable[[str], object]]) -> dict:
    out = {}
    for name, convert in fields.items():
        key = f"{section}.{name}"
        if key in kv:
            try:
                out[name] = convert(kv[key])
            except ValueError as exc:
                raise ConfigError(f"{key}: cannot parse {kv[key]!r}: {exc}") from exc
    return out


def corpus_config_from(kv: dict[str, str]) -> CorpusConfig:
    cfg = replace(CorpusConfig(), **_collect(kv, "corpus", _CORPUS_FIELDS))
    cfg.validate()
    return cfg


def model_configs_from(kv: dict[str, str]) -> tuple[CrnnConfig, LmConfig]:
    crnn_kwargs = _collect(kv, "model", _CRNN_FIELDS)
    for tuple_field, width in (("conv_filters", 3), ("dilation", 2)):
        if tuple_field in crnn_kwargs and len(crnn_kwargs[tuple_field]) != width:
            raise ConfigError(
                f"model.{tuple_field} needs {width} comma-separated integers, "
                f"got {len(crnn_kwargs[tuple_field])}"
            )
    crnn = replace(CrnnConfig(), **crnn_kwargs)
    lm = replace(LmConfig(), **_collect(kv, "model", _LM_FIELDS))
    crnn.validate()
    lm.validate()
    return crnn, lm


def train_config_from(kv: dict[str, str]) -> TrainConfig:
    cfg = replace(TrainConfig(), **_collect(kv, "train", _TRAIN_FIELDS))
    cfg.validate()
    return cfg


# ---------------------------------------------------------------------------
# snapshots
# ---------------------------------------------------------------------------


def _value_str(value) -> str:
    if isinstance(value, bool):
        return "on" if value else "off"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def snapshot_text(
    model_cfg: CrnnConfig,
    lm_cfg: LmConfig,
    train_cfg: TrainConfig,
    corpus_cfg: CorpusConfig | None = None,
) -> str:
    """Canonical config lines for embedding in checkpoints and manifests.

    Every field is written explicitly, so parsing the snapshot back does
    not depend on defaults staying put.
    """
    kv: dict[str, str] = {}
    if corpus_cfg is not None:
        for name in _CORPUS_FIELDS:
            kv[f"corpus.{name}"] = _value_str(getattr(corpus_cfg, name))
    for name in _CRNN_FIELDS:
        kv[f"model.{name}"] = _value_str(getattr(model_cfg, name))
    for name in _LM_FIELDS:
        kv[f"model.{name}"] = _value_str(getattr(lm_cfg, name))
    for name in _TRAIN_FIELDS:
        kv[f"train.{name}"] = _value_str(getattr(train_cfg, name))
    return "".join(f"{key} = {kv[key]}\n" for key in sorted(kv))


def configs_from_snapshot(text: str) -> tuple[CrnnConfig, LmConfig, TrainConfig]:
    kv = parse_config_text(text, source="<snapshot>")
    crnn, lm = model_configs_from(kv)
    return crnn, lm, train_config_from(kv)


def write_json_atomic(path: str | os.PathLike, payload: dict) -> None:
    tmp = os.fspath(path) + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, allow_nan=False)
        fh.write("\n")
    os.replace(tmp, path)
