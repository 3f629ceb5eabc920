"""Sectioned key-value run configuration.

Sections: [model.teacher], [model.student], [distill], [train], [data].
Unknown keys are rejected; missing required keys are reported with their
section and name. Values round-trip through serialize/parse unchanged.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass
from io import StringIO

from .distill import DistillConfig, TamParams
from .errors import ConfigError
from .model import ModelConfig
from .signal import DataConfig
from .trainer import TrainConfig

_REQUIRED = object()


def _parse_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _parse_list(raw: str, item):
    raw = raw.strip()
    if not raw:
        return ()
    return tuple(item(part.strip()) for part in raw.split(","))


_PARSERS = {
    "int": int,
    "float": float,
    "bool": _parse_bool,
    "str": lambda s: s.strip(),
    "opt_str": lambda s: s.strip() or None,
    "ints": lambda s: _parse_list(s, int),
    "floats": lambda s: _parse_list(s, float),
    "strs": lambda s: _parse_list(s, lambda x: x),
    "opt_ints": lambda s: _parse_list(s, int) if s.strip() else None,
}


def _format_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ",".join(_format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


_MODEL_FIELDS = {
    "depth": ("int", _REQUIRED),
    "base_channels": ("int", _REQUIRED),
    "channel_growth": ("int", 2),
    "kernel": ("int", 8),
    "stride": ("int", 4),
    "ma_placement": ("opt_ints", None),
}

_DISTILL_FIELDS = {
    "lambda_at": ("float", 1.0),
    "lambda_kd": ("float", 1.0),
    "lambda_distill": ("float", 1.0),
    "single_view": ("opt_str", None),
    "dual_depth": ("bool", True),
    "p_map": ("float", 2.0),
    "p_loss": ("int", 1),
    "eps": ("float", 1e-8),
}

_TRAIN_FIELDS = {
    "epochs": ("int", _REQUIRED),
    "seed": ("int", _REQUIRED),
    "batch_size": ("int", 4),
    "learning_rate": ("float", 5e-4),
    "lr_decay": ("float", 0.999),
    "segment_len": ("int", 16384),
    "grad_clip": ("float", 5.0),
    "val_every": ("int", 1),
    "recrop_each_epoch": ("bool", True),
}

_DATA_FIELDS = {
    "seed": ("int", _REQUIRED),
    "n_train": ("int", 200),
    "n_val": ("int", 40),
    "n_test": ("int", 40),
    "duration_s": ("float", 1.0),
    "snr_db": ("floats", (0.0, 5.0, 10.0, 15.0)),
    "train_noise": ("strs", ("white", "pink")),
    "val_noise": ("strs", ("white", "pink")),
    "test_noise": ("strs", ("filtered-babble",)),
}

_SCHEMA = {
    "model.teacher": _MODEL_FIELDS,
    "model.student": _MODEL_FIELDS,
    "distill": _DISTILL_FIELDS,
    "train": _TRAIN_FIELDS,
    "data": _DATA_FIELDS,
}


@dataclass
class RunConfig:
    teacher: ModelConfig | None = None
    student: ModelConfig | None = None
    distill: DistillConfig | None = None
    train: TrainConfig | None = None
    data: DataConfig | None = None

    def require(self, *names):
        for name in names:
            if getattr(self, name) is None:
                section = {"teacher": "model.teacher", "student": "model.student"}.get(name, name)
                raise ConfigError(f"missing required config section [{section}]")
        return self


def _read_sections(text: str) -> dict[str, dict[str, str]]:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keep key case
    try:
        parser.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"cannot parse config: {e}") from e
    out = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        out[section] = dict(parser.items(section))
    return out


def _typed_section(section: str, raw: dict[str, str]) -> dict:
    fields = _SCHEMA[section]
    for key in raw:
        if key not in fields:
            raise ConfigError(f"unknown key '{key}' in section [{section}]")
    values = {}
    for key, (kind, default) in fields.items():
        if key in raw:
            try:
                values[key] = _PARSERS[kind](raw[key])
            except ValueError as e:
                raise ConfigError(f"bad value for [{section}] {key}: {e}") from e
        elif default is _REQUIRED:
            raise ConfigError(f"missing required key '{key}' in section [{section}]")
        else:
            values[key] = default
    return values


def apply_overrides(sections: dict[str, dict[str, str]], overrides) -> None:
    """Apply `section.key=value` strings on top of file values."""
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        target, value = item.split("=", 1)
        if "." not in target:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        section, key = target.rsplit(".", 1)
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        if key not in _SCHEMA[section]:
            raise ConfigError(f"unknown key '{key}' in section [{section}]")
        sections.setdefault(section, {})[key] = value


def parse_run_config(text: str, overrides=()) -> RunConfig:
    sections = _read_sections(text)
    apply_overrides(sections, overrides)
    rc = RunConfig()
    if "model.teacher" in sections:
        vals = _typed_section("model.teacher", sections["model.teacher"])
        rc.teacher = ModelConfig(role="teacher", **vals)
    if "model.student" in sections:
        vals = _typed_section("model.student", sections["model.student"])
        rc.student = ModelConfig(role="student", **vals)
    if "distill" in sections:
        vals = _typed_section("distill", sections["distill"])
        tam = TamParams(p_map=vals.pop("p_map"), p_loss=vals.pop("p_loss"), eps=vals.pop("eps"))
        rc.distill = DistillConfig(tam=tam, **vals)
    if "train" in sections:
        rc.train = TrainConfig(**_typed_section("train", sections["train"]))
    if "data" in sections:
        rc.data = DataConfig(**_typed_section("data", sections["data"]))
    return rc


def load_run_config(path, overrides=()) -> RunConfig:
    try:
        with open(path) as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from e
    return parse_run_config(text, overrides)


def serialize_run_config(rc: RunConfig) -> str:
    out = StringIO()

    def emit(section, obj, fields, extractor=lambda o, k: getattr(o, k)):
        if obj is None:
            return
        out.write(f"[{section}]\n")
        for key in fields:
            out.write(f"{key} = {_format_value(extractor(obj, key))}\n")
        out.write("\n")

    emit("model.teacher", rc.teacher, _MODEL_FIELDS)
    emit("model.student", rc.student, _MODEL_FIELDS)

    def distill_get(cfg, key):
        if key in ("p_map", "p_loss", "eps"):
            return getattr(cfg.tam, key)
        return getattr(cfg, key)

    emit("distill", rc.distill, _DISTILL_FIELDS, distill_get)
    emit("train", rc.train, _TRAIN_FIELDS)
    emit("data", rc.data, _DATA_FIELDS)
    return out.getvalue()
