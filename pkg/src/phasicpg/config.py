"""Experiment configuration: an INI file with one section per subsystem.

Example::

    [env]
    name = keydoor
    size = 9

    [phasic]
    variant = ppg-dual
    n_pi = 32

    [rollout]
    num_envs = 16

    [harness]
    seeds = 0, 1, 2

Values are typed by the matching dataclass field. Unknown sections and keys are
errors. Keys under ``[env]`` other than ``name`` are passed to the environment
constructor and checked against its signature.
"""
from __future__ import annotations

import configparser
import dataclasses
import inspect
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from .envs import ENVS
from .nn import ConfigurationError
from .phasic import Hyperparameters, hyperparameters_dict

SECTIONS: dict[str, tuple[str, ...]] = {
    "phasic": (
        "variant", "n_pi", "e_pi", "e_v", "e_aux", "beta_clone", "ent_coef", "clip_eps",
        "lr", "beta_pi", "vf_coef", "ppo_epochs", "no_aux_value_e_v", "total_timesteps",
    ),
    "advantage": ("gamma", "lam", "reward_norm", "adv_norm"),
    "rollout": ("n_steps", "num_envs", "minibatches", "aux_minibatches_per_n_pi"),
    "nn": ("hidden", "dtype", "max_grad_norm"),
}
HARNESS_KEYS = ("seeds", "out_dir", "checkpoint_every", "label")
KEY_SECTION = {key: section for section, keys in SECTIONS.items() for key in keys}
_HP_TYPES = {f.name: f.type for f in dataclasses.fields(Hyperparameters)}


@dataclass
class ExperimentConfig:
    env: str = "keydoor"
    env_params: dict[str, Any] = field(default_factory=dict)
    hp: Hyperparameters = field(default_factory=Hyperparameters)
    seeds: tuple[int, ...] = (0,)
    out_dir: str = "runs"
    checkpoint_every: int = 0
    label: str = ""

    @property
    def name(self) -> str:
        return self.label or self.hp.variant

    def validate(self) -> None:
        if self.env not in ENVS:
            raise ConfigurationError(f"env.name: unknown env {self.env!r}; available: {', '.join(sorted(ENVS))}")
        accepted = set(inspect.signature(ENVS[self.env]).parameters) - {"num_envs", "seed"}
        for key in self.env_params:
            if key not in accepted:
                raise ConfigurationError(f"env.{key}: not a parameter of {self.env!r} (accepts {sorted(accepted)})")
        self.hp.validate()
        if not self.seeds:
            raise ConfigurationError("harness.seeds: need at least one seed")
        if self.checkpoint_every < 0:
            raise ConfigurationError("harness.checkpoint_every: must be >= 0")

    def to_dict(self) -> dict:
        return {
            "env": {"name": self.env, **self.env_params},
            "hyperparameters": hyperparameters_dict(self.hp),
            "seeds": list(self.seeds),
            "out_dir": self.out_dir,
            "checkpoint_every": self.checkpoint_every,
            "label": self.label,
        }

    def to_ini(self) -> str:
        """Render a config file that parses back to this configuration."""
        lines = ["[env]", f"name = {self.env}"]
        lines += [f"{k} = {_render(v)}" for k, v in self.env_params.items()]
        for section, keys in SECTIONS.items():
            lines += ["", f"[{section}]"]
            lines += [f"{k} = {_render(getattr(self.hp, k))}" for k in keys]
        lines += [
            "", "[harness]",
            f"seeds = {_render(self.seeds)}",
            f"out_dir = {self.out_dir}",
            f"checkpoint_every = {self.checkpoint_every}",
            f"label = {self.label}",
        ]
        return "\n".join(lines) + "\n"


def _render(value) -> str:
    if isinstance(value, (tuple, list)):
        return ", ".join(str(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def _parse_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _parse_list(raw: str, cast) -> tuple:
    items = [s for s in raw.replace("[", "").replace("]", "").split(",") if s.strip()]
    return tuple(cast(s.strip()) for s in items)


def _coerce_hp(key: str, raw: str):
    typ = _HP_TYPES[key]
    if typ == "bool":
        return _parse_bool(raw)
    if typ == "int":
        return int(float(raw)) if "e" in raw.lower() else int(raw)
    if typ == "float":
        return float(raw)
    if typ.startswith("tuple"):
        return _parse_list(raw, int)
    return raw.strip()


def _coerce_env(raw: str):
    raw = raw.strip()
    for cast in (int, float):
        try:
            return cast(raw)
        except ValueError:
            pass
    if "," in raw:
        return _parse_list(raw, float)
    try:
        return _parse_bool(raw)
    except ValueError:
        return raw


def _apply(cfg: ExperimentConfig, section: str, key: str, raw: str, hp_values: dict) -> None:
    where = f"{section}.{key}"
    try:
        if section == "env":
            if key == "name":
                cfg.env = raw.strip()
            else:
                cfg.env_params[key] = _coerce_env(raw)
        elif section == "harness":
            if key not in HARNESS_KEYS:
                raise ConfigurationError(f"{where}: unknown key")
            if key == "seeds":
                cfg.seeds = _parse_list(raw, int)
            elif key == "checkpoint_every":
                cfg.checkpoint_every = int(raw)
            else:
                setattr(cfg, key, raw.strip())
        elif section in SECTIONS:
            if key not in SECTIONS[section]:
                raise ConfigurationError(f"{where}: unknown key")
            hp_values[key] = _coerce_hp(key, raw)
        else:
            raise ConfigurationError(f"[{section}]: unknown section")
    except ValueError as exc:
        if isinstance(exc, ConfigurationError):
            raise
        raise ConfigurationError(f"{where}: {exc}") from exc


def build_config(
    sections: Mapping[str, Mapping[str, str]] | None = None, overrides: Mapping[str, str] | None = None
) -> ExperimentConfig:
    """Assemble and validate a config from parsed sections plus ``section.key`` overrides.

    Override keys may omit the section for hyperparameters and harness keys
    (``variant=ppo-shared``) since those names are unique.
    """
    cfg = ExperimentConfig()
    hp_values: dict[str, Any] = {}
    for section, items in (sections or {}).items():
        for key, raw in items.items():
            _apply(cfg, section, key, raw, hp_values)
    for dotted, raw in (overrides or {}).items():
        if "." in dotted:
            section, key = dotted.split(".", 1)
        elif dotted in KEY_SECTION:
            section, key = KEY_SECTION[dotted], dotted
        elif dotted in HARNESS_KEYS:
            section, key = "harness", dotted
        elif dotted == "env":
            section, key = "env", "name"
        else:
            raise ConfigurationError(f"{dotted}: unknown override key")
        _apply(cfg, section, key, str(raw), hp_values)
    cfg.hp = dataclasses.replace(cfg.hp, **hp_values)
    cfg.validate()
    return cfg


def read_sections(path: str | Path) -> dict[str, dict[str, str]]:
    parser = configparser.ConfigParser(interpolation=None, default_section="__unused__")
    parser.optionxform = str
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise ConfigurationError(f"{path}: {exc}") from exc
    except OSError as exc:
        raise ConfigurationError(f"{path}: cannot read config ({exc.strerror})") from exc
    return {s: dict(parser[s]) for s in parser.sections()}


def load_config(path: str | Path | None, overrides: Mapping[str, str] | None = None) -> ExperimentConfig:
    sections = read_sections(path) if path is not None else {}
    return build_config(sections, overrides)


def parse_overrides(items: list[str] | None) -> dict[str, str]:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigurationError(f"override {item!r}: expected key=value")
        key, value = item.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def snapshot(cfg: ExperimentConfig, path: str | Path) -> None:
    Path(path).write_text(cfg.to_ini())


def config_json(cfg: ExperimentConfig) -> str:
    return json.dumps(cfg.to_dict(), sort_keys=True)
