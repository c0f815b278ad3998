"""Run configuration files: sectioned ``key = value`` text, strictly validated.

Sections are ``[run]`` (env, dataset, seeds, out), ``[data]`` (collection),
``[model]`` and ``[train]``. Unknown sections or keys and unparsable values are
reported with the line they appear on.
"""
from __future__ import annotations

import configparser
import dataclasses
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .envs import ENVS
from .models import ModelConfig
from .training import AcfConfig


class ConfigError(ValueError):
    def __init__(self, message, path=None, line=None):
        where = f"{path}:{line}: " if path is not None and line is not None else (
            f"{path}: " if path is not None else "")
        super().__init__(where + message)
        self.path, self.line = path, line


@dataclass
class DataSection:
    steps: int = 20000
    seed: int = 0
    policy: str = "uniform"
    episode_length: int = 64


@dataclass
class EvalSection:
    pairs: int = 5000
    split_seed: int = 0
    epochs: int = 200
    bins: int = 8


@dataclass
class RunConfig:
    env: str
    dataset: str = ""
    seeds: list[int] = field(default_factory=lambda: [0])
    out: str = "out"
    data: DataSection = field(default_factory=DataSection)
    model: ModelConfig | None = None
    train: AcfConfig | None = None
    eval: EvalSection = field(default_factory=EvalSection)

    def __post_init__(self):
        if self.env not in ENVS:
            raise ConfigError(f"unknown env {self.env!r}; available: {', '.join(sorted(ENVS))}")
        if self.model is None:
            self.model = ModelConfig.for_domain(self.env)
        if self.train is None:
            self.train = AcfConfig.for_domain(self.env)
        if not self.dataset:
            self.dataset = f"data/{self.env}.acfd"

    def to_dict(self) -> dict:
        return {"run": {"env": self.env, "dataset": self.dataset, "seeds": list(self.seeds),
                        "out": self.out},
                "data": dataclasses.asdict(self.data), "model": self.model.to_dict(),
                "train": self.train.to_dict(), "eval": dataclasses.asdict(self.eval)}

    def to_text(self) -> str:
        d = self.to_dict()
        d["run"]["seeds"] = ", ".join(str(s) for s in self.seeds)
        lines = []
        for section, values in d.items():
            lines.append(f"[{section}]")
            lines.extend(f"{k} = {_fmt(v)}" for k, v in values.items())
            lines.append("")
        return "\n".join(lines)


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


_RUN_KEYS = {"env": str, "dataset": str, "seeds": "seeds", "out": str}


def _parse_value(raw: str, kind):
    raw = raw.strip()
    if kind == "seeds":
        return [int(s) for s in re.split(r"[,\s]+", raw) if s]
    if kind is bool:
        low = raw.lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if kind is int:
        return int(raw)
    if kind is float:
        return float(raw)
    return raw


def _field_types(cls):
    hints = {"int": int, "float": float, "bool": bool, "str": str}
    return {f.name: hints.get(f.type if isinstance(f.type, str) else f.type.__name__, str)
            for f in dataclasses.fields(cls)}


SECTIONS = {"run": _RUN_KEYS, "data": _field_types(DataSection),
            "model": _field_types(ModelConfig), "train": _field_types(AcfConfig),
            "eval": _field_types(EvalSection)}


def _locate(text: str):
    """(section, key) -> line number, for error messages."""
    where, section = {}, None
    for n, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        m = re.match(r"\[([^\]]+)\]", stripped)
        if m:
            section = m.group(1).strip()
            where[(section, None)] = n
        elif "=" in stripped and not stripped.startswith(("#", ";")):
            where[(section, stripped.split("=", 1)[0].strip().lower())] = n
    return where


def parse_config(text: str, path=None) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"),
                                       strict=True, delimiters=("=",))
    try:
        parser.read_string(text, source=str(path or "<config>"))
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError("expected a [section] header before any key", path, exc.lineno) from None
    except (configparser.DuplicateOptionError, configparser.DuplicateSectionError) as exc:
        raise ConfigError(exc.message.split(": ", 1)[-1], path, exc.lineno) from None
    except configparser.ParsingError as exc:
        line, content = exc.errors[0]
        raise ConfigError(f"cannot parse {content.strip()!r}", path, line) from None
    where = _locate(text)
    values: dict[str, dict] = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]; expected one of "
                              f"{', '.join(SECTIONS)}", path, where.get((section, None)))
        kinds = SECTIONS[section]
        values[section] = {}
        for key, raw in parser.items(section):
            line = where.get((section, key))
            if key not in kinds:
                raise ConfigError(f"unknown key {key!r} in [{section}]", path, line)
            try:
                values[section][key] = _parse_value(raw, kinds[key])
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {exc}", path, line) from None
    run = values.get("run", {})
    env = run.get("env")
    if env is None:
        raise ConfigError("[run] must set env", path, where.get(("run", None)))
    if env not in ENVS:
        raise ConfigError(f"unknown env {env!r}; available: {', '.join(sorted(ENVS))}", path,
                          where.get(("run", "env")))
    try:
        model = ModelConfig.for_domain(env, **{k: v for k, v in values.get("model", {}).items()
                                               if k not in ("latent_dim", "n_actions")})
        if "latent_dim" in values.get("model", {}) or "n_actions" in values.get("model", {}):
            model = dataclasses.replace(model, **{k: values["model"][k] for k in
                                                  ("latent_dim", "n_actions")
                                                  if k in values["model"]})
        train = AcfConfig.for_domain(env, **values.get("train", {}))
        cfg = RunConfig(env=env, dataset=run.get("dataset", ""),
                        seeds=run.get("seeds", [0]), out=run.get("out", "out"),
                        data=DataSection(**values.get("data", {})), model=model, train=train,
                        eval=EvalSection(**values.get("eval", {})))
    except ValueError as exc:
        raise ConfigError(str(exc), path) from None
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        text = None
    if text is None:
        builtin = resources.files("acf") / "configs" / f"{path.name}"
        if not str(path.name).endswith(".cfg"):
            builtin = resources.files("acf") / "configs" / f"{path.name}.cfg"
        if builtin.is_file():
            return parse_config(builtin.read_text(), path=builtin.name)
        raise FileNotFoundError(path)
    return parse_config(text, path=path)


def builtin_configs() -> list[str]:
    return sorted(p.name[:-4] for p in (resources.files("acf") / "configs").iterdir()
                  if p.name.endswith(".cfg"))
