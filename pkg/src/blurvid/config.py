"""Run configuration: INI files with [synth], [network], [train] and [eval] sections.

Values not given in the file come from a named profile ("paper" or "desk").
Command-line overrides use ``section.key=value``.
"""
import configparser
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .blur_synth import SynthConfig
from .network import NetworkConfig
from .trainer import TrainConfig, desk_network, desk_profile, paper_profile

PROFILES = ("paper", "desk")


class ConfigError(ValueError):
    pass


@dataclass
class EvalConfig:
    batch_size: int = 8
    ssim: bool = True
    rotation_bins: tuple = (0.0, 2.887, 5.774, 8.660, 11.547, 14.434, 17.321)


@dataclass
class RunConfig:
    synth: SynthConfig = field(default_factory=SynthConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    profile: str = "paper"

    def to_dict(self):
        out = {"profile": self.profile}
        for name in ("synth", "network", "train", "eval"):
            d = dataclasses.asdict(getattr(self, name))
            out[name] = {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}
        return out

    def config_hash(self):
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    def write(self, path):
        parser = configparser.ConfigParser()
        for section, values in self.to_dict().items():
            if section == "profile":
                continue
            parser[section] = {k: _format(v) for k, v in values.items()}
        parser["run"] = {"profile": self.profile, "config_hash": self.config_hash()}
        with open(path, "w") as f:
            parser.write(f)
        return path


def profile_defaults(profile):
    if profile == "paper":
        return {
            "synth": SynthConfig(),
            "network": NetworkConfig(),
            "train": paper_profile("panorama"),
            "eval": EvalConfig(),
        }
    if profile == "desk":
        return {
            "synth": SynthConfig(output_size=64, samples_per_source=4),
            "network": desk_network(),
            "train": desk_profile(),
            "eval": EvalConfig(),
        }
    raise ConfigError(f"unknown profile {profile!r}; expected one of {PROFILES}")


def _format(v):
    if isinstance(v, (list, tuple)):
        return ", ".join(str(x) for x in v)
    return str(v)


def _parse(raw, default, key):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            items = [x.strip() for x in raw.split(",") if x.strip()]
            kind = type(default[0]) if default else float
            return tuple(kind(x) for x in items)
        if default is None:
            if raw.lower() in ("", "none"):
                return None
            if "," in raw:
                return tuple(float(x) for x in raw.split(","))
            return float(raw)
        return raw
    except ValueError as e:
        raise ConfigError(f"bad value for {key}: {raw!r}") from e


def _apply(obj, section, values):
    fields = {f.name for f in dataclasses.fields(obj)}
    kwargs = {}
    for key, raw in values.items():
        if key not in fields:
            raise ConfigError(f"unknown key {section}.{key}")
        kwargs[key] = _parse(raw, getattr(obj, key), f"{section}.{key}")
    try:
        return dataclasses.replace(obj, **kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid [{section}] settings: {e}") from e


def load_config(path=None, overrides=(), profile=None):
    """Resolve defaults, then the file, then ``section.key=value`` overrides."""
    parser = configparser.ConfigParser()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            parser.read(path)
        except configparser.Error as e:
            raise ConfigError(f"cannot parse {path}: {e}") from e
    profile = profile or parser.get("run", "profile", fallback="paper")
    parts = profile_defaults(profile)
    sections = {name: dict(parser[name]) if parser.has_section(name) else {} for name in parts}
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        lhs, value = item.split("=", 1)
        section, key = lhs.split(".", 1)
        if section not in sections:
            raise ConfigError(f"unknown section {section!r}")
        sections[section][key.strip()] = value
    for name, values in sections.items():
        parts[name] = _apply(parts[name], name, values)
    cfg = RunConfig(profile=profile, **parts)
    if cfg.train.n_frames != cfg.network.n:
        raise ConfigError(
            f"train.n_frames={cfg.train.n_frames} differs from network.n={cfg.network.n}")
    return cfg
