"""Settings resolved from flags, then EDGEGUARD_* environment variables, then a key = value file."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

ENV_PREFIX = "EDGEGUARD_"


class ConfigError(ValueError):
    pass


def endpoint(text: str) -> tuple[str, int]:
    host, sep, port = str(text).rpartition(":")
    if not sep:
        host, port = "127.0.0.1", text
    try:
        p = int(port)
    except ValueError:
        raise ConfigError(f"bad endpoint {text!r}; expected host:port") from None
    if not 0 <= p <= 65535:
        raise ConfigError(f"port out of range in {text!r}")
    return host or "127.0.0.1", p


def _positive(text) -> float:
    v = float(text)
    if v <= 0:
        raise ConfigError(f"{text!r} must be positive")
    return v


# name -> (parser, default)
FIELDS: dict[str, tuple[Callable, object]] = {
    "dataset": (Path, None),
    "test_dataset": (Path, None),
    "model": (Path, None),
    "rules": (Path, None),
    "registry": (Path, None),
    "identity": (Path, None),
    "store": (Path, None),
    "log_dir": (Path, Path("edgeguard-logs")),
    "event_log": (Path, None),
    "report_dir": (Path, None),
    "listen": (endpoint, ("127.0.0.1", 1883)),
    "broker": (endpoint, ("127.0.0.1", 1884)),
    "fog": (endpoint, None),
    "update_listen": (endpoint, None),
    "rotation_period": (_positive, 7 * 86400.0),
    "seed": (int, 42),
    "latency_params": (Path, None),
}


def parse_config_file(path: str | Path) -> dict[str, str]:
    values = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        if key not in FIELDS:
            raise ConfigError(f"{path}:{lineno}: unknown setting {key!r}")
        values[key] = value.strip()
    return values


@dataclass
class Config:
    values: dict[str, object] = field(default_factory=dict)
    sources: dict[str, str] = field(default_factory=dict)

    def __getattr__(self, name):
        try:
            return self.__dict__["values"][name]
        except KeyError:
            raise AttributeError(name) from None

    def require(self, *names: str) -> None:
        missing = [n for n in names if self.values.get(n) is None]
        if missing:
            flags = ", ".join("--" + n.replace("_", "-") for n in missing)
            raise ConfigError(f"missing required settings: {flags}")

    def echo(self, names) -> str:
        parts = []
        for n in names:
            v = self.values.get(n)
            if isinstance(v, tuple):
                v = f"{v[0]}:{v[1]}"
            parts.append(f"{n}={v} ({self.sources.get(n, 'default')})")
        return "config: " + " ".join(parts)


def resolve(flags: Mapping[str, object], env: Mapping[str, str] | None = None,
            config_file: str | Path | None = None) -> Config:
    """Merge the three sources; flags set to None fall through to the next one."""
    env = os.environ if env is None else env
    if config_file is None:
        config_file = env.get(ENV_PREFIX + "CONFIG")
    from_file = parse_config_file(config_file) if config_file else {}
    cfg = Config()
    for name, (parse, default) in FIELDS.items():
        raw, source = None, "default"
        if flags.get(name) is not None:
            raw, source = flags[name], "flag"
        elif env.get(ENV_PREFIX + name.upper()):
            raw, source = env[ENV_PREFIX + name.upper()], "env"
        elif name in from_file:
            raw, source = from_file[name], "file"
        if raw is None:
            cfg.values[name] = default
        else:
            try:
                cfg.values[name] = raw if not isinstance(raw, str) else parse(raw)
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"bad value for {name} from {source}: {exc}") from None
        cfg.sources[name] = source
    return cfg
