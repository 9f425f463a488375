"""INI-style experiment configuration.

Grammar: ``[section]`` headers followed by ``key = value`` lines; ``#`` and
``;`` start comments. Sections and their keys::

    [data]         dataset, data_path, T, d
    [divergences]  eps, L, cost
    [causal]       J, lam, eta, disc_hidden, kernel, disc_head
    [nets]         gen_state, gen_fc, gen_head, step_latent, static_latent
    [trainer]      m, lr, iters, seed, lr_decay_rate, lr_decay_every, optimizer, log_every

Unknown sections or keys are rejected with their line number.
"""

from __future__ import annotations

import configparser
import json
import subprocess
from dataclasses import asdict, fields
from pathlib import Path

from . import __version__
from .errors import ConfigError
from .trainer import TrainConfig

SECTIONS = {
    "data": ("dataset", "data_path", "T", "d"),
    "divergences": ("eps", "L", "cost"),
    "causal": ("J", "lam", "eta", "disc_hidden", "kernel", "disc_head"),
    "nets": ("gen_state", "gen_fc", "gen_head", "gen_init", "step_latent", "static_latent"),
    "trainer": ("m", "lr", "iters", "seed", "lr_decay_rate", "lr_decay_every", "optimizer", "log_every"),
}

# where each default comes from: "published" for settings taken from the reference
# experiments, "chosen" for everything left open
PROVENANCE = {
    "m": "published", "eps": "published", "lam": "published", "lr": "published", "L": "published",
    "lr_decay_rate": "published", "lr_decay_every": "published", "optimizer": "published",
    "kernel": "published", "disc_hidden": "published", "step_latent": "published", "static_latent": "published",
    "d": "published",
}

_TYPES = {f.name: f.type for f in fields(TrainConfig)}


def _coerce(key, raw, where):
    default = getattr(TrainConfig(), key)
    try:
        if isinstance(default, bool):
            return raw.lower() in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {key} = {raw!r} as {type(default).__name__}") from None


def _line_of(text_lines, section, key=None):
    current = None
    for no, line in enumerate(text_lines, start=1):
        s = line.strip()
        if s.startswith("[") and s.endswith("]"):
            current = s[1:-1].strip()
            if key is None and current == section:
                return no
        elif key is not None and current == section and s.split("=", 1)[0].strip().lower() == key.lower():
            return no
    return 0


def parse_ini(text: str, origin: str = "<config>") -> dict:
    """Validated ``{field: value}`` overrides from INI text."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text, source=origin)
    except configparser.Error as e:
        raise ConfigError(f"{origin}: {e}") from None
    lines = text.splitlines()
    out = {}
    for section in cp.sections():
        if section not in SECTIONS:
            raise ConfigError(f"{origin}:{_line_of(lines, section)}: unknown section [{section}]")
        for key, raw in cp.items(section):
            where = f"{origin}:{_line_of(lines, section, key)}"
            if key not in SECTIONS[section]:
                raise ConfigError(f"{where}: unknown key {key!r} in [{section}]")
            out[key] = _coerce(key, raw, where)
    return out


def load_config(path) -> dict:
    """Overrides from an INI file or from a run manifest (``.json``)."""
    path = Path(path)
    text = path.read_text()
    if path.suffix == ".json":
        cfg = json.loads(text).get("config", {})
        unknown = set(cfg) - set(_TYPES)
        if unknown:
            raise ConfigError(f"{path}: unknown config fields {sorted(unknown)}")
        return cfg
    return parse_ini(text, str(path))


def build_config(overrides: dict) -> TrainConfig:
    cfg = TrainConfig(**overrides)
    cfg.validate()
    return cfg


def describe(cfg: TrainConfig) -> str:
    """Every resolved value with its provenance."""
    base = TrainConfig()
    rows = []
    for section, keys in SECTIONS.items():
        rows.append(f"[{section}]")
        for k in keys:
            v = getattr(cfg, k)
            src = "override" if v != getattr(base, k) else PROVENANCE.get(k, "chosen")
            rows.append(f"  {k} = {v!r}  ({src})")
    return "\n".join(rows)


def version_string() -> str:
    """Package version plus the short commit id of the working tree when available."""
    try:
        out = subprocess.run(["git", "rev-parse", "--short", "HEAD"], capture_output=True, text=True,
                             cwd=Path(__file__).resolve().parent, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def write_manifest(directory, cfg: TrainConfig | None, experiment: str, extra: dict | None = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    body = {
        "experiment": experiment,
        "version": version_string(),
        "seed": cfg.seed if cfg is not None else (extra or {}).get("seed"),
        "config": asdict(cfg) if cfg is not None else {},
    }
    body.update(extra or {})
    path = directory / "manifest.json"
    path.write_text(json.dumps(body, indent=2, sort_keys=True))
    return path
