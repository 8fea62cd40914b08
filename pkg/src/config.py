import json
import logging
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .errors import ConfigError

LOG_FORMAT = "%(asctime)s [%(levelname)s] %(name)s: %(message)s"

RUN_CONFIG_SECTIONS = ("sgd", "rnn_sgd", "cnn", "rnn", "synth", "split", "augment")


def settings_from_env():
    """Process-wide defaults.

    Uses environment variables: VP_SEED, VP_OUT, VP_LOG_LEVEL, VP_WORKERS
    """
    try:
        return dict(
            seed=int(os.getenv("VP_SEED", 0)),
            out=Path(os.getenv("VP_OUT", "runs")),
            log_level=os.getenv("VP_LOG_LEVEL", "INFO").upper(),
            workers=int(os.getenv("VP_WORKERS", 1)),
        )
    except ValueError as exc:
        raise ConfigError(f"bad environment setting: {exc}") from exc


def setup_logging(level: str = "INFO"):
    root = logging.getLogger()
    if getattr(setup_logging, "_done", False):
        root.setLevel(level)
        return
    handler = logging.StreamHandler()
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    root.addHandler(handler)
    root.setLevel(level)
    setup_logging._done = True


def load_run_config(path: str | Path | None) -> dict:
    """Read a JSON run config and return its sections (missing sections become {})."""
    if path is None:
        return {name: {} for name in RUN_CONFIG_SECTIONS}
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config not found: {p}")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {p} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"config {p} must be a JSON object")
    unknown = set(doc) - set(RUN_CONFIG_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config section(s): {', '.join(sorted(unknown))}")
    return {name: dict(doc.get(name) or {}) for name in RUN_CONFIG_SECTIONS}


def apply_section(obj, section: dict, where: str):
    """Return a copy of dataclass `obj` with `section` keys applied; unknown keys are an error."""
    if not section:
        return obj
    names = {f.name for f in fields(obj)}
    for key in section:
        if key not in names:
            raise ConfigError(f"unknown key '{key}' in config section '{where}'")
    values = {}
    for key, val in section.items():
        current = getattr(obj, key)
        if isinstance(current, tuple) and isinstance(val, list):
            val = tuple(val)
        values[key] = val
    try:
        return replace(obj, **values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid value in config section '{where}': {exc}") from exc


@dataclass
class RunSettings:
    """Resolved global settings for one CLI invocation."""
    seed: int
    out: Path
    workers: int
    log_level: str
    sections: dict = field(default_factory=dict)
    seed_from_cli: bool = False

    def resolve(self, default, section: str):
        """Apply the JSON `section` to dataclass `default`.

        A `seed` field takes --seed, else the section's value, else VP_SEED.
        """
        has_seed = any(f.name == "seed" for f in fields(default))
        obj = replace(default, seed=self.seed) if has_seed else default
        obj = apply_section(obj, self.sections.get(section, {}), section)
        if has_seed and self.seed_from_cli:
            obj = replace(obj, seed=self.seed)
        return obj


def build_settings(seed: int | None = None, out=None, config=None, workers: int | None = None, log_level: str | None = None) -> RunSettings:
    """CLI values win over the environment; the JSON config is read here and applied per section."""
    env = settings_from_env()
    s = RunSettings(
        seed=env["seed"] if seed is None else int(seed),
        out=env["out"] if out is None else Path(out),
        workers=env["workers"] if workers is None else int(workers),
        log_level=(log_level or env["log_level"]).upper(),
        sections=load_run_config(config),
        seed_from_cli=seed is not None,
    )
    if s.workers < 1:
        raise ConfigError(f"workers must be >= 1, got {s.workers}")
    return s
