import json
import os
from pathlib import Path

import yaml
from pydantic import ValidationError

from models.run import RunConfig
from util.errors import ConfigError

ROOT = Path(__file__).resolve().parent.parent


def resolve(path) -> Path:
    """
    Relative paths in the configuration are relative to the project root.
    """
    path = Path(path)
    return path if path.is_absolute() else ROOT / path


class Options:
    def __init__(self):
        super(Options, self).__init__

    def fetch(path="config/options.yml"):
        # Get file path
        full_path = resolve(os.environ.get("DAILY_DOSE_CONFIG", path))

        # Load options.
        try:
            with open(full_path, "r") as file:
                options = yaml.safe_load(file)
        except FileNotFoundError:
            raise ConfigError(f"configuration file not found: {full_path}")
        except yaml.YAMLError as e:
            raise ConfigError(f"configuration file is not valid YAML: {e}")

        return options or {}

    def get(arg=None, path="config/options.yml"):
        options = Options.fetch(path)

        return options.get(arg, None)

    def run_config(path="config/options.yml", overrides=None) -> RunConfig:
        """
        Loads the `daily_dose` section and applies CLI overrides on top of it.
        Overrides use dotted keys, e.g. {"registry.mode": "http"}.
        """
        section = dict(Options.get("daily_dose", path) or {})

        for key, value in (overrides or {}).items():
            if value is None:
                continue
            target = section
            *parents, leaf = key.split(".")
            for parent in parents:
                target = target.setdefault(parent, {})
            target[leaf] = value

        try:
            return RunConfig.model_validate(section)
        except ValidationError as e:
            first = e.errors()[0]
            where = ".".join(str(part) for part in first["loc"]) or "daily_dose"
            raise ConfigError(f"invalid configuration at {where}: {first['msg']}")

    def get_lexicon(file="synonyms"):
        try:
            lexicon_file = resolve(Path("lexicon") / f"{file}.json")
            with open(lexicon_file, "r", encoding="utf-8") as lexicon:
                return json.load(lexicon)
        except FileNotFoundError:
            return {}


def outbox_dir(config: RunConfig) -> Path:
    return resolve(config.transport.outbox_root or Path(config.output_root) / "outbox")


def archive_dir(config: RunConfig) -> Path:
    return resolve(config.archive_root or Path(config.output_root) / "archive")


def log_dir(config: RunConfig) -> Path:
    return resolve(config.log_root or Path(config.output_root) / "logs")
