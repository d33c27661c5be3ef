"""Loading and saving of experiment configurations as JSON."""
from __future__ import annotations

import json
import logging
from pathlib import Path

from entitrend.errors import ConfigError
from entitrend.models.experiment import ExperimentConfig

logger = logging.getLogger(__name__)


def load_config(path: str | Path | None = None,
                seed: int | None = None) -> ExperimentConfig:
    """Reads an ExperimentConfig, applying a seed override if given.

    Without ``path`` the defaults are used. Any problem with the file,
    its JSON or its values is reported as ConfigError.

    """
    if path is None:
        cfg = ExperimentConfig()
    else:
        try:
            with open(path, encoding="utf-8") as f:
                document = json.load(f)
        except OSError as err:
            raise ConfigError(f"Cannot read the configuration: {err}") from None
        except json.JSONDecodeError as err:
            raise ConfigError(f"Malformed JSON in {path}: {err}") from None
        cfg = ExperimentConfig.from_dict(document)
        logger.debug("loaded configuration from %s", path)

    if seed is not None:
        if not isinstance(seed, int) or seed < 0:
            raise ConfigError(f"'seed' must be a non-negative integer: {repr(seed)}")
        cfg = cfg.with_seed(seed)
    return cfg


def write_config(path: str | Path, cfg: ExperimentConfig) -> None:
    """Writes ``cfg`` so that ``load_config`` reads it back unchanged."""
    with open(path, "w", encoding="utf-8") as f:
        json.dump(cfg.to_dict(), f, indent=2, sort_keys=True)
