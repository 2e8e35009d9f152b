"""Helpers shared by the management commands."""
from pathlib import Path

from django.conf import settings
from django.core.management.base import CommandError

from .errors import ConfigError

EXIT_VIOLATION = 2
EXIT_CONFIG = 3
EXIT_DIVERGENCE = 4


def parse_list(text: str, cast=str) -> list:
    """'a,b,c' -> [cast(a), cast(b), cast(c)]"""
    try:
        return [cast(item.strip()) for item in text.split(',') if item.strip()]
    except ValueError as err:
        raise CommandError(f"cannot parse {text!r}: {err}", returncode=EXIT_CONFIG) from err


def resolve_config(name: str) -> Path:
    """a config path, or the name of a shipped preset"""
    path = Path(name)
    if path.exists():
        return path
    for candidate in (settings.VER_PRESET_DIR / name, settings.VER_PRESET_DIR / f'{name}.json'):
        if candidate.exists():
            return candidate
    raise ConfigError(f"no config file or preset named {name}")


def config_error(err: Exception) -> CommandError:
    """CommandError carrying the config exit status"""
    return CommandError(str(err), returncode=EXIT_CONFIG)
