"""
Configuration des commandes

Priorité: flags de la ligne de commande > fichier de configuration > défauts.

Le fichier est un simple key=value (syntaxe .env, lu par python-dotenv).
Une clé répétée (ou une liste séparée par des virgules) définit une grille:

    q=1
    q=2
    lambda=0.99,1.0
    kappa=0.94
"""

import hashlib
import json
import logging
import os
from typing import Any, Dict, List, Optional

from dotenv import load_dotenv
from dotenv.parser import parse_stream
from pydantic import ValidationError

from .errors import ConfigError
from .models import RunConfig

load_dotenv()

logger = logging.getLogger(__name__)

# Clé du fichier -> champ de RunConfig
KEY_ALIASES = {
    'q': 'q_values',
    'lambda': 'lambdas',
    'kappa': 'kappas',
    'group': 'group_sizes',
    'groups': 'group_sizes',
    'target': 'targets',
    'model': 'models',
    'N': 'sim_N',
    'T': 'sim_T',
    'burn_in': 'sim_burn_in',
    'h_mode': 'sim_h_mode',
    'first-origin': 'first_origin',
}

LIST_FIELDS = {'q_values', 'lambdas', 'kappas', 'group_sizes', 'targets', 'models', 'external'}


def get_log_level() -> str:
    return os.getenv('LOG_LEVEL', 'INFO').upper()


def default_workers() -> int:
    try:
        return max(1, int(os.getenv('MAI_WORKERS', '1')))
    except ValueError:
        return 1


def _field_name(key: str) -> str:
    key = KEY_ALIASES.get(key, key)
    key = key.replace('-', '_')
    if key not in RunConfig.model_fields:
        raise ConfigError(f"Unknown configuration key {key!r}")
    return key


def parse_config_file(path) -> Dict[str, Any]:
    """
    Lit un fichier key=value

    Returns:
        Dictionnaire champ -> valeur (liste pour les grilles)

    Raises:
        ConfigError: ligne illisible ou clé inconnue
    """
    values: Dict[str, Any] = {}
    try:
        with open(path, "r") as stream:
            bindings = list(parse_stream(stream))
    except OSError as e:
        raise ConfigError(f"Cannot read configuration file {path}: {e}") from e

    for binding in bindings:
        if binding.error:
            raise ConfigError(f"Malformed configuration line: {binding.original.string.strip()!r}")
        if binding.key is None:
            continue
        field = _field_name(binding.key)
        raw = binding.value or ""
        if field in LIST_FIELDS:
            items = [item.strip() for item in raw.split(",") if item.strip()]
            values.setdefault(field, []).extend(items)
        else:
            values[field] = raw.strip()
    return values


def load_run_config(command: str, flags: Dict[str, Any], config_path: Optional[str] = None) -> RunConfig:
    """
    Construit la configuration validée d'une commande

    Args:
        command: Nom de la sous-commande
        flags: Options de la ligne de commande (None = non fournie)
        config_path: Fichier key=value optionnel

    Raises:
        ConfigError: fichier ou valeur invalide
    """
    merged: Dict[str, Any] = {'command': command, 'workers': default_workers()}
    if config_path:
        merged.update(parse_config_file(config_path))
        logger.info(f"Loaded configuration file {config_path}")

    for key, value in flags.items():
        if value is None:
            continue
        if isinstance(value, list) and not value:
            continue
        merged[_field_name(key)] = value

    try:
        return RunConfig(**merged)
    except ValidationError as e:
        details = "; ".join(f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors())
        raise ConfigError(f"Invalid configuration: {details}") from e


def config_hash(config: RunConfig) -> str:
    """Empreinte sha256 de la configuration (ordre des clés fixé)"""
    payload = json.dumps(config.model_dump(mode='json'), sort_keys=True)
    return hashlib.sha256(payload.encode('utf-8')).hexdigest()


def expand_list(values: List[str]) -> List[str]:
    """Accepte 'a,b' comme ['a', 'b'] pour les options répétables"""
    return [item.strip() for value in values for item in str(value).split(",") if item.strip()]
