"""
Configuration file handling for btforge
"""

import os
import yaml
from typing import Dict, Any, List, Optional
import logging

from btforge.conformance import PrimitiveLibrary
from btforge.exceptions import ConfigurationError

logger = logging.getLogger(__name__)

DEFAULT_CONFIG_FILE = '.btforge.yml'
LIBRARY_ENV_VAR = 'BTFORGE_LIBRARY'

DATA_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'data')
DEFAULT_LIBRARY_PATH = os.path.join(DATA_DIR, 'primitives.txt')
DEFAULT_SYNONYMS_PATH = os.path.join(DATA_DIR, 'synonyms.yml')
BUNDLED_TASKS_DIR = os.path.join(DATA_DIR, 'tasks')
BUNDLED_SUITE_DIR = os.path.join(BUNDLED_TASKS_DIR, 'suite')


def load_config(config_path: Optional[str] = None) -> Dict[str, Any]:
    """
    Load configuration from a YAML file.

    Args:
        config_path: Path to configuration file. If None, looks for .btforge.yml
                    in current directory

    Returns:
        Dictionary containing configuration options

    Raises:
        ConfigurationError: If configuration file is invalid
    """
    if config_path is None:
        # Look for default config file in current directory
        config_path = DEFAULT_CONFIG_FILE
        if not os.path.exists(config_path):
            logger.debug("No configuration file found, using defaults")
            return {}

    if not os.path.exists(config_path):
        raise ConfigurationError(f"Configuration file not found: {config_path}")

    try:
        with open(config_path, 'r', encoding='utf-8') as f:
            config = yaml.safe_load(f) or {}
    except yaml.YAMLError as e:
        raise ConfigurationError(f"Invalid YAML in configuration file: {e}")
    except OSError as e:
        raise ConfigurationError(f"Error reading configuration file: {e}")

    if not isinstance(config, dict):
        raise ConfigurationError(f"Configuration file must contain a mapping: {config_path}")
    logger.debug(f"Loaded configuration from {config_path}")
    return config


def merge_config_with_args(config: Dict[str, Any], **kwargs) -> Dict[str, Any]:
    """
    Merge configuration file options with command-line arguments.
    Command-line arguments take precedence.

    Args:
        config: Configuration dictionary from file
        **kwargs: Command-line arguments

    Returns:
        Merged configuration dictionary
    """
    merged = config.copy()

    # Override with command-line arguments if provided
    for key, value in kwargs.items():
        if value is not None:
            merged[key] = value

    return merged


def resolve_library_path(library_path: Optional[str] = None) -> str:
    """Pick the library file: explicit path, then $BTFORGE_LIBRARY, then the bundled default."""
    if library_path:
        return library_path
    from_env = os.environ.get(LIBRARY_ENV_VAR)
    if from_env:
        logger.debug(f"Using primitive library from ${LIBRARY_ENV_VAR}: {from_env}")
        return from_env
    return DEFAULT_LIBRARY_PATH


def parse_library(text: str, source: str = '<string>') -> PrimitiveLibrary:
    """
    Parse the line-oriented library format.

    Each non-blank line is `NAME [attr[,attr...]]`; `#` starts a comment.
    """
    names: List[str] = []
    arity: Dict[str, tuple] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split('#', 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) > 2:
            raise ConfigurationError(
                f"{source}:{lineno}: expected 'NAME [attr,...]', got {raw.strip()!r}"
            )
        name = parts[0]
        attributes = tuple(a for a in parts[1].split(',') if a) if len(parts) == 2 else ()
        names.append(name)
        arity[name] = attributes
    if not names:
        raise ConfigurationError(f"Primitive library is empty: {source}")
    return PrimitiveLibrary(tuple(names), arity)


def load_library(library_path: Optional[str] = None) -> PrimitiveLibrary:
    """
    Load the primitive library P.

    Raises:
        ConfigurationError: If the file is missing or malformed
    """
    path = resolve_library_path(library_path)
    if not os.path.isfile(path):
        raise ConfigurationError(f"Primitive library not found: {path}",
                                 tip=f"Pass --library or set ${LIBRARY_ENV_VAR}")
    try:
        with open(path, 'r', encoding='utf-8') as f:
            text = f.read()
    except OSError as e:
        raise ConfigurationError(f"Error reading primitive library: {e}")
    library = parse_library(text, source=path)
    logger.debug(f"Loaded {len(library)} primitives from {path}")
    return library


def load_synonyms(
    synonyms_path: Optional[str] = None,
    library: Optional[PrimitiveLibrary] = None
) -> Dict[str, List[str]]:
    """
    Load the synonym map used by lexical augmentation.

    Args:
        synonyms_path: YAML mapping PRIMITIVE -> [SYNONYM, ...]; bundled default if None
        library: When given, every primitive and synonym must belong to it

    Raises:
        ConfigurationError: If the file is malformed or names fall outside the library
    """
    path = synonyms_path or DEFAULT_SYNONYMS_PATH
    data = load_config(path)
    synonyms: Dict[str, List[str]] = {}
    for primitive, alternatives in data.items():
        if isinstance(alternatives, str):
            alternatives = [alternatives]
        if not isinstance(alternatives, list) or not alternatives \
                or not all(isinstance(a, str) and a for a in alternatives):
            raise ConfigurationError(f"Synonyms for {primitive} must be a non-empty list of names")
        synonyms[str(primitive)] = list(alternatives)

    if library is not None:
        outside = sorted({name for p, alts in synonyms.items() for name in [p] + alts
                          if name not in library})
        if outside:
            raise ConfigurationError(
                f"Synonym map uses names outside the primitive library: {', '.join(outside)}"
            )
    return synonyms
