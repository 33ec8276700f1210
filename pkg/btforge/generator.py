"""
Pluggable text generators standing in for the vision-language models.

A generator receives a GeneratorRequest and returns raw response text.
Three transports ship: an external command (JSON on stdin, text on stdout),
an HTTP endpoint (JSON POST, text body) and a scripted mock for offline runs.
"""

import json
import logging
import shlex
import subprocess
import threading
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import requests
import yaml

from btforge.exceptions import ConfigurationError, GeneratorUnavailableError

logger = logging.getLogger(__name__)

SCENE_ANALYSIS = 'scene_analysis'
ARCHITECT = 'architect'
STUDENT = 'student'
STAGES = (SCENE_ANALYSIS, ARCHITECT, STUDENT)


@dataclass(frozen=True)
class GeneratorRequest:
    """One structured call to a generator."""

    stage: str
    instruction: str
    image_paths: Tuple[str, ...] = ()
    scene_analysis: Optional[str] = None
    library: Tuple[str, ...] = ()
    allowed_actions: Optional[Tuple[str, ...]] = None
    workflow: Optional[str] = None
    task: Optional[str] = None
    attempt: int = 1
    feedback: Optional[str] = None

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ConfigurationError(f"Unknown generator stage '{self.stage}'")
        object.__setattr__(self, 'image_paths', tuple(self.image_paths))
        object.__setattr__(self, 'library', tuple(self.library))
        if self.allowed_actions is not None:
            object.__setattr__(self, 'allowed_actions', tuple(self.allowed_actions))

    def to_payload(self) -> Dict:
        """Wire form; optional fields are left out when unset."""
        payload = {
            'stage': self.stage,
            'instruction': self.instruction,
            'image_paths': list(self.image_paths),
            'library': list(self.library),
            'attempt': self.attempt,
        }
        for key in ('scene_analysis', 'workflow', 'task', 'feedback'):
            value = getattr(self, key)
            if value is not None:
                payload[key] = value
        if self.allowed_actions is not None:
            payload['allowed_actions'] = list(self.allowed_actions)
        return payload


class Generator(ABC):
    """Anything that turns a request into response text."""

    @abstractmethod
    def generate(self, request: GeneratorRequest) -> str:
        """Return the raw response text for a request."""

    @property
    def name(self) -> str:
        return type(self).__name__


class CommandGenerator(Generator):
    """Runs an external command per request: JSON request on stdin, response on stdout."""

    def __init__(self, command: Union[str, Sequence[str]], timeout: float = 300.0):
        self.argv = shlex.split(command) if isinstance(command, str) else list(command)
        if not self.argv:
            raise ConfigurationError("Generator command is empty")
        self.timeout = timeout

    @property
    def name(self) -> str:
        return f"command:{self.argv[0]}"

    def generate(self, request: GeneratorRequest) -> str:
        try:
            completed = subprocess.run(
                self.argv,
                input=json.dumps(request.to_payload()),
                capture_output=True,
                text=True,
                timeout=self.timeout,
            )
        except FileNotFoundError:
            raise GeneratorUnavailableError(f"Generator command not found: {self.argv[0]}")
        except subprocess.TimeoutExpired:
            raise GeneratorUnavailableError(f"Generator command timed out after {self.timeout}s")
        except OSError as e:
            raise GeneratorUnavailableError(f"Cannot run generator command: {e}")
        if completed.returncode != 0:
            stderr = (completed.stderr or '').strip().splitlines()
            detail = stderr[-1] if stderr else f"exit status {completed.returncode}"
            raise GeneratorUnavailableError(f"Generator command failed: {detail}")
        return completed.stdout


class HttpGenerator(Generator):
    """POSTs the JSON request to an endpoint and returns the body text."""

    def __init__(self, url: str, timeout: float = 300.0, session: Optional[requests.Session] = None):
        self.url = url
        self.timeout = timeout
        self.session = session or requests.Session()

    @property
    def name(self) -> str:
        return f"http:{self.url}"

    def generate(self, request: GeneratorRequest) -> str:
        try:
            response = self.session.post(self.url, json=request.to_payload(), timeout=self.timeout)
            response.raise_for_status()
        except requests.exceptions.RequestException as e:
            raise GeneratorUnavailableError(f"Generator endpoint {self.url} failed: {e}")
        return response.text


ScriptEntry = Union[str, Callable[[GeneratorRequest], str]]


class ScriptedGenerator(Generator):
    """
    Deterministic mock replaying scripted responses per stage.

    Each stage maps to a list of entries (text, or a callable taking the
    request), or to a mapping from task name to such a list, with '*' as
    the catch-all. Successive calls walk the list; the last entry repeats.
    """

    def __init__(self, scripts: Mapping[str, Union[Sequence[ScriptEntry], Mapping[str, Sequence[ScriptEntry]]]]):
        unknown = sorted(set(scripts) - set(STAGES))
        if unknown:
            raise ConfigurationError(f"Unknown stages in generator script: {', '.join(unknown)}")
        self.scripts = {stage: entries for stage, entries in scripts.items()}
        self.calls: List[GeneratorRequest] = []
        self._counters: Dict[Tuple[str, Optional[str]], int] = {}
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: str) -> 'ScriptedGenerator':
        """Load scripts from YAML: {stage: [text, ...]} or {stage: {task: [text, ...]}}."""
        try:
            with open(path, 'r', encoding='utf-8') as f:
                data = yaml.safe_load(f) or {}
        except OSError as e:
            raise ConfigurationError(f"Cannot read generator script {path}: {e}")
        except yaml.YAMLError as e:
            raise ConfigurationError(f"Invalid YAML in generator script {path}: {e}")
        if not isinstance(data, dict):
            raise ConfigurationError(f"Generator script must be a mapping of stages: {path}")

        def normalize(value):
            if isinstance(value, str):
                return [value]
            if isinstance(value, dict):
                return {str(k): normalize(v) for k, v in value.items()}
            return list(value)

        return cls({stage: normalize(value) for stage, value in data.items()})

    def _entries(self, request: GeneratorRequest) -> Sequence[ScriptEntry]:
        entries = self.scripts.get(request.stage)
        if isinstance(entries, Mapping):
            entries = entries.get(request.task) or entries.get('*')
        if not entries:
            raise GeneratorUnavailableError(
                f"Script has no response for stage '{request.stage}'"
                + (f" and task '{request.task}'" if request.task else '')
            )
        return entries

    def generate(self, request: GeneratorRequest) -> str:
        with self._lock:
            entries = self._entries(request)
            key = (request.stage, request.task)
            position = self._counters.get(key, 0)
            self._counters[key] = position + 1
            self.calls.append(request)
        entry = entries[min(position, len(entries) - 1)]
        return entry(request) if callable(entry) else entry

    def calls_for(self, stage: str) -> List[GeneratorRequest]:
        return [call for call in self.calls if call.stage == stage]


def make_generator(
    command: Optional[str] = None,
    url: Optional[str] = None,
    script: Optional[str] = None,
    timeout: float = 300.0
) -> Optional[Generator]:
    """Build the generator selected on the command line, or None if none was given."""
    chosen = [name for name, value in (('command', command), ('url', url), ('script', script)) if value]
    if len(chosen) > 1:
        raise ConfigurationError(f"Choose a single generator, got: {', '.join(chosen)}",
                                 tip="Pass only one of --generator-cmd, --generator-url, --generator-script")
    if command:
        return CommandGenerator(command, timeout=timeout)
    if url:
        return HttpGenerator(url, timeout=timeout)
    if script:
        return ScriptedGenerator.from_file(script)
    return None
