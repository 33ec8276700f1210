"""
Two-stage annotation of an episode: Scene Analysis, then an Architect tree
re-requested until it passes the Conformance Validator.
"""

import logging
import re
from typing import Dict, Iterable, List, Optional, Tuple, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from btforge.conformance import PrimitiveLibrary, ValidationReport, validate
from btforge.exceptions import (
    ConfigurationError,
    MalformedSceneAnalysisError,
    RetriesExhaustedError
)
from btforge.generator import ARCHITECT, SCENE_ANALYSIS, Generator, GeneratorRequest
from btforge.tree import Action, BehaviorTree, iter_nodes
from btforge.xmlio import extract_xml_block, parse_xml, serialize

logger = logging.getLogger(__name__)

SCENE_ANALYSIS_FIELDS = ('target', 'destination', 'expanded_instruction', 'scene_context', 'expected_sequence')

_FENCE_RE = re.compile(r'```(?:ya?ml)?\s*\n(.*?)```', re.DOTALL)
_XML_START_RE = re.compile(r'<\?xml|<root\b')


class SceneAnalysis(BaseModel):
    """Five-field structured description of the scene preceding the plan."""

    model_config = ConfigDict(extra='ignore', str_strip_whitespace=True, frozen=True)

    target: str = Field(min_length=1)
    destination: str = Field(min_length=1)
    expanded_instruction: str = Field(min_length=1)
    scene_context: str = Field(min_length=1)
    expected_sequence: str = Field(min_length=1)

    @field_validator('*', mode='before')
    @classmethod
    def _flatten(cls, value):
        if isinstance(value, list):
            return '; '.join(str(v) for v in value)
        if value is None:
            return ''
        return value if isinstance(value, str) else str(value)

    def to_dict(self) -> Dict[str, str]:
        return {name: getattr(self, name) for name in SCENE_ANALYSIS_FIELDS}

    def to_yaml(self) -> str:
        return yaml.safe_dump({'scene_analysis': self.to_dict()}, sort_keys=False, allow_unicode=True)


def parse_scene_analysis(text: Union[str, Dict]) -> SceneAnalysis:
    """
    Read a Scene Analysis block from a response or a mapping.

    The YAML may be fenced, may be nested under a `scene_analysis` key and
    may be followed by the XML plan, which is ignored.

    Raises:
        MalformedSceneAnalysisError: If the block is not YAML or misses a field
    """
    if isinstance(text, dict):
        data = text
    else:
        body = text or ''
        xml_start = _XML_START_RE.search(body)
        if xml_start:
            body = body[:xml_start.start()]
        fenced = _FENCE_RE.search(body)
        if fenced:
            body = fenced.group(1)
        try:
            data = yaml.safe_load(body)
        except yaml.YAMLError as e:
            raise MalformedSceneAnalysisError(f"Scene Analysis is not valid YAML: {e}")
    if isinstance(data, dict) and isinstance(data.get('scene_analysis'), dict):
        data = data['scene_analysis']
    if not isinstance(data, dict):
        raise MalformedSceneAnalysisError("Scene Analysis must be a mapping of its five fields")

    try:
        return SceneAnalysis.model_validate(data)
    except ValidationError as e:
        bad = sorted({str(err['loc'][0]) for err in e.errors() if err['loc']})
        raise MalformedSceneAnalysisError(f"Scene Analysis field(s) missing or empty: {', '.join(bad)}")


def derive_allowed_actions(tree: Union[str, BehaviorTree]) -> List[str]:
    """Distinct Action ids of a tree in order of first appearance."""
    if isinstance(tree, str):
        tree = parse_xml(tree)
    seen: List[str] = []
    for node in iter_nodes(tree):
        if isinstance(node, Action) and node.id not in seen:
            seen.append(node.id)
    return seen


def _feedback(report: Optional[ValidationReport]) -> Optional[str]:
    if report is None:
        return None
    if report.error:
        return f"Previous tree was rejected: {report.error}"
    problems = []
    if report.unknown_actions:
        problems.append(f"unknown primitives {', '.join(report.unknown_actions)}")
    if report.disallowed_actions:
        problems.append(f"disallowed primitives {', '.join(report.disallowed_actions)}")
    return f"Previous tree was rejected: {'; '.join(problems)}"


def teacher_loop(
    generator: Generator,
    sheet: str,
    instruction: str,
    library: PrimitiveLibrary,
    max_retries: int = 5,
    allowed: Optional[Iterable[str]] = None,
    task: Optional[str] = None
) -> Tuple[SceneAnalysis, str]:
    """
    Annotate one episode.

    The Scene Analysis stage runs once. The Architect stage then receives the
    sheet, the instruction and the analysis, and is re-invoked until its
    tree passes conformance or max_retries attempts are used.

    Args:
        generator: Text generator
        sheet: Path of the episode's contact sheet
        instruction: Task instruction
        library: Primitive library P
        max_retries: Architect attempts allowed
        allowed: Optional allowed actions enforced on top of P
        task: Episode id forwarded to the generator

    Returns:
        (SceneAnalysis, canonical tree XML)

    Raises:
        ConfigurationError: If max_retries < 1
        GeneratorUnavailableError: If the generator cannot be reached
        MalformedSceneAnalysisError: If the analysis misses a field
        RetriesExhaustedError: If no attempt conforms; carries the last report
    """
    if max_retries < 1:
        raise ConfigurationError(f"max_retries must be at least 1, got {max_retries}")
    allowed_tuple = tuple(allowed) if allowed is not None else None
    names = tuple(library)

    analysis_text = generator.generate(GeneratorRequest(
        stage=SCENE_ANALYSIS, instruction=instruction, image_paths=(sheet,), library=names, task=task,
    ))
    analysis = parse_scene_analysis(analysis_text)

    report = None
    for attempt in range(1, max_retries + 1):
        response = generator.generate(GeneratorRequest(
            stage=ARCHITECT,
            instruction=instruction,
            image_paths=(sheet,),
            scene_analysis=analysis.to_yaml(),
            library=names,
            allowed_actions=allowed_tuple,
            task=task,
            attempt=attempt,
            feedback=_feedback(report),
        ))
        xml = extract_xml_block(response)
        report = validate(xml, library, allowed_tuple)
        if report.verdict:
            logger.debug(f"Architect tree accepted on attempt {attempt}")
            return analysis, serialize(parse_xml(xml))
        logger.info(f"Architect attempt {attempt}/{max_retries} rejected for {task or 'episode'}: "
                    f"{_feedback(report)}")

    raise RetriesExhaustedError(
        f"No conforming tree after {max_retries} Architect attempts", last_report=report,
        tip="Raise max_retries or check the generator's output format"
    )
