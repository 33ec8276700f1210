"""
Two-turn training records and their YAML form.

user turn:      initial frame, instruction, allowed actions
assistant turn: Scene Analysis block, then the tree XML
"""

import logging
from dataclasses import dataclass, replace
from typing import Dict, List, Tuple

import yaml

from btforge.annotation import SceneAnalysis, parse_scene_analysis
from btforge.conformance import PrimitiveLibrary, validate
from btforge.exceptions import SchemaError, TreeFormatError
from btforge.tree import extract_action_set
from btforge.xmlio import parse_xml

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EpisodeRecord:
    """One training sample, original or augmented."""

    episode_id: str
    source_episode: str
    initial_frame: str
    contact_sheet: str
    instruction: str
    allowed_actions: Tuple[str, ...]
    scene_analysis: SceneAnalysis
    bt_xml: str
    structurally_augmented: bool = False
    lexically_augmented: bool = False

    def __post_init__(self):
        object.__setattr__(self, 'allowed_actions', tuple(self.allowed_actions))

    def evolve(self, **changes) -> 'EpisodeRecord':
        return replace(self, **changes)

    def assistant_text(self) -> str:
        """The assistant turn as a model would emit it."""
        return self.scene_analysis.to_yaml() + '\n' + self.bt_xml

    def to_dict(self) -> Dict:
        return {
            'episode_id': self.episode_id,
            'source_episode': self.source_episode,
            'provenance': {
                'structurally_augmented': self.structurally_augmented,
                'lexically_augmented': self.lexically_augmented,
            },
            'user': {
                'image': self.initial_frame,
                'contact_sheet': self.contact_sheet,
                'instruction': self.instruction,
                'allowed_actions': list(self.allowed_actions),
            },
            'assistant': {
                'scene_analysis': self.scene_analysis.to_dict(),
                'bt_xml': self.bt_xml,
            },
        }

    @classmethod
    def from_dict(cls, data: Dict) -> 'EpisodeRecord':
        try:
            user, assistant = data['user'], data['assistant']
            provenance = data.get('provenance') or {}
            return cls(
                episode_id=data['episode_id'],
                source_episode=data.get('source_episode', data['episode_id']),
                initial_frame=user['image'],
                contact_sheet=user['contact_sheet'],
                instruction=user['instruction'],
                allowed_actions=tuple(user['allowed_actions']),
                scene_analysis=parse_scene_analysis(assistant['scene_analysis']),
                bt_xml=assistant['bt_xml'],
                structurally_augmented=bool(provenance.get('structurally_augmented', False)),
                lexically_augmented=bool(provenance.get('lexically_augmented', False)),
            )
        except (KeyError, TypeError) as e:
            raise SchemaError(f"Record is missing field {e}")


class _BlockDumper(yaml.SafeDumper):
    pass


def _str_representer(dumper, value):
    if '\n' in value:
        return dumper.represent_scalar('tag:yaml.org,2002:str', value, style='|')
    return dumper.represent_scalar('tag:yaml.org,2002:str', value)


_BlockDumper.add_representer(str, _str_representer)


def dump_record(record: EpisodeRecord) -> str:
    """Deterministic YAML text of a record; multi-line values use block style."""
    return yaml.dump(record.to_dict(), Dumper=_BlockDumper, sort_keys=False,
                     allow_unicode=True, default_flow_style=False, width=4096)


def load_record(path: str) -> EpisodeRecord:
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise SchemaError(f"Invalid YAML in record {path}: {e}")
    if not isinstance(data, dict):
        raise SchemaError(f"Record must be a mapping: {path}")
    return EpisodeRecord.from_dict(data)


def record_violations(record: EpisodeRecord, library: PrimitiveLibrary) -> List[str]:
    """Consistency problems of a record: parse, conformance, action set within allowed actions."""
    problems = []
    outside = [a for a in record.allowed_actions if a not in library]
    if outside:
        problems.append(f"allowed actions outside the library: {', '.join(outside)}")
    try:
        tree = parse_xml(record.bt_xml)
    except TreeFormatError as e:
        return problems + [f"tree does not parse: {e.message}"]
    missing = sorted(extract_action_set(tree) - set(record.allowed_actions))
    if missing:
        problems.append(f"tree uses actions not in allowed_actions: {', '.join(missing)}")
    report = validate(record.bt_xml, library)
    if not report.verdict:
        problems.append(f"tree fails conformance: unknown {list(report.unknown_actions)}")
    return problems
