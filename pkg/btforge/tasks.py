"""
Task bundles: one YAML document per household task.

Schema (validated on load, unknown keys rejected):

    name: turning_on_radio
    difficulty: Easy               # Easy | Medium | Hard
    category: State-change
    instruction: Turn on the radio.
    allowed_actions: [NAVIGATE_TO, TOGGLE_ON]
    workflow:                      # optional, numbered steps for CoT prompting
      - Navigate to the radio.
      - Toggle the radio on.
    objects:
      - {id: radio, toggleable: true}
      - {id: shelf, surface: true}
    initial_state:
      near: null
      held: null
      open: []
      toggled: []
      relations:
        - {kind: ontop, subject: radio, reference: shelf}
    goal:
      - {kind: toggled_on, subject: radio}
      - {kind: open, subject: fridge, not: true}
    reference_tree: turning_on_radio.xml   # optional, relative to the task file
    image: turning_on_radio.png            # optional
"""

import logging
import os
from dataclasses import dataclass
from typing import Any, Dict, List, Literal, Optional, Tuple

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from btforge.conformance import PrimitiveLibrary
from btforge.exceptions import InvalidPathError, SchemaError
from btforge.tree import BehaviorTree
from btforge.world import (
    GoalSpec,
    ObjectSpec,
    Predicate,
    WorldRegistry,
    WorldState,
    validate_state
)
from btforge.xmlio import parse_xml

logger = logging.getLogger(__name__)

DIFFICULTIES = ('Easy', 'Medium', 'Hard')
TASK_SUFFIXES = ('.yml', '.yaml')


class _Strict(BaseModel):
    model_config = ConfigDict(extra='forbid')


class ObjectModel(_Strict):
    id: str = Field(min_length=1)
    openable: bool = False
    toggleable: bool = False
    container: bool = False
    surface: bool = False
    graspable: bool = True


class RelationModel(_Strict):
    kind: Literal['inside', 'ontop', 'nextto']
    subject: str = Field(min_length=1)
    reference: str = Field(min_length=1)


class InitialStateModel(_Strict):
    near: Optional[str] = None
    held: Optional[str] = None
    open: List[str] = Field(default_factory=list)
    toggled: List[str] = Field(default_factory=list)
    relations: List[RelationModel] = Field(default_factory=list)


class GoalModel(BaseModel):
    model_config = ConfigDict(extra='forbid', populate_by_name=True)

    kind: Literal['inside', 'ontop', 'nextto', 'open', 'toggled_on']
    subject: str = Field(min_length=1)
    reference: Optional[str] = None
    negated: bool = Field(default=False, alias='not')


class TaskModel(_Strict):
    name: str = Field(min_length=1)
    difficulty: Literal['Easy', 'Medium', 'Hard']
    category: str = ''
    instruction: str = Field(min_length=1)
    allowed_actions: List[str] = Field(min_length=1)
    workflow: Optional[List[str]] = None
    objects: List[ObjectModel] = Field(min_length=1)
    initial_state: InitialStateModel = Field(default_factory=InitialStateModel)
    goal: List[GoalModel] = Field(default_factory=list)
    reference_tree: Optional[str] = None
    image: Optional[str] = None


def _format_location(loc: Tuple[Any, ...]) -> str:
    path = ''
    for part in loc:
        if isinstance(part, int):
            path += f'[{part}]'
        else:
            path += f'.{part}' if path else str(part)
    return path


@dataclass(frozen=True)
class TaskBundle:
    """Everything needed to run and grade one task."""

    name: str
    difficulty: str
    category: str
    instruction: str
    allowed_actions: Tuple[str, ...]
    workflow: Optional[Tuple[str, ...]]
    registry: WorldRegistry
    initial_state: WorldState
    goal: GoalSpec
    source: Optional[str] = None
    reference_tree_path: Optional[str] = None
    image_path: Optional[str] = None

    def reference_tree(self) -> BehaviorTree:
        """Parse the bundled reference tree."""
        if not self.reference_tree_path:
            raise InvalidPathError(f"Task '{self.name}' has no reference tree",
                                   tip="Add 'reference_tree: <file>.xml' to the task file")
        with open(self.reference_tree_path, 'r', encoding='utf-8') as f:
            return parse_xml(f.read())

    def workflow_text(self) -> str:
        """Numbered workflow used by chain-of-thought prompting."""
        if not self.workflow:
            return ''
        return '\n'.join(f"{i}. {step}" for i, step in enumerate(self.workflow, start=1))


def _check_object(object_id: Optional[str], known: set, path: str) -> None:
    if object_id is not None and object_id not in known:
        raise SchemaError(f"Unknown object '{object_id}'", path=path,
                          tip="Every object referenced by the task must be listed under 'objects'")


def build_task(data: Dict[str, Any], library: Optional[PrimitiveLibrary] = None,
               base_dir: Optional[str] = None, source: Optional[str] = None) -> TaskBundle:
    """
    Validate a task mapping and assemble the bundle.

    Raises:
        SchemaError: With the dotted field path of the first problem
    """
    try:
        model = TaskModel.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        raise SchemaError(first['msg'], path=_format_location(first['loc']) or None)

    known = {o.id for o in model.objects}
    state = model.initial_state
    _check_object(state.near, known, 'initial_state.near')
    _check_object(state.held, known, 'initial_state.held')
    for i, object_id in enumerate(state.open):
        _check_object(object_id, known, f'initial_state.open[{i}]')
    for i, object_id in enumerate(state.toggled):
        _check_object(object_id, known, f'initial_state.toggled[{i}]')
    for i, relation in enumerate(state.relations):
        _check_object(relation.subject, known, f'initial_state.relations[{i}].subject')
        _check_object(relation.reference, known, f'initial_state.relations[{i}].reference')
    for i, goal in enumerate(model.goal):
        _check_object(goal.subject, known, f'goal[{i}].subject')
        _check_object(goal.reference, known, f'goal[{i}].reference')

    if library is not None:
        for i, action in enumerate(model.allowed_actions):
            if action not in library:
                raise SchemaError(f"Action '{action}' is not in the primitive library",
                                  path=f'allowed_actions[{i}]')

    open_ids = set(state.open)
    registry = WorldRegistry(
        ObjectSpec(
            id=o.id,
            openable=o.openable,
            toggleable=o.toggleable,
            container=o.container,
            surface=o.surface,
            initially_open=o.openable and o.id in open_ids,
            graspable=o.graspable,
        )
        for o in model.objects
    )
    initial = validate_state(WorldState(
        near=state.near,
        held=state.held,
        open_set=frozenset(state.open),
        toggled_set=frozenset(state.toggled),
        relations=frozenset((r.kind, r.subject, r.reference) for r in state.relations),
    ), registry)

    predicates = []
    for i, goal in enumerate(model.goal):
        try:
            predicates.append(Predicate(goal.kind, goal.subject, goal.reference, goal.negated))
        except SchemaError as e:
            raise SchemaError(e.message, path=f'goal[{i}]')

    def resolve(name: Optional[str]) -> Optional[str]:
        if name is None or base_dir is None:
            return name
        return os.path.normpath(os.path.join(base_dir, name))

    return TaskBundle(
        name=model.name,
        difficulty=model.difficulty,
        category=model.category,
        instruction=model.instruction,
        allowed_actions=tuple(model.allowed_actions),
        workflow=tuple(model.workflow) if model.workflow else None,
        registry=registry,
        initial_state=initial,
        goal=GoalSpec(tuple(predicates)),
        source=source,
        reference_tree_path=resolve(model.reference_tree),
        image_path=resolve(model.image),
    )


def load_task(path: str, library: Optional[PrimitiveLibrary] = None) -> TaskBundle:
    """
    Load one task bundle from a YAML file.

    Args:
        path: Task file
        library: When given, allowed actions must belong to it

    Raises:
        InvalidPathError: If the file does not exist
        SchemaError: If the file does not match the task schema
    """
    if not os.path.isfile(path):
        raise InvalidPathError(f"Task file does not exist: {path}")
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise SchemaError(f"Invalid YAML in task file {path}: {e}")
    if not isinstance(data, dict):
        raise SchemaError(f"Task file must contain a mapping: {path}")

    try:
        bundle = build_task(data, library, base_dir=os.path.dirname(os.path.abspath(path)), source=path)
    except SchemaError as e:
        error = SchemaError(f"{os.path.basename(path)}: {e.message}", tip=e.tip)
        error.path = e.path
        raise error
    logger.debug(f"Loaded task '{bundle.name}' ({bundle.difficulty}) from {path}")
    return bundle


def list_tasks(directory: str) -> List[str]:
    """Task files of a directory, sorted by name."""
    if not os.path.exists(directory):
        raise InvalidPathError(f"Task directory does not exist: {directory}")
    if not os.path.isdir(directory):
        raise InvalidPathError(f"Task path is not a directory: {directory}")
    return sorted(
        os.path.join(directory, name) for name in os.listdir(directory)
        if name.endswith(TASK_SUFFIXES)
    )


def load_tasks(directory: str, library: Optional[PrimitiveLibrary] = None) -> List[TaskBundle]:
    """Load every task of a directory, sorted by file name."""
    return [load_task(path, library) for path in list_tasks(directory)]
