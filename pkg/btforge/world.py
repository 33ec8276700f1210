"""
Symbolic world: primitive semantics, goal checking and tree execution.

Every primitive is an instantaneous state change guarded by preconditions.
A violated precondition is returned as a PreconditionFailure value, never
raised, so that a failed plan step is an ordinary outcome of execution.
"""

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import (Dict, FrozenSet, Iterable, Iterator, List, Mapping, Optional,
                    Tuple, Union)

from btforge.exceptions import (
    ExecutionError,
    SchemaError,
    UnknownObjectError,
    UnknownPrimitiveError
)
from btforge.tree import (
    BehaviorTree,
    Condition,
    Leaf,
    TickStatus,
    TraceEvent,
    tick
)

logger = logging.getLogger(__name__)

INSIDE = 'inside'
ONTOP = 'ontop'
NEXTTO = 'nextto'
OPEN = 'open'
TOGGLED_ON = 'toggled_on'

RELATION_KINDS = (INSIDE, ONTOP, NEXTTO)
UNARY_KINDS = (OPEN, TOGGLED_ON)
PREDICATE_KINDS = RELATION_KINDS + UNARY_KINDS

# Surface spellings resolved to the primitive whose semantics they share
ALIASES: Dict[str, str] = {
    'MOVE_TO': 'NAVIGATE_TO',
    'GRAB': 'GRASP',
    'PICK': 'GRASP',
    'PUT_ON_TOP': 'PLACE_ON_TOP',
    'PUT_INSIDE': 'PLACE_INSIDE',
    'PUT_NEXT_TO': 'PLACE_NEXT_TO',
}

GRASP_FAMILY = ('GRASP', 'GRAB', 'PICK')
PLACEMENT_PRIMITIVES = ('PLACE_ON_TOP', 'PLACE_INSIDE', 'PLACE_NEXT_TO')
CONTACT_PRIMITIVES = ('PUSH', 'PULL', 'WIPE', 'FOLD', 'CUT')
SEMANTIC_PRIMITIVES = (
    ('NAVIGATE_TO', 'GRASP') + PLACEMENT_PRIMITIVES
    + ('OPEN', 'CLOSE', 'TOGGLE_ON', 'TOGGLE_OFF', 'RELEASE', 'POUR') + CONTACT_PRIMITIVES
)


class Reason(Enum):
    """Machine-readable cause of a failed step."""
    HANDS_FULL = "HANDS_FULL"
    NOT_NEAR = "NOT_NEAR"
    OCCLUDED = "OCCLUDED"
    EMPTY_HAND = "EMPTY_HAND"
    NOT_A_SURFACE = "NOT_A_SURFACE"
    NOT_A_CONTAINER = "NOT_A_CONTAINER"
    CLOSED_CONTAINER = "CLOSED_CONTAINER"
    NOT_OPENABLE = "NOT_OPENABLE"
    NOT_TOGGLEABLE = "NOT_TOGGLEABLE"
    NOT_GRASPABLE = "NOT_GRASPABLE"
    HELD_MISMATCH = "HELD_MISMATCH"
    CYCLIC_PLACEMENT = "CYCLIC_PLACEMENT"
    UNKNOWN_OBJECT = "UNKNOWN_OBJECT"
    UNKNOWN_PRIMITIVE = "UNKNOWN_PRIMITIVE"
    CONDITION_FALSE = "CONDITION_FALSE"


# Reasons apply() itself can return
PRECONDITION_REASONS = tuple(
    r for r in Reason
    if r not in (Reason.UNKNOWN_OBJECT, Reason.UNKNOWN_PRIMITIVE, Reason.CONDITION_FALSE)
)


@dataclass(frozen=True)
class ObjectSpec:
    """Capabilities of one object in the scene."""

    id: str
    openable: bool = False
    toggleable: bool = False
    container: bool = False
    surface: bool = False
    initially_open: bool = False
    graspable: bool = True

    def __post_init__(self):
        if not isinstance(self.id, str) or not self.id.strip():
            raise SchemaError("Object id must be a non-empty string")
        if self.initially_open and not self.openable:
            raise SchemaError(f"Object '{self.id}' starts open but is not openable")


class WorldRegistry(Mapping[str, ObjectSpec]):
    """Immutable id -> ObjectSpec lookup for one scene."""

    def __init__(self, objects: Iterable[ObjectSpec]):
        specs: Dict[str, ObjectSpec] = {}
        for spec in objects:
            if spec.id in specs:
                raise SchemaError(f"Object id '{spec.id}' is defined twice")
            specs[spec.id] = spec
        self._specs = specs

    def __getitem__(self, object_id: str) -> ObjectSpec:
        return self._specs[object_id]

    def __iter__(self) -> Iterator[str]:
        return iter(self._specs)

    def __len__(self) -> int:
        return len(self._specs)

    def __repr__(self) -> str:
        return f"WorldRegistry({sorted(self._specs)})"

    def spec(self, object_id: str) -> ObjectSpec:
        """Look up an object, raising UnknownObjectError for ids outside the scene."""
        try:
            return self._specs[object_id]
        except KeyError:
            raise UnknownObjectError(f"Unknown object '{object_id}'")


Relation = Tuple[str, str, str]


@dataclass(frozen=True)
class WorldState:
    """Symbolic scene: proximity, gripper, object states and spatial relations."""

    near: Optional[str] = None
    held: Optional[str] = None
    open_set: FrozenSet[str] = frozenset()
    toggled_set: FrozenSet[str] = frozenset()
    relations: FrozenSet[Relation] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, 'open_set', frozenset(self.open_set))
        object.__setattr__(self, 'toggled_set', frozenset(self.toggled_set))
        relations = set()
        for kind, subject, reference in self.relations:
            if kind not in RELATION_KINDS:
                raise SchemaError(f"Unknown relation kind '{kind}'")
            relations.add((kind, subject, reference))
            if kind == NEXTTO:
                relations.add((NEXTTO, reference, subject))
        object.__setattr__(self, 'relations', frozenset(relations))

    def holds(self, kind: str, subject: str, reference: Optional[str] = None) -> bool:
        """Truth value of one positive predicate in this state."""
        if kind == OPEN:
            return subject in self.open_set
        if kind == TOGGLED_ON:
            return subject in self.toggled_set
        return (kind, subject, reference) in self.relations

    def parent(self, object_id: str) -> Optional[Tuple[str, str]]:
        """The (kind, reference) inside/ontop parent of an object, if any."""
        for kind, subject, reference in self.relations:
            if subject == object_id and kind in (INSIDE, ONTOP):
                return kind, reference
        return None

    def ancestors(self, object_id: str) -> List[Tuple[str, str]]:
        """Chain of inside/ontop parents, nearest first."""
        chain = []
        seen = {object_id}
        current = self.parent(object_id)
        while current is not None and current[1] not in seen:
            chain.append(current)
            seen.add(current[1])
            current = self.parent(current[1])
        return chain

    def to_record(self) -> Dict:
        return {
            'near': self.near,
            'held': self.held,
            'open': sorted(self.open_set),
            'toggled': sorted(self.toggled_set),
            'relations': [list(r) for r in sorted(self.relations)],
        }


def state_violations(state: WorldState, registry: WorldRegistry) -> List[str]:
    """List every WorldState invariant the state breaks against a registry."""
    problems = []
    mentioned = {state.near, state.held} | state.open_set | state.toggled_set
    for _, subject, reference in state.relations:
        mentioned.update((subject, reference))
    for object_id in sorted(o for o in mentioned if o is not None):
        if object_id not in registry:
            problems.append(f"unknown object '{object_id}'")
    for object_id in sorted(state.open_set):
        if object_id in registry and not registry[object_id].openable:
            problems.append(f"'{object_id}' is open but not openable")
    for object_id in sorted(state.toggled_set):
        if object_id in registry and not registry[object_id].toggleable:
            problems.append(f"'{object_id}' is toggled but not toggleable")
    if state.held is not None:
        for kind, subject, reference in sorted(state.relations):
            if subject == state.held or (kind == NEXTTO and reference == state.held):
                problems.append(f"held object '{state.held}' is in relation {kind}({subject}, {reference})")
    parents: Dict[str, int] = {}
    for kind, subject, reference in state.relations:
        if kind in (INSIDE, ONTOP):
            parents[subject] = parents.get(subject, 0) + 1
        if subject == reference:
            problems.append(f"'{subject}' is related to itself")
    for object_id, count in sorted(parents.items()):
        if count > 1:
            problems.append(f"'{object_id}' has {count} inside/ontop parents")
    return problems


def validate_state(state: WorldState, registry: WorldRegistry, path: str = 'initial_state') -> WorldState:
    """Raise SchemaError when a state breaks an invariant; return it otherwise."""
    problems = state_violations(state, registry)
    if problems:
        raise SchemaError(f"Invalid world state: {'; '.join(problems)}", path=path)
    return state


@dataclass(frozen=True)
class Predicate:
    """One goal literal: kind(subject[, reference]), optionally negated."""

    kind: str
    subject: str
    reference: Optional[str] = None
    negated: bool = False

    def __post_init__(self):
        if self.kind not in PREDICATE_KINDS:
            raise SchemaError(f"Unknown predicate kind '{self.kind}'")
        if self.kind in UNARY_KINDS and self.reference is not None:
            raise SchemaError(f"Predicate {self.kind} takes no reference object")
        if self.kind in RELATION_KINDS and self.reference is None:
            raise SchemaError(f"Predicate {self.kind} needs a reference object")

    def objects(self) -> Tuple[str, ...]:
        return (self.subject,) if self.reference is None else (self.subject, self.reference)

    def __str__(self) -> str:
        args = ', '.join(self.objects())
        return f"{'not ' if self.negated else ''}{self.kind}({args})"


@dataclass(frozen=True)
class GoalSpec:
    """Conjunction of predicates; satisfied only when every one holds."""

    predicates: Tuple[Predicate, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, 'predicates', tuple(self.predicates))

    def __add__(self, other: 'GoalSpec') -> 'GoalSpec':
        return GoalSpec(self.predicates + tuple(p for p in other.predicates if p not in self.predicates))

    def __iter__(self) -> Iterator[Predicate]:
        return iter(self.predicates)

    def __len__(self) -> int:
        return len(self.predicates)


def check_goals(state: WorldState, goal: GoalSpec, registry: Optional[WorldRegistry] = None) -> bool:
    """
    All-or-nothing goal check.

    Raises:
        UnknownObjectError: If a registry is given and a predicate names an object outside it
    """
    if registry is not None:
        for predicate in goal:
            for object_id in predicate.objects():
                registry.spec(object_id)
    for predicate in goal:
        if state.holds(predicate.kind, predicate.subject, predicate.reference) == predicate.negated:
            return False
    return True


@dataclass(frozen=True)
class PreconditionFailure:
    """A primitive whose preconditions do not hold in the current state."""

    reason: Reason
    action: str
    obj: Optional[str]
    message: str = ''

    def __str__(self) -> str:
        return f"{self.action}({self.obj or ''}) fails: {self.reason.value}" + \
            (f" ({self.message})" if self.message else '')


def canonical_action(action_id: str, aliases: Optional[Mapping[str, str]] = None) -> str:
    """Resolve a surface primitive name to the one carrying its semantics."""
    table = ALIASES if aliases is None else aliases
    return table.get(action_id, action_id)


def _fail(reason: Reason, action_id: str, obj: Optional[str], message: str) -> PreconditionFailure:
    return PreconditionFailure(reason, action_id, obj, message)


def _occluder(state: WorldState, obj: str, world: WorldRegistry) -> Optional[str]:
    for kind, reference in state.ancestors(obj):
        spec = world.get(reference)
        if kind == INSIDE and spec is not None and spec.openable and reference not in state.open_set:
            return reference
    return None


def _detach(state: WorldState, obj: str) -> FrozenSet[Relation]:
    # contents of a grasped container travel with it
    return frozenset(
        r for r in state.relations
        if r[1] != obj and not (r[0] == NEXTTO and r[2] == obj)
    )


def _place(state: WorldState, action_id: str, canonical: str, obj: str,
           world: WorldRegistry, held_hint: Optional[str]) -> Union[WorldState, PreconditionFailure]:
    held = state.held
    if held is None:
        return _fail(Reason.EMPTY_HAND, action_id, obj, "nothing is held")
    if held_hint is not None and held_hint != held:
        return _fail(Reason.HELD_MISMATCH, action_id, obj, f"holding '{held}', not '{held_hint}'")
    if state.near != obj:
        return _fail(Reason.NOT_NEAR, action_id, obj, f"robot is near '{state.near}'")
    if obj == held or any(ref == held for _, ref in state.ancestors(obj)):
        return _fail(Reason.CYCLIC_PLACEMENT, action_id, obj, f"'{obj}' is '{held}' or rests in it")

    spec = world[obj]
    if canonical == 'PLACE_ON_TOP':
        if not (spec.surface or spec.container):
            return _fail(Reason.NOT_A_SURFACE, action_id, obj, f"'{obj}' is not a surface")
        relation = (ONTOP, held, obj)
    elif canonical == 'PLACE_INSIDE':
        if not spec.container:
            return _fail(Reason.NOT_A_CONTAINER, action_id, obj, f"'{obj}' is not a container")
        if spec.openable and obj not in state.open_set:
            return _fail(Reason.CLOSED_CONTAINER, action_id, obj, f"'{obj}' is closed")
        relation = (INSIDE, held, obj)
    else:
        relation = (NEXTTO, held, obj)
    return replace(state, held=None, relations=state.relations | {relation})


def apply(
    state: WorldState,
    action_id: str,
    obj: Optional[str],
    world: WorldRegistry,
    held_hint: Optional[str] = None,
    aliases: Optional[Mapping[str, str]] = None
) -> Union[WorldState, PreconditionFailure]:
    """
    Apply one primitive to a state.

    Args:
        state: Current state
        action_id: Primitive name, aliases resolved through `aliases`
        obj: Target object id (None only for RELEASE)
        world: Object registry of the scene
        held_hint: Explicit manipulated object of a placement, if the tree names one
        aliases: Synonym -> primitive table, defaults to ALIASES

    Returns:
        The successor state, or a PreconditionFailure

    Raises:
        UnknownPrimitiveError: If the action has no symbolic semantics
        UnknownObjectError: If obj or held_hint is not in the registry
        ExecutionError: If a primitive that needs an object gets none
    """
    canonical = canonical_action(action_id, aliases)
    if canonical not in SEMANTIC_PRIMITIVES:
        raise UnknownPrimitiveError(f"Primitive '{action_id}' has no symbolic semantics")

    if canonical == 'RELEASE':
        if state.held is None:
            return _fail(Reason.EMPTY_HAND, action_id, obj, "nothing is held")
        relations = state.relations
        if state.near is not None and state.near != state.held:
            relations = relations | {(NEXTTO, state.held, state.near)}
        return replace(state, held=None, relations=relations)

    if obj is None:
        raise ExecutionError(f"Action {action_id} needs an 'obj' attribute")
    spec = world.spec(obj)
    if held_hint is not None:
        world.spec(held_hint)

    if canonical == 'NAVIGATE_TO':
        return replace(state, near=obj)

    if canonical == 'GRASP':
        if state.held is not None:
            return _fail(Reason.HANDS_FULL, action_id, obj, f"already holding '{state.held}'")
        if state.near != obj:
            return _fail(Reason.NOT_NEAR, action_id, obj, f"robot is near '{state.near}'")
        if not spec.graspable:
            return _fail(Reason.NOT_GRASPABLE, action_id, obj, f"'{obj}' cannot be picked up")
        blocker = _occluder(state, obj, world)
        if blocker is not None:
            return _fail(Reason.OCCLUDED, action_id, obj, f"'{obj}' is inside closed '{blocker}'")
        return replace(state, held=obj, relations=_detach(state, obj))

    if canonical in PLACEMENT_PRIMITIVES:
        return _place(state, action_id, canonical, obj, world, held_hint)

    if canonical in ('OPEN', 'CLOSE'):
        if state.held is not None:
            return _fail(Reason.HANDS_FULL, action_id, obj, f"holding '{state.held}'")
        if state.near != obj:
            return _fail(Reason.NOT_NEAR, action_id, obj, f"robot is near '{state.near}'")
        if not spec.openable:
            return _fail(Reason.NOT_OPENABLE, action_id, obj, f"'{obj}' cannot be opened")
        if canonical == 'OPEN':
            return replace(state, open_set=state.open_set | {obj})
        return replace(state, open_set=state.open_set - {obj})

    if canonical in ('TOGGLE_ON', 'TOGGLE_OFF'):
        if state.near != obj:
            return _fail(Reason.NOT_NEAR, action_id, obj, f"robot is near '{state.near}'")
        if not spec.toggleable:
            return _fail(Reason.NOT_TOGGLEABLE, action_id, obj, f"'{obj}' has no switch")
        if canonical == 'TOGGLE_ON':
            return replace(state, toggled_set=state.toggled_set | {obj})
        return replace(state, toggled_set=state.toggled_set - {obj})

    if canonical == 'POUR' and state.held is None:
        return _fail(Reason.EMPTY_HAND, action_id, obj, "nothing to pour from")
    if state.near != obj:
        return _fail(Reason.NOT_NEAR, action_id, obj, f"robot is near '{state.near}'")
    return state


# Condition leaf id -> (predicate kind, needs target, negate)
CONDITIONS: Dict[str, Tuple[str, bool, bool]] = {
    'IS_OPEN': (OPEN, False, False),
    'IS_CLOSED': (OPEN, False, True),
    'IS_TOGGLED_ON': (TOGGLED_ON, False, False),
    'IS_INSIDE': (INSIDE, True, False),
    'IS_ON_TOP': (ONTOP, True, False),
    'IS_NEXT_TO': (NEXTTO, True, False),
}


def evaluate_condition(state: WorldState, condition: Condition, world: WorldRegistry) -> bool:
    """
    Evaluate a Condition leaf against the current state.

    Raises:
        ExecutionError: If the condition id or its attributes are not understood
        UnknownObjectError: If it names an object outside the scene
    """
    cid = condition.id
    if cid == 'HANDS_EMPTY':
        return state.held is None
    obj = condition.obj
    if obj is None:
        raise ExecutionError(f"Condition {cid} needs an 'obj' attribute")
    world.spec(obj)
    if cid == 'IS_HOLDING':
        return state.held == obj
    if cid == 'IS_NEAR':
        return state.near == obj
    if cid not in CONDITIONS:
        raise ExecutionError(f"Unknown condition '{cid}'")
    kind, binary, negate = CONDITIONS[cid]
    target = None
    if binary:
        target = condition.get('target')
        if target is None:
            raise ExecutionError(f"Condition {cid} needs a 'target' attribute")
        world.spec(target)
    return state.holds(kind, obj, target) != negate


@dataclass(frozen=True)
class Step:
    """One evaluated leaf of an execution."""

    tag: str
    action: str
    obj: Optional[str]
    status: TickStatus
    reason: Optional[Reason] = None
    message: str = ''

    def to_record(self) -> Dict:
        return {
            'tag': self.tag,
            'action': self.action,
            'obj': self.obj,
            'status': self.status.value,
            'reason': self.reason.value if self.reason else None,
            'message': self.message,
        }


@dataclass(frozen=True)
class ExecutionTrace:
    """Every step of one execution plus the goal verdict."""

    steps: Tuple[Step, ...]
    final_status: TickStatus
    final_state: WorldState
    goal_satisfied: bool
    events: Tuple[TraceEvent, ...] = field(default=(), compare=False)

    @property
    def failed_step(self) -> Optional[Step]:
        """First failed Action step, if any."""
        for step in self.steps:
            if step.tag == 'Action' and step.status == TickStatus.FAILURE:
                return step
        return None

    def to_record(self) -> Dict:
        failed = self.failed_step
        return {
            'final_status': self.final_status.value,
            'goal_satisfied': self.goal_satisfied,
            'steps': [s.to_record() for s in self.steps],
            'failed_step': failed.to_record() if failed else None,
            'final_state': self.final_state.to_record(),
        }


def execute(
    tree: BehaviorTree,
    initial: WorldState,
    world: WorldRegistry,
    goal: GoalSpec,
    aliases: Optional[Mapping[str, str]] = None
) -> ExecutionTrace:
    """
    Tick a tree against the symbolic world and check the goal on the final state.

    Unknown objects and primitives become failed steps. Malformed leaves
    (an Action missing its object, an unknown Condition) raise ExecutionError.
    """
    current = [initial]
    steps: List[Step] = []

    def handle(leaf: Leaf) -> TickStatus:
        obj = leaf.obj
        if isinstance(leaf, Condition):
            try:
                ok = evaluate_condition(current[0], leaf, world)
            except UnknownObjectError as e:
                steps.append(Step('Condition', leaf.id, obj, TickStatus.FAILURE,
                                  Reason.UNKNOWN_OBJECT, e.message))
                return TickStatus.FAILURE
            status = TickStatus.SUCCESS if ok else TickStatus.FAILURE
            steps.append(Step('Condition', leaf.id, obj, status,
                              None if ok else Reason.CONDITION_FALSE))
            return status

        try:
            outcome = apply(current[0], leaf.id, obj, world, held_hint=leaf.get('held'), aliases=aliases)
        except UnknownObjectError as e:
            outcome = _fail(Reason.UNKNOWN_OBJECT, leaf.id, obj, e.message)
        except UnknownPrimitiveError as e:
            outcome = _fail(Reason.UNKNOWN_PRIMITIVE, leaf.id, obj, e.message)

        if isinstance(outcome, PreconditionFailure):
            logger.debug(f"Step failed: {outcome}")
            steps.append(Step('Action', leaf.id, obj, TickStatus.FAILURE, outcome.reason, outcome.message))
            return TickStatus.FAILURE
        current[0] = outcome
        steps.append(Step('Action', leaf.id, obj, TickStatus.SUCCESS))
        return TickStatus.SUCCESS

    events: List[TraceEvent] = []
    status = tick(tree, handle, events)
    final_state = current[0]
    satisfied = check_goals(final_state, goal)
    return ExecutionTrace(tuple(steps), status, final_state, satisfied, tuple(events))
