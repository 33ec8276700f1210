"""
Behavior tree data model and tick interpreter for the BehaviorTree.CPP
XML dialect (Sequence, Fallback, Action, Condition, RetryUntilSuccessful,
Timeout, SubTree).

Nodes are frozen dataclasses; a BehaviorTree is safe to share between
threads once built.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from types import MappingProxyType
from typing import (Callable, ClassVar, Dict, FrozenSet, Iterator, List,
                    Mapping, Optional, Set, Tuple, Union)

from btforge.exceptions import (
    BtForgeError,
    ChildArityError,
    ExecutionError,
    InvalidAttributeError,
    MissingAttributeError,
    MissingMainTreeError,
    SubTreeCycleError,
    UnresolvedSubTreeError
)

logger = logging.getLogger(__name__)

CONTROL_TAGS = ('Sequence', 'Fallback')
DECORATOR_TAGS = ('RetryUntilSuccessful', 'Timeout')
LEAF_TAGS = ('Action', 'Condition')
NODE_TAGS = CONTROL_TAGS + DECORATOR_TAGS + LEAF_TAGS + ('SubTree',)

# Structural vocabulary compared by StructMatch
STRUCTURE_TAGS = ('RetryUntilSuccessful', 'Fallback', 'Condition', 'Timeout', 'SubTree')

Attributes = Tuple[Tuple[str, str], ...]


class TickStatus(Enum):
    """Status reported by a ticked node."""
    SUCCESS = "Success"
    FAILURE = "Failure"
    RUNNING = "Running"


def _freeze_attributes(attributes: Union[Mapping[str, str], Attributes, None]) -> Attributes:
    if not attributes:
        return ()
    items = attributes.items() if isinstance(attributes, Mapping) else attributes
    return tuple(sorted((str(k), str(v)) for k, v in items))


class _Leaf:
    """Shared behaviour of Action and Condition leaves."""

    tag: ClassVar[str] = ''
    id: str
    attributes: Attributes

    def __post_init__(self):
        if not isinstance(self.id, str) or not self.id.strip():
            raise MissingAttributeError(f"{self.tag} node requires a non-empty ID")
        object.__setattr__(self, 'attributes', _freeze_attributes(self.attributes))
        if any(k == 'ID' for k, _ in self.attributes):
            raise InvalidAttributeError(f"{self.tag} ID must not be repeated as an attribute")

    @classmethod
    def of(cls, node_id: str, **attributes: str):
        """Build a leaf from keyword attributes, e.g. Action.of("GRASP", obj="teapot")."""
        return cls(node_id, _freeze_attributes(attributes))

    def get(self, key: str, default: Optional[str] = None) -> Optional[str]:
        for k, v in self.attributes:
            if k == key:
                return v
        return default

    @property
    def obj(self) -> Optional[str]:
        return self.get('obj')

    def with_attribute(self, key: str, value: str):
        attrs = dict(self.attributes)
        attrs[key] = value
        return type(self)(self.id, _freeze_attributes(attrs))

    def with_id(self, node_id: str):
        return type(self)(node_id, self.attributes)


@dataclass(frozen=True)
class Action(_Leaf):
    id: str
    attributes: Attributes = ()
    tag: ClassVar[str] = 'Action'


@dataclass(frozen=True)
class Condition(_Leaf):
    id: str
    attributes: Attributes = ()
    tag: ClassVar[str] = 'Condition'


class _Control:
    tag: ClassVar[str] = ''
    children: tuple

    def __post_init__(self):
        object.__setattr__(self, 'children', tuple(self.children))
        if len(self.children) < 1:
            raise ChildArityError(f"{self.tag} needs at least one child")


@dataclass(frozen=True)
class Sequence(_Control):
    children: tuple
    tag: ClassVar[str] = 'Sequence'


@dataclass(frozen=True)
class Fallback(_Control):
    children: tuple
    tag: ClassVar[str] = 'Fallback'


@dataclass(frozen=True)
class RetryUntilSuccessful:
    num_attempts: int
    child: 'BtNode'
    tag: ClassVar[str] = 'RetryUntilSuccessful'

    def __post_init__(self):
        if isinstance(self.num_attempts, bool) or not isinstance(self.num_attempts, int) \
                or self.num_attempts < 1:
            raise InvalidAttributeError(
                f"RetryUntilSuccessful num_attempts must be a positive integer, got {self.num_attempts!r}"
            )


@dataclass(frozen=True)
class Timeout:
    msec: int
    child: 'BtNode'
    tag: ClassVar[str] = 'Timeout'

    def __post_init__(self):
        if isinstance(self.msec, bool) or not isinstance(self.msec, int) or self.msec < 0:
            raise InvalidAttributeError(
                f"Timeout msec must be a non-negative integer, got {self.msec!r}"
            )


@dataclass(frozen=True)
class SubTree:
    tree_id: str
    attributes: Attributes = ()
    tag: ClassVar[str] = 'SubTree'

    def __post_init__(self):
        if not isinstance(self.tree_id, str) or not self.tree_id.strip():
            raise MissingAttributeError("SubTree node requires a non-empty ID")
        object.__setattr__(self, 'attributes', _freeze_attributes(self.attributes))


BtNode = Union[Sequence, Fallback, Action, Condition, RetryUntilSuccessful, Timeout, SubTree]
Leaf = Union[Action, Condition]


def children_of(node: BtNode) -> Tuple[BtNode, ...]:
    """Return the direct children of a node in document order."""
    if isinstance(node, (Sequence, Fallback)):
        return node.children
    if isinstance(node, (RetryUntilSuccessful, Timeout)):
        return (node.child,)
    return ()


@dataclass(frozen=True, eq=True)
class BehaviorTree:
    """A parsed document: the main tree id plus every defined tree."""

    main_tree_id: str
    trees: Mapping[str, BtNode]

    def __post_init__(self):
        object.__setattr__(self, 'trees', MappingProxyType(dict(self.trees)))
        if self.main_tree_id not in self.trees:
            raise MissingMainTreeError(f"Main tree '{self.main_tree_id}' is not defined")
        self._check_references()

    def __hash__(self):
        return hash((self.main_tree_id, tuple(sorted(self.trees.items(), key=lambda kv: kv[0]))))

    @classmethod
    def single(cls, root: BtNode, tree_id: str = 'MainTree') -> 'BehaviorTree':
        return cls(tree_id, {tree_id: root})

    @property
    def root(self) -> BtNode:
        return self.trees[self.main_tree_id]

    def ordered_tree_ids(self) -> List[str]:
        """Main tree first, then the remaining trees alphabetically."""
        return [self.main_tree_id] + sorted(t for t in self.trees if t != self.main_tree_id)

    def _check_references(self) -> None:
        graph: Dict[str, Set[str]] = {}
        for tree_id, root in self.trees.items():
            refs = set()
            for node in _walk(root):
                if isinstance(node, SubTree):
                    if node.tree_id not in self.trees:
                        raise UnresolvedSubTreeError(
                            f"SubTree '{node.tree_id}' referenced from '{tree_id}' is not defined"
                        )
                    refs.add(node.tree_id)
            graph[tree_id] = refs

        # three-colour DFS
        state: Dict[str, int] = {}

        def visit(tree_id: str, path: List[str]) -> None:
            state[tree_id] = 1
            for ref in sorted(graph[tree_id]):
                if state.get(ref) == 1:
                    cycle = ' -> '.join(path + [ref])
                    raise SubTreeCycleError(f"SubTree references form a cycle: {cycle}")
                if ref not in state:
                    visit(ref, path + [ref])
            state[tree_id] = 2

        for tree_id in graph:
            if tree_id not in state:
                visit(tree_id, [tree_id])


def _walk(node: BtNode) -> Iterator[BtNode]:
    yield node
    for child in children_of(node):
        yield from _walk(child)


def iter_nodes(tree: BehaviorTree) -> Iterator[BtNode]:
    """
    Walk every node of the document depth-first in document order.

    SubTree definitions are expanded in place the first time they are
    referenced; trees never referenced from the main tree follow at the end.
    """
    seen: Set[str] = set()

    def expand(tree_id: str) -> Iterator[BtNode]:
        seen.add(tree_id)
        for node in _walk(tree.trees[tree_id]):
            yield node
            if isinstance(node, SubTree) and node.tree_id not in seen:
                yield from expand(node.tree_id)

    yield from expand(tree.main_tree_id)
    for tree_id in tree.trees:
        if tree_id not in seen:
            yield from expand(tree_id)


def extract_action_set(tree: BehaviorTree) -> FrozenSet[str]:
    """Distinct Action ids; conditions, control and decorator tags excluded."""
    return frozenset(node.id for node in iter_nodes(tree) if isinstance(node, Action))


def extract_decorator_set(tree: BehaviorTree) -> FrozenSet[str]:
    """Structural tags from RetryUntilSuccessful/Fallback/Condition/Timeout/SubTree present in the tree."""
    return frozenset(node.tag for node in iter_nodes(tree) if node.tag in STRUCTURE_TAGS)


def action_nodes(tree: BehaviorTree) -> List[Action]:
    """Action nodes of the main tree in document order (SubTrees not expanded)."""
    return [node for node in _walk(tree.root) if isinstance(node, Action)]


def _rebuild(node: BtNode, fn: Callable[[Action], BtNode]) -> BtNode:
    if isinstance(node, Action):
        return fn(node)
    if isinstance(node, Sequence):
        return Sequence(tuple(_rebuild(c, fn) for c in node.children))
    if isinstance(node, Fallback):
        return Fallback(tuple(_rebuild(c, fn) for c in node.children))
    if isinstance(node, RetryUntilSuccessful):
        return RetryUntilSuccessful(node.num_attempts, _rebuild(node.child, fn))
    if isinstance(node, Timeout):
        return Timeout(node.msec, _rebuild(node.child, fn))
    return node


def map_actions(tree: BehaviorTree, fn: Callable[[Action], BtNode]) -> BehaviorTree:
    """
    Rebuild every tree of the document, replacing each Action by fn(action).

    Actions are visited in serialization order (main tree first), so fn may
    carry state across calls.
    """
    trees = {tree_id: _rebuild(tree.trees[tree_id], fn) for tree_id in tree.ordered_tree_ids()}
    return BehaviorTree(tree.main_tree_id, trees)


def replace_action(tree: BehaviorTree, index: int, fn: Callable[[Action], BtNode]) -> BehaviorTree:
    """Replace the index-th Action of the main tree (document order) by fn(action)."""
    counter = [0]

    def visit(action: Action) -> BtNode:
        position = counter[0]
        counter[0] += 1
        return fn(action) if position == index else action

    trees = dict(tree.trees)
    trees[tree.main_tree_id] = _rebuild(tree.root, visit)
    return BehaviorTree(tree.main_tree_id, trees)


@dataclass(frozen=True)
class TraceEvent:
    """One interpreter event: a leaf evaluation or a decorator/SubTree activation."""
    tag: str
    status: TickStatus
    detail: str = ''


LeafHandler = Callable[[Leaf], TickStatus]


class _Interpreter:

    def __init__(self, tree: BehaviorTree, leaf_handler: LeafHandler,
                 events: Optional[List[TraceEvent]]):
        self.tree = tree
        self.leaf_handler = leaf_handler
        self.events = events

    def _record(self, tag: str, status: TickStatus, detail: str = '') -> None:
        if self.events is not None:
            self.events.append(TraceEvent(tag, status, detail))

    def _leaf(self, node: Leaf) -> TickStatus:
        try:
            status = self.leaf_handler(node)
        except BtForgeError as e:
            if isinstance(e, ExecutionError):
                raise
            raise ExecutionError(f"Leaf handler failed on {node.tag} {node.id}: {e.message}") from e
        except Exception as e:
            raise ExecutionError(f"Leaf handler failed on {node.tag} {node.id}: {e}") from e

        if status not in (TickStatus.SUCCESS, TickStatus.FAILURE):
            # symbolic leaves are instantaneous, Running cannot be resumed here
            raise ExecutionError(f"Leaf handler returned {status!r} for {node.tag} {node.id}")
        self._record(node.tag, status, node.id)
        return status

    def run(self, node: BtNode) -> TickStatus:
        if isinstance(node, (Action, Condition)):
            return self._leaf(node)

        if isinstance(node, Sequence):
            for child in node.children:
                if self.run(child) == TickStatus.FAILURE:
                    return TickStatus.FAILURE
            return TickStatus.SUCCESS

        if isinstance(node, Fallback):
            for child in node.children:
                if self.run(child) == TickStatus.SUCCESS:
                    return TickStatus.SUCCESS
            return TickStatus.FAILURE

        if isinstance(node, RetryUntilSuccessful):
            for attempt in range(1, node.num_attempts + 1):
                if self.run(node.child) == TickStatus.SUCCESS:
                    self._record(node.tag, TickStatus.SUCCESS,
                                 f"attempt {attempt}/{node.num_attempts}")
                    return TickStatus.SUCCESS
            self._record(node.tag, TickStatus.FAILURE,
                         f"exhausted {node.num_attempts} attempts")
            return TickStatus.FAILURE

        if isinstance(node, Timeout):
            status = self.run(node.child)
            self._record(node.tag, status, f"budget {node.msec} ms")
            return status

        if isinstance(node, SubTree):
            if node.tree_id not in self.tree.trees:
                raise UnresolvedSubTreeError(f"SubTree '{node.tree_id}' is not defined")
            status = self.run(self.tree.trees[node.tree_id])
            self._record(node.tag, status, node.tree_id)
            return status

        raise ExecutionError(f"Cannot tick node of type {type(node).__name__}")


def tick(tree: BehaviorTree, leaf_handler: LeafHandler,
         events: Optional[List[TraceEvent]] = None) -> TickStatus:
    """
    Tick the main tree once, synchronously, to completion.

    Args:
        tree: Parsed behavior tree
        leaf_handler: Callback returning SUCCESS or FAILURE for every leaf
        events: Optional list receiving TraceEvent entries in evaluation order

    Returns:
        Status of the root node

    Raises:
        ExecutionError: If the leaf handler raises or returns RUNNING
    """
    logger.debug(f"Ticking tree '{tree.main_tree_id}'")
    return _Interpreter(tree, leaf_handler, events).run(tree.root)
