"""
Record augmentation: structural (wrap one action in a control-flow construct)
and lexical (synonym swaps and explicit manipulated objects).

Both return new records; XML, instruction and allowed actions change together.
"""

import logging
import random
import re
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from btforge.annotation import derive_allowed_actions
from btforge.exceptions import (
    BadTargetError,
    NoPriorGraspError,
    RedundantConstructError,
    UnknownConstructError
)
from btforge.records import EpisodeRecord
from btforge.tree import (
    Action,
    BtNode,
    Fallback,
    RetryUntilSuccessful,
    Sequence as SequenceNode,
    Timeout,
    action_nodes,
    extract_decorator_set,
    map_actions,
    replace_action
)
from btforge.world import GRASP_FAMILY, PLACEMENT_PRIMITIVES, canonical_action
from btforge.xmlio import parse_xml, serialize

logger = logging.getLogger(__name__)

RETRY = 'retry'
TIMEOUT = 'timeout'
FALLBACK = 'fallback'
CONSTRUCT_KINDS = (RETRY, TIMEOUT, FALLBACK)

CONSTRUCT_TAGS = {
    RETRY: 'RetryUntilSuccessful',
    TIMEOUT: 'Timeout',
    FALLBACK: 'Fallback',
}

STRUCTURAL_SUFFIX = '__struct'

_CONSTRUCT_RE = re.compile(r'^\s*([a-z_]+)\s*(?:\(\s*(\d+)\s*\))?\s*$')


@dataclass(frozen=True)
class Construct:
    """A control-flow construct: retry(n), timeout(ms) or fallback."""

    kind: str
    value: Optional[int] = None

    def __post_init__(self):
        if self.kind not in CONSTRUCT_KINDS:
            raise UnknownConstructError(f"Unknown construct '{self.kind}'",
                                        tip=f"Use one of: {', '.join(CONSTRUCT_KINDS)}")
        if self.kind == RETRY and (self.value is None or self.value < 1):
            raise UnknownConstructError(f"retry needs a positive attempt count, got {self.value!r}")
        if self.kind == TIMEOUT and (self.value is None or self.value < 0):
            raise UnknownConstructError(f"timeout needs a non-negative budget in ms, got {self.value!r}")

    @classmethod
    def parse(cls, text: str) -> 'Construct':
        """Parse 'retry(3)', 'timeout(5000)' or 'fallback'."""
        match = _CONSTRUCT_RE.match(text or '')
        if not match:
            raise UnknownConstructError(f"Cannot parse construct '{text}'")
        value = int(match.group(2)) if match.group(2) is not None else None
        return cls(match.group(1), value)

    @property
    def tag(self) -> str:
        return CONSTRUCT_TAGS[self.kind]

    def __str__(self) -> str:
        return self.kind if self.value is None else f"{self.kind}({self.value})"


def sample_construct(
    rng: random.Random,
    weights: Optional[Mapping[str, float]] = None,
    retry_range: Tuple[int, int] = (2, 5),
    timeout_range: Tuple[int, int] = (1000, 10000)
) -> Construct:
    """Draw a construct; kinds are uniform unless weighted, timeouts are whole seconds."""
    kinds = list(CONSTRUCT_KINDS)
    kind = rng.choices(kinds, weights=[weights.get(k, 0.0) for k in kinds] if weights else None)[0]
    if kind == RETRY:
        return Construct(RETRY, rng.randint(*retry_range))
    if kind == TIMEOUT:
        low, high = timeout_range
        return Construct(TIMEOUT, rng.randint(low // 1000, max(high // 1000, low // 1000)) * 1000)
    return Construct(FALLBACK)


def _subject(action: Action) -> str:
    return f"{action.id} on {action.obj}" if action.obj else action.id


def instruction_clause(construct: Construct, action: Action) -> str:
    """Fixed sentence requesting the construct for one action."""
    subject = _subject(action)
    if construct.kind == RETRY:
        return f"Retry {subject} up to {construct.value} times if it fails."
    if construct.kind == TIMEOUT:
        return f"Give up on {subject} if it takes longer than {construct.value} ms."
    if action.obj:
        return f"If {subject} fails, navigate to {action.obj} again and try it once more."
    return f"If {subject} fails, try it once more."


def wrap_action(construct: Construct, action: Action) -> BtNode:
    if construct.kind == RETRY:
        return RetryUntilSuccessful(construct.value, action)
    if construct.kind == TIMEOUT:
        return Timeout(construct.value, action)
    if action.obj:
        recovery = SequenceNode((Action.of('NAVIGATE_TO', obj=action.obj), action))
    else:
        recovery = action
    return Fallback((action, recovery))


def structural_augment(
    record: EpisodeRecord,
    construct: Optional[Construct] = None,
    target: Optional[int] = None,
    rng: Optional[random.Random] = None,
    weights: Optional[Mapping[str, float]] = None,
    retry_range: Tuple[int, int] = (2, 5),
    timeout_range: Tuple[int, int] = (1000, 10000)
) -> EpisodeRecord:
    """
    Wrap one Action of the record's tree with a control-flow construct.

    Args:
        record: Source record
        construct: Construct to apply, drawn from rng when None
        target: Index of the Action in document order, drawn from rng when None
        rng: Random stream for the draws

    Returns:
        New record with id '<id>__struct', the wrapped tree, the instruction
        extended by a request for the construct and re-derived allowed actions

    Raises:
        BadTargetError: If target does not index an Action
        UnknownConstructError: If the construct is not retry, timeout or fallback
        RedundantConstructError: If the tree already uses the construct's tag
    """
    rng = rng or random.Random(0)
    tree = parse_xml(record.bt_xml)
    actions = action_nodes(tree)
    if not actions:
        raise BadTargetError(f"Record {record.episode_id} has no Action to wrap")

    if construct is None:
        construct = sample_construct(rng, weights, retry_range, timeout_range)
    elif isinstance(construct, str):
        construct = Construct.parse(construct)

    if target is None:
        target = rng.randrange(len(actions))
    if isinstance(target, bool) or not isinstance(target, int) or not 0 <= target < len(actions):
        raise BadTargetError(f"Target {target!r} does not index one of {len(actions)} Action nodes")

    if construct.tag in extract_decorator_set(tree):
        raise RedundantConstructError(
            f"Record {record.episode_id} already uses {construct.tag}; {construct} would not change its structure"
        )

    action = actions[target]
    augmented = replace_action(tree, target, lambda a: wrap_action(construct, a))
    logger.debug(f"{record.episode_id}: wrapped action {target} ({action.id}) with {construct}")
    return record.evolve(
        episode_id=record.episode_id + STRUCTURAL_SUFFIX,
        instruction=f"{record.instruction.rstrip()} {instruction_clause(construct, action)}",
        allowed_actions=tuple(derive_allowed_actions(augmented)),
        bt_xml=serialize(augmented),
        structurally_augmented=True,
    )


def _dedupe(names: Sequence[str]) -> List[str]:
    out: List[str] = []
    for name in names:
        if name not in out:
            out.append(name)
    return out


def lexical_augment(
    record: EpisodeRecord,
    probability: float = 0.5,
    seed: Optional[int] = None,
    rng: Optional[random.Random] = None,
    synonyms: Optional[Mapping[str, Sequence[str]]] = None,
    explicit_objects: bool = True
) -> EpisodeRecord:
    """
    Swap primitive names for synonyms and make manipulated objects explicit.

    Every allowed primitive with synonyms gets one Bernoulli(probability)
    draw; on success all its occurrences are renamed to a synonym drawn
    uniformly. One more draw decides whether placement actions gain a `held`
    attribute naming the object of the most recent grasp before them.

    Raises:
        NoPriorGraspError: If an explicit placement has no grasp before it
    """
    if probability <= 0:
        return record
    rng = rng or random.Random(seed)
    if synonyms is None:
        from btforge.config import load_synonyms
        synonyms = load_synonyms()

    renames: Dict[str, str] = {}
    for name in record.allowed_actions:
        alternatives = synonyms.get(name)
        if alternatives and rng.random() < probability:
            renames[name] = rng.choice(list(alternatives))
    explicit = explicit_objects and rng.random() < probability

    tree = parse_xml(record.bt_xml)
    last_grasped: List[Optional[str]] = [None]

    def rewrite(action: Action) -> Action:
        canonical = canonical_action(action.id)
        if canonical in GRASP_FAMILY and action.obj:
            last_grasped[0] = action.obj
        if explicit and canonical in PLACEMENT_PRIMITIVES and action.get('held') is None:
            if last_grasped[0] is None:
                raise NoPriorGraspError(
                    f"{action.id} on {action.obj} in {record.episode_id} has no earlier grasp to name"
                )
            action = action.with_attribute('held', last_grasped[0])
        if action.id in renames:
            action = action.with_id(renames[action.id])
        return action

    augmented = serialize(map_actions(tree, rewrite))
    if augmented == record.bt_xml:
        return record
    if renames:
        logger.debug(f"{record.episode_id}: renamed {renames}")
    return record.evolve(
        allowed_actions=tuple(_dedupe([renames.get(a, a) for a in record.allowed_actions])),
        bt_xml=augmented,
        lexically_augmented=True,
    )
