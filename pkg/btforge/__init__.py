"""
btforge - behavior-tree toolkit: parse, validate, execute, score and
synthesize trees in the BehaviorTree.CPP XML dialect.
"""

__version__ = "0.1.0"

from btforge.tree import (
    Action,
    BehaviorTree,
    Condition,
    Fallback,
    RetryUntilSuccessful,
    Sequence,
    SubTree,
    TickStatus,
    Timeout,
    extract_action_set,
    extract_decorator_set,
    tick
)
from btforge.xmlio import parse_xml, serialize
from btforge.conformance import PrimitiveLibrary, ValidationReport, validate
from btforge.config import load_library, load_synonyms
from btforge.world import GoalSpec, Predicate, Reason, WorldRegistry, WorldState, apply, check_goals, execute
from btforge.tasks import TaskBundle, load_task, load_tasks
from btforge.metrics import action_jaccard, aggregate_suite, bleu, rouge, score_pair, struct_match
from btforge.frames import contact_sheet, discover_sources, fallback_embed, kcenter_greedy, subsample
from btforge.annotation import SceneAnalysis, derive_allowed_actions, teacher_loop
from btforge.augment import lexical_augment, structural_augment
from btforge.dataset import DatasetConfig, build_dataset
from btforge.suite import run_suite

from btforge.exceptions import (
    BtForgeError,
    TreeFormatError,
    ExecutionError,
    SchemaError,
    ConfigurationError
)

__all__ = [
    'Action',
    'BehaviorTree',
    'Condition',
    'Fallback',
    'RetryUntilSuccessful',
    'Sequence',
    'SubTree',
    'TickStatus',
    'Timeout',
    'extract_action_set',
    'extract_decorator_set',
    'tick',
    'parse_xml',
    'serialize',
    'PrimitiveLibrary',
    'ValidationReport',
    'validate',
    'load_library',
    'load_synonyms',
    'GoalSpec',
    'Predicate',
    'Reason',
    'WorldRegistry',
    'WorldState',
    'apply',
    'check_goals',
    'execute',
    'TaskBundle',
    'load_task',
    'load_tasks',
    'action_jaccard',
    'aggregate_suite',
    'bleu',
    'rouge',
    'score_pair',
    'struct_match',
    'contact_sheet',
    'discover_sources',
    'fallback_embed',
    'kcenter_greedy',
    'subsample',
    'SceneAnalysis',
    'derive_allowed_actions',
    'teacher_loop',
    'lexical_augment',
    'structural_augment',
    'DatasetConfig',
    'build_dataset',
    'run_suite',
    'BtForgeError',
    'TreeFormatError',
    'ExecutionError',
    'SchemaError',
    'ConfigurationError'
]
