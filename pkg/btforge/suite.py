"""
Task-suite harness: k candidate trees per task, validated, executed in the
symbolic world and aggregated into BT-Valid, SR and Pass@k.
"""

import os
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from btforge.conformance import PrimitiveLibrary, ValidationReport, validate
from btforge.exceptions import (
    ConfigurationError,
    ExecutionError,
    InvalidPathError,
    RaggedAttemptsError,
    TreeFormatError
)
from btforge.generator import STUDENT, Generator, GeneratorRequest
from btforge.metrics import SuiteResult, aggregate_suite
from btforge.tasks import TaskBundle
from btforge.world import ExecutionTrace, execute
from btforge.xmlio import extract_xml_block, parse_xml

logger = logging.getLogger(__name__)

COT = 'cot'
ZERO_SHOT = 'zs'
PROMPTING_MODES = (COT, ZERO_SHOT)

CANDIDATE_SUFFIXES = ('.xml', '.txt')


@dataclass(frozen=True)
class AttemptOutcome:
    """One candidate tree run against its task."""

    index: int
    report: ValidationReport
    success: bool
    trace: Optional[ExecutionTrace] = None
    error: Optional[str] = None

    def to_record(self) -> Dict:
        failed = self.trace.failed_step if self.trace else None
        return {
            'attempt': self.index,
            'valid': self.report.verdict,
            'success': self.success,
            'failed_step': failed.to_record() if failed else None,
            'error': self.error or self.report.error,
        }


@dataclass(frozen=True)
class TaskOutcome:
    task: str
    difficulty: str
    attempts: Tuple[AttemptOutcome, ...]

    def to_record(self) -> Dict:
        return {
            'task': self.task,
            'difficulty': self.difficulty,
            'valid': self.attempts[0].report.verdict,
            'first_success': self.attempts[0].success,
            'any_success': any(a.success for a in self.attempts),
            'attempts': [a.to_record() for a in self.attempts],
        }


@dataclass(frozen=True)
class SuiteReport:
    """Per-task outcomes plus the aggregate."""

    tasks: Tuple[TaskOutcome, ...]
    result: SuiteResult

    def to_records(self) -> List[Dict]:
        return [t.to_record() for t in self.tasks]


def evaluate_candidate(
    task: TaskBundle,
    text: str,
    library: PrimitiveLibrary,
    index: int = 1,
    aliases: Optional[Mapping[str, str]] = None
) -> AttemptOutcome:
    """
    Validate one raw candidate and, if it conforms, execute it.

    A candidate counts as a success only when it passes conformance and the
    final state satisfies every goal predicate.
    """
    xml = extract_xml_block(text)
    report = validate(xml, library)
    if not report.verdict:
        return AttemptOutcome(index, report, success=False)
    try:
        trace = execute(parse_xml(xml), task.initial_state, task.registry, task.goal, aliases)
    except (ExecutionError, TreeFormatError) as e:
        logger.debug(f"{task.name} attempt {index}: {e.message}")
        return AttemptOutcome(index, report, success=False, error=e.message)
    return AttemptOutcome(index, report, success=trace.goal_satisfied, trace=trace)


def load_candidates(directory: str, task_name: str, k: int) -> List[str]:
    """
    The first k candidate files of a task, in filename order.

    Candidates live in <directory>/<task_name>/ as .xml or .txt files holding
    a raw model response (optionally preceded by its Scene Analysis).

    Raises:
        InvalidPathError: If the task has no candidate directory
        RaggedAttemptsError: If it holds fewer than k candidates
    """
    task_dir = os.path.join(directory, task_name)
    if not os.path.isdir(task_dir):
        raise InvalidPathError(f"Candidate directory does not exist: {task_dir}")
    names = sorted(n for n in os.listdir(task_dir) if n.endswith(CANDIDATE_SUFFIXES))
    if len(names) < k:
        raise RaggedAttemptsError(f"Task '{task_name}' has {len(names)} candidates, {k} attempts requested")
    if len(names) > k:
        logger.warning(f"Task '{task_name}': using {k} of {len(names)} candidates, ignoring {', '.join(names[k:])}")
    texts = []
    for name in names[:k]:
        with open(os.path.join(task_dir, name), 'r', encoding='utf-8', errors='replace') as f:
            texts.append(f.read())
    return texts


def student_request(task: TaskBundle, library: PrimitiveLibrary, prompting: str = COT,
                    attempt: int = 1) -> GeneratorRequest:
    if prompting not in PROMPTING_MODES:
        raise ConfigurationError(f"Unknown prompting mode '{prompting}'",
                                 tip=f"Use one of: {', '.join(PROMPTING_MODES)}")
    return GeneratorRequest(
        stage=STUDENT,
        instruction=task.instruction,
        image_paths=(task.image_path,) if task.image_path else (),
        library=tuple(library),
        allowed_actions=task.allowed_actions,
        workflow=(task.workflow_text() or None) if prompting == COT else None,
        task=task.name,
        attempt=attempt,
    )


def generate_candidates(generator: Generator, task: TaskBundle, library: PrimitiveLibrary,
                        k: int = 3, prompting: str = COT) -> List[str]:
    """k independent student responses for a task."""
    return [generator.generate(student_request(task, library, prompting, attempt))
            for attempt in range(1, k + 1)]


def _run_task(task, library, k, generator, candidates_dir, prompting, aliases) -> TaskOutcome:
    if candidates_dir is not None:
        texts = load_candidates(candidates_dir, task.name, k)
    else:
        texts = generate_candidates(generator, task, library, k, prompting)
    attempts = tuple(evaluate_candidate(task, text, library, i, aliases) for i, text in enumerate(texts, start=1))
    logger.debug(f"{task.name}: {[a.success for a in attempts]}")
    return TaskOutcome(task.name, task.difficulty, attempts)


def run_suite(
    tasks: Sequence[TaskBundle],
    library: PrimitiveLibrary,
    k: int = 3,
    generator: Optional[Generator] = None,
    candidates_dir: Optional[str] = None,
    prompting: str = COT,
    aliases: Optional[Mapping[str, str]] = None,
    max_workers: int = 1
) -> SuiteReport:
    """
    Run every task k times and aggregate.

    Exactly one of generator and candidates_dir supplies the candidates.
    BT-Valid counts first attempts that pass conformance; SR counts first
    attempts that reach the goal; Pass@k counts tasks with any success.

    Raises:
        ConfigurationError: If k < 1 or the candidate source is ambiguous
        EmptyInputError: If tasks is empty
        RaggedAttemptsError: If a task has fewer than k precomputed candidates
    """
    if k < 1:
        raise ConfigurationError(f"Attempt count must be at least 1, got {k}")
    if (generator is None) == (candidates_dir is None):
        raise ConfigurationError("Provide either a generator or a candidates directory",
                                 tip="Use --candidates <dir> or one of --generator-cmd/--generator-url/"
                                     "--generator-script")

    ordered = sorted(tasks, key=lambda t: t.name)
    if max_workers == 0:
        max_workers = min(32, (os.cpu_count() or 1) + 4)
    args = (library, k, generator, candidates_dir, prompting, aliases)
    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as executor:
            outcomes = list(executor.map(lambda t: _run_task(t, *args), ordered))
    else:
        outcomes = [_run_task(t, *args) for t in ordered]

    result = aggregate_suite(
        [[a.success for a in o.attempts] for o in outcomes],
        [o.attempts[0].report.verdict for o in outcomes],
        [o.task for o in outcomes],
    )
    logger.info(f"Suite: BT-Valid {result.bt_valid_rate:.0%}, SR {result.sr:.0%}, "
                f"Pass@{k} {result.pass_at_k:.0%} over {len(outcomes)} tasks")
    return SuiteReport(tuple(outcomes), result)
