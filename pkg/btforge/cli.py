"""
Command-line interface for btforge
"""

import argparse
import logging
import os
import sys
import time
from typing import Dict, List, Optional, Tuple

from btforge.cache import GenerationCache
from btforge.config import (
    BUNDLED_SUITE_DIR,
    BUNDLED_TASKS_DIR,
    load_config,
    load_library,
    load_synonyms,
    merge_config_with_args
)
from btforge.conformance import summarize_reports, validate, validity_rates
from btforge.dataset import DatasetConfig, build_dataset, check_store
from btforge.exceptions import (
    BtForgeError,
    EmptyInputError,
    ExecutionError,
    InvalidPathError,
    TreeFormatError
)
from btforge.frames import discover_sources
from btforge.generator import make_generator
from btforge.metrics import score_pair, summarize_scores
from btforge.suite import COT, PROMPTING_MODES, run_suite
from btforge.tasks import TASK_SUFFIXES, load_task, load_tasks
from btforge.utils import (
    count_values,
    format_breakdown,
    format_mean_std,
    format_percent,
    format_table,
    print_summary,
    write_records
)
from btforge.world import execute
from btforge.xmlio import extract_xml_block, parse_xml

logger = logging.getLogger(__name__)

TABLE = 'table'
RECORDS = 'records'
TREE_SUFFIXES = ('.xml', '.txt')


def setup_logging(verbose: bool = False, quiet: bool = False) -> None:
    """
    Configure logging based on verbosity flags.

    Args:
        verbose: Enable verbose (DEBUG) logging
        quiet: Suppress all non-error logging
    """
    if quiet:
        level = logging.ERROR
    elif verbose:
        level = logging.DEBUG
    else:
        level = logging.INFO

    # Configure root logger
    logging.basicConfig(
        level=level,
        format='%(message)s',
        handlers=[logging.StreamHandler(sys.stdout)],
        force=True
    )


def _split_names(value: Optional[str]) -> Optional[List[str]]:
    if value is None:
        return None
    return [name.strip() for name in value.split(',') if name.strip()]


def _expand_tree_files(paths: List[str]) -> List[str]:
    """Files as given, directories expanded to their tree files in name order."""
    files = []
    for path in paths:
        if os.path.isdir(path):
            files.extend(os.path.join(path, n) for n in sorted(os.listdir(path)) if n.endswith(TREE_SUFFIXES))
        elif os.path.isfile(path):
            files.append(path)
        else:
            raise InvalidPathError(f"Input file does not exist: {path}")
    return files


def _read(path: str) -> str:
    with open(path, 'r', encoding='utf-8', errors='replace') as f:
        return f.read()


def _resolve_task_path(value: str) -> str:
    """A task file path, or the name of a bundled task."""
    if os.path.exists(value):
        return value
    for directory in (BUNDLED_TASKS_DIR, BUNDLED_SUITE_DIR):
        for suffix in TASK_SUFFIXES:
            candidate = os.path.join(directory, value + suffix)
            if os.path.isfile(candidate):
                return candidate
    raise InvalidPathError(f"Task file does not exist: {value}",
                           tip="Pass a task YAML file or the name of a bundled task")


# --- subcommands ----------------------------------------------------------

def cmd_validate(args, config: Dict) -> int:
    library = load_library(config.get('library'))
    allowed = _split_names(args.allowed)
    files = _expand_tree_files(args.files)
    if not files:
        raise EmptyInputError("No tree files to validate")

    reports = [(path, validate(extract_xml_block(_read(path)), library, allowed)) for path in files]

    if args.format == RECORDS:
        write_records(dict(r.to_record(), file=path) for path, r in reports)
    else:
        rows = []
        for path, report in reports:
            problems = report.error or ', '.join(
                [f"unknown {a}" for a in report.unknown_actions]
                + [f"disallowed {a}" for a in report.disallowed_actions]
            )
            rows.append((path, 'ok' if report.verdict else 'FAIL', problems))
        print(format_table(('file', 'verdict', 'problems'), rows))
        counts = summarize_reports([r for _, r in reports])
        if not args.quiet:
            print(f"\n  {counts['conforming']}/{counts['total']} trees conform")

    failed = [path for path, r in reports if not r.verdict]
    for path in failed:
        logger.debug(f"Non-conforming tree: {path}")
    return 1 if failed else 0


def cmd_exec(args, config: Dict) -> int:
    library = load_library(config.get('library'))
    task = load_task(_resolve_task_path(args.task), library)
    files = _expand_tree_files(args.trees)
    if not files:
        raise EmptyInputError("No tree files to execute")

    results: List[Tuple[str, Dict]] = []
    for path in files:
        try:
            tree = parse_xml(extract_xml_block(_read(path)))
            record = execute(tree, task.initial_state, task.registry, task.goal).to_record()
        except (TreeFormatError, ExecutionError) as e:
            logger.warning(f"{path}: {e.message}")
            record = {'goal_satisfied': False, 'error': e.message, 'failed_step': None}
        results.append((path, record))

    if args.format == RECORDS:
        write_records(dict(record, task=task.name, tree=path) for path, record in results)
    else:
        rows = []
        for path, record in results:
            failed = record.get('failed_step')
            detail = record.get('error') or (
                f"{failed['action']}({failed['obj'] or ''}) -> {failed['reason']}" if failed else ''
            )
            rows.append((path, 'success' if record['goal_satisfied'] else 'failure', detail))
        print(f"Task: {task.name} ({task.difficulty}, {task.category})")
        print(format_table(('tree', 'verdict', 'first failure'), rows))

    return 0 if all(record['goal_satisfied'] for _, record in results) else 1


def cmd_score(args, config: Dict) -> int:
    for directory in (args.ref, args.hyp):
        if not os.path.isdir(directory):
            raise InvalidPathError(f"Score directory does not exist or is not a directory: {directory}")
    ref_names = {n for n in os.listdir(args.ref) if n.endswith(TREE_SUFFIXES)}
    hyp_names = {n for n in os.listdir(args.hyp) if n.endswith(TREE_SUFFIXES)}
    for name in sorted(ref_names ^ hyp_names):
        side = 'reference' if name in ref_names else 'hypothesis'
        logger.warning(f"Unmatched {side} file excluded: {name}")

    scores = []
    hyp_texts = []
    for name in sorted(ref_names & hyp_names):
        hyp_text = _read(os.path.join(args.hyp, name))
        try:
            scores.append(score_pair(_read(os.path.join(args.ref, name)), hyp_text, name))
        except TreeFormatError as e:
            logger.warning(f"Reference {name} does not parse and is excluded: {e.message}")
            continue
        hyp_texts.append(extract_xml_block(hyp_text))
    if not scores:
        raise EmptyInputError("No file names are shared by the reference and hypothesis directories")

    library = load_library(config.get('library'))
    summary = summarize_scores(scores)
    summary['xml_valid'], summary['btcpp_valid'] = validity_rates(hyp_texts, library)

    if args.format == RECORDS:
        write_records(s.to_record() for s in scores)
        write_records([{'summary': summary}])
    else:
        rows = [
            ('pairs', summary['pairs']),
            ('XML valid', format_percent(summary['xml_valid'])),
            ('BT.CPP valid', format_percent(summary['btcpp_valid'])),
            ('StructMatch', format_percent(summary['struct_match'])),
        ]
        for bucket, (hits, total) in summary['struct_match_buckets'].items():
            rows.append((f"  {bucket}", f"{hits}/{total}"))
        rows.append(('Action Jaccard', format_mean_std(summary['jaccard_mean'], summary['jaccard_std'])))
        for metric in ('bleu', 'rouge_1', 'rouge_2', 'rouge_L', 'rouge_Lsum'):
            rows.append((metric.upper().replace('_', '-').replace('LSUM', 'Lsum'), f"{summary[metric]:.4f}"))
        print(format_table(('metric', 'value'), rows))
    return 0


def cmd_suite(args, config: Dict) -> int:
    library = load_library(config.get('library'))
    tasks = load_tasks(args.tasks or config.get('tasks') or BUNDLED_SUITE_DIR, library)
    if not tasks:
        raise EmptyInputError(f"No tasks found in {args.tasks or BUNDLED_SUITE_DIR}")

    generator_config = config.get('generator') or {}
    generator = None
    if not args.candidates:
        generator = make_generator(
            command=args.generator_cmd or generator_config.get('command'),
            url=args.generator_url or generator_config.get('url'),
            script=args.generator_script or generator_config.get('script'),
            timeout=float(generator_config.get('timeout', 300.0)),
        )

    report = run_suite(
        tasks, library, k=args.attempts, generator=generator, candidates_dir=args.candidates,
        prompting=args.prompting, max_workers=args.workers,
    )
    result = report.result

    if args.format == RECORDS:
        write_records(report.to_records())
        write_records([{'summary': result.to_record()}])
        return 0

    rows = []
    for outcome in report.tasks:
        marks = ' '.join('✓' if a.success else '✗' for a in outcome.attempts)
        rows.append((outcome.task, outcome.difficulty, 'yes' if outcome.attempts[0].report.verdict else 'no', marks))
    print(format_table(('task', 'difficulty', 'valid', 'attempts'), rows))
    print(format_table(('metric', 'value'), [
        ('BT-Valid', format_percent(result.bt_valid_rate, 0)),
        ('SR', format_percent(result.sr, 0)),
        (f"Pass@{result.k}", format_percent(result.pass_at_k, 0)),
    ]))
    reasons = count_values(
        a.trace.failed_step.reason.value
        for o in report.tasks for a in o.attempts
        if a.trace is not None and a.trace.failed_step is not None and a.trace.failed_step.reason
    )
    if reasons and not args.quiet:
        print(format_breakdown(reasons, 'Failure Reasons'))
    return 0


def cmd_dataset(args, config: Dict) -> int:
    library = load_library(config.get('library'))
    synonyms = load_synonyms(args.synonyms or config.get('synonyms'), library)
    settings = merge_config_with_args(
        config.get('dataset') or {},
        seed=args.seed,
        augment_fraction=args.augment_fraction,
        eval_size=args.eval_size,
        stride=args.stride,
        max_retries=args.max_retries,
        workers=args.workers,
        use_cache=False if args.no_cache else None,
        cache_dir=args.cache_dir,
    )
    dataset_config = DatasetConfig.from_mapping(settings)

    generator_config = config.get('generator') or {}
    generator = make_generator(
        command=args.generator_cmd or generator_config.get('command'),
        url=args.generator_url or generator_config.get('url'),
        script=args.generator_script or generator_config.get('script'),
        timeout=float(generator_config.get('timeout', 300.0)),
    )

    if args.clear_cache:
        GenerationCache(dataset_config.cache_dir).clear_cache()

    start_time = time.time()
    sources = discover_sources(args.sources)
    result = build_dataset(
        sources, args.out, generator, dataset_config, library, synonyms,
        show_progress=not (args.quiet or args.no_progress),
    )
    elapsed_time = time.time() - start_time

    problems = check_store(args.out, library) if args.check else {}
    for episode_id, found in sorted(problems.items()):
        for problem in found:
            logger.error(f"{episode_id}: {problem}")

    cache_info = GenerationCache(dataset_config.cache_dir).get_cache_info() if dataset_config.use_cache else None
    counts = result.counts
    if args.format == RECORDS:
        write_records([{'counts': counts, 'failed_episodes': list(result.failures),
                        'manifest': result.manifest_path, 'cache': cache_info}])
    elif not args.quiet:
        lines = [
            f"✓ {counts['base']} base records from {counts['sources']} episodes",
            f"+ {counts['structural']} structural augmentations",
            f"~ {counts['lexical']} lexically augmented",
            f"= {counts['total']} records ({counts['train']} train / {counts['eval']} eval)",
        ]
        if counts['failed']:
            lines.append(f"⚠ {counts['failed']} episodes skipped")
        if args.check:
            lines.append(f"{'✓' if not problems else '⚠'} store check: {len(problems)} inconsistent records")
        if cache_info:
            lines.append(f"🗄 Cache: {cache_info['cache_entries']} episodes in {cache_info['cache_file']}")
        lines.append(f"📁 Manifest: {result.manifest_path}")
        print_summary('Summary', lines, elapsed_time)
    return 1 if problems else 0


COMMANDS = {
    'validate': cmd_validate,
    'exec': cmd_exec,
    'score': cmd_score,
    'suite': cmd_suite,
    'dataset': cmd_dataset,
}


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--library', '-l', metavar='FILE',
                        help='Primitive library file (default: $BTFORGE_LIBRARY or the bundled library)')
    common.add_argument('--config', '-c', metavar='FILE',
                        help='Configuration file (default: .btforge.yml if present)')
    common.add_argument('--format', '-f', choices=(TABLE, RECORDS), default=TABLE,
                        help='Output a table (default) or JSON line records')
    common.add_argument('--verbose', '-v', action='store_true',
                        help='Enable verbose output (DEBUG level)')
    common.add_argument('--quiet', '-q', action='store_true',
                        help='Suppress all non-error output')
    return common


def _add_generator_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--generator-cmd', metavar='CMD',
                        help='Command receiving a JSON request on stdin and printing the response')
    parser.add_argument('--generator-url', metavar='URL',
                        help='Endpoint receiving the JSON request as a POST body')
    parser.add_argument('--generator-script', metavar='FILE',
                        help='YAML file of scripted responses per stage (offline runs)')


def build_parser() -> argparse.ArgumentParser:
    common = _common_parser()
    parser = argparse.ArgumentParser(
        prog='btforge',
        description='Parse, validate, execute, score and synthesize behavior trees.',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Check trees against the primitive library
  btforge validate trees/ --allowed NAVIGATE_TO,GRASP,PLACE_ON_TOP

  # Execute a tree on a bundled task
  btforge exec place_teapot_on_stove teapot.xml

  # Compare generated trees with references
  btforge score --ref references/ --hyp generated/

  # Run the 15-task suite on precomputed outputs, three attempts each
  btforge suite --candidates outputs/ --attempts 3

  # Build an instruction-tuning dataset
  btforge dataset episodes/ --out store/ --generator-cmd ./teacher.sh --seed 0
        """
    )
    subparsers = parser.add_subparsers(dest='command', metavar='COMMAND')
    subparsers.required = True

    validate = subparsers.add_parser('validate', parents=[common], help='Check trees for conformance')
    validate.add_argument('files', nargs='+', help='Tree files or directories of .xml files')
    validate.add_argument('--allowed', '-a', metavar='NAMES',
                          help='Comma-separated allowed actions, enforced on top of the library')

    run = subparsers.add_parser('exec', parents=[common], help='Execute trees against a task')
    run.add_argument('task', help='Task YAML file or bundled task name')
    run.add_argument('trees', nargs='+', help='Tree files (each one attempt)')

    score = subparsers.add_parser('score', parents=[common], help='Score generated trees against references')
    score.add_argument('--ref', required=True, metavar='DIR', help='Reference trees')
    score.add_argument('--hyp', required=True, metavar='DIR', help='Generated trees, paired by file name')

    suite = subparsers.add_parser('suite', parents=[common], help='Run the task suite')
    suite.add_argument('--tasks', '-t', metavar='DIR', help='Task directory (default: bundled suite)')
    suite.add_argument('--candidates', metavar='DIR',
                       help='Precomputed outputs in <DIR>/<task>/, used instead of a generator')
    suite.add_argument('--attempts', '-k', type=int, default=3, metavar='K',
                       help='Attempts per task (default: 3)')
    suite.add_argument('--prompting', choices=PROMPTING_MODES, default=COT,
                       help='Give the workflow (cot, default) or only the instruction (zs)')
    suite.add_argument('--workers', '-w', type=int, default=1, metavar='N',
                       help='Number of parallel workers (default: 1, 0 for auto)')
    _add_generator_arguments(suite)

    dataset = subparsers.add_parser('dataset', parents=[common], help='Build an instruction-tuning dataset')
    dataset.add_argument('sources', help='Directory of episode directories')
    dataset.add_argument('--out', '-o', required=True, metavar='DIR', help='Record store directory')
    dataset.add_argument('--seed', '-s', type=int, metavar='N', help='Random seed (default: 0)')
    dataset.add_argument('--augment-fraction', type=float, metavar='F',
                         help='Fraction of base records to augment structurally (default: 0.5)')
    dataset.add_argument('--eval-size', type=int, metavar='N',
                         help='Absolute number of evaluation records (default: 10%% of the total)')
    dataset.add_argument('--stride', type=int, metavar='N', help='Frame subsampling stride (default: 10)')
    dataset.add_argument('--max-retries', type=int, metavar='N', help='Architect attempts (default: 5)')
    dataset.add_argument('--synonyms', metavar='FILE', help='Synonym map for lexical augmentation')
    dataset.add_argument('--workers', '-w', type=int, metavar='N',
                         help='Number of parallel workers (default: 1, 0 for auto)')
    dataset.add_argument('--no-progress', action='store_true', help='Disable progress bar')
    dataset.add_argument('--no-cache', action='store_true',
                         help='Disable generation caching (default: caching enabled)')
    dataset.add_argument('--cache-dir', metavar='DIR', help='Directory to store cache files (default: .btforge_cache)')
    dataset.add_argument('--clear-cache', action='store_true',
                         help='Discard cached annotations before building')
    dataset.add_argument('--check', action='store_true', help='Re-verify every written record')
    _add_generator_arguments(dataset)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """
    Main entry point for the command-line interface.

    Returns:
        0 on success, 1 for invalid trees or failed tasks, 2 for usage and input errors
    """
    parser = build_parser()
    args = parser.parse_args(argv)

    # Setup logging
    setup_logging(verbose=args.verbose, quiet=args.quiet)

    try:
        config = merge_config_with_args(load_config(args.config), library=args.library)
        return COMMANDS[args.command](args, config)
    except BtForgeError as e:
        logging.error(f"Error: {e}")
        return e.exit_code
    except KeyboardInterrupt:
        logging.info("\nOperation cancelled by user")
        return 130
    except Exception as e:
        logging.error(f"Unexpected error: {e}")
        if args.verbose:
            logging.exception("Full traceback:")
        return 1


if __name__ == "__main__":
    sys.exit(main())
