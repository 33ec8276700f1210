"""
Instruction-tuning dataset construction

sources -> frame selection -> contact sheet -> two-stage annotation
        -> base records -> structural augmentation of a fraction
        -> lexical augmentation of everything -> train/eval split
"""

import os
import json
import math
import random
import shutil
import hashlib
import logging
from dataclasses import dataclass, fields
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple
from concurrent.futures import ThreadPoolExecutor, as_completed

import yaml

try:
    from tqdm import tqdm
    TQDM_AVAILABLE = True
except ImportError:
    TQDM_AVAILABLE = False

from btforge.annotation import derive_allowed_actions, parse_scene_analysis, teacher_loop
from btforge.augment import (
    CONSTRUCT_KINDS,
    lexical_augment,
    sample_construct,
    structural_augment
)
from btforge.cache import DEFAULT_CACHE_DIR, GenerationCache
from btforge.conformance import PrimitiveLibrary
from btforge.exceptions import (
    BadTargetError,
    BtForgeError,
    ConfigurationError,
    GeneratorUnavailableError,
    InvalidPathError,
    NoPriorGraspError,
    OutputDirectoryError,
    RedundantConstructError
)
from btforge.frames import METRICS, SHEET_FRAMES, EpisodeSource, contact_sheet, select_frames
from btforge.generator import Generator
from btforge.records import EpisodeRecord, dump_record, load_record, record_violations

logger = logging.getLogger(__name__)

RECORDS_DIR = 'records'
SHEETS_DIR = 'sheets'
FRAMES_DIR = 'frames'
MANIFEST_FILE = 'manifest.jsonl'
SUMMARY_FILE = 'summary.yml'

TRAIN = 'train'
EVAL = 'eval'


@dataclass
class DatasetConfig:
    """Knobs of one dataset build; defaults reproduce the published recipe."""

    stride: int = 10
    frames: int = SHEET_FRAMES
    seed_index: int = 0
    metric: str = 'euclidean'
    augment_fraction: float = 0.5
    construct_weights: Optional[Dict[str, float]] = None
    retry_range: Tuple[int, int] = (2, 5)
    timeout_range: Tuple[int, int] = (1000, 10000)
    lexical_probability: float = 0.5
    explicit_objects: bool = True
    eval_size: Optional[int] = None
    eval_fraction: float = 0.1
    seed: int = 0
    max_retries: int = 5
    workers: int = 1
    use_cache: bool = True
    cache_dir: str = DEFAULT_CACHE_DIR

    def __post_init__(self):
        if self.frames != SHEET_FRAMES:
            raise ConfigurationError(f"Contact sheets hold {SHEET_FRAMES} frames, got frames={self.frames}")
        if self.metric not in METRICS:
            raise ConfigurationError(f"Unknown distance metric '{self.metric}'",
                                     tip=f"Use one of: {', '.join(METRICS)}")
        for name in ('augment_fraction', 'lexical_probability', 'eval_fraction'):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigurationError(f"{name} must be within [0, 1], got {value}")
        if self.eval_size is not None and self.eval_size < 0:
            raise ConfigurationError(f"eval_size must not be negative, got {self.eval_size}")
        if self.max_retries < 1:
            raise ConfigurationError(f"max_retries must be at least 1, got {self.max_retries}")
        if self.workers < 0:
            raise ConfigurationError(f"workers must not be negative, got {self.workers}")
        if self.construct_weights is not None:
            unknown = sorted(set(self.construct_weights) - set(CONSTRUCT_KINDS))
            if unknown:
                raise ConfigurationError(f"Unknown constructs in construct_weights: {', '.join(unknown)}")
            if sum(self.construct_weights.values()) <= 0:
                raise ConfigurationError("construct_weights must have a positive total")
        self.retry_range = tuple(self.retry_range)
        self.timeout_range = tuple(self.timeout_range)
        for name in ('retry_range', 'timeout_range'):
            low, high = getattr(self, name)
            if low > high:
                raise ConfigurationError(f"{name} is empty: {low} > {high}")

    @classmethod
    def from_mapping(cls, mapping: Optional[Mapping[str, Any]] = None, **overrides) -> 'DatasetConfig':
        """
        Build a config from the `dataset` section of a config file plus flags.

        Overrides that are None are ignored so unset CLI flags keep file values.
        """
        values = dict(mapping or {})
        values.update({k: v for k, v in overrides.items() if v is not None})
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigurationError(f"Unknown dataset settings: {', '.join(unknown)}")
        try:
            return cls(**values)
        except (TypeError, ValueError) as e:
            raise ConfigurationError(f"Invalid dataset settings: {e}")


def plan_counts(n_base: int, fraction: float) -> Tuple[int, int]:
    """(structural augmentations, total records) for n_base episodes; halves round up."""
    n_struct = min(n_base, int(math.floor(n_base * fraction + 0.5)))
    return n_struct, n_base + n_struct


def split_counts(total: int, eval_size: Optional[int] = None, eval_fraction: float = 0.1) -> Tuple[int, int]:
    """(train, eval) sizes; an absolute eval_size wins over eval_fraction."""
    if eval_size is None:
        eval_size = int(math.floor(total * eval_fraction + 0.5))
    if eval_size > total:
        raise ConfigurationError(f"eval_size {eval_size} exceeds the {total} available records")
    return total - eval_size, eval_size


def episode_rng(seed: int, key: str) -> random.Random:
    """Random stream derived from (seed, key) only, so worker scheduling cannot change draws."""
    digest = hashlib.sha256(f"{seed}:{key}".encode('utf-8')).hexdigest()
    return random.Random(int(digest[:16], 16))


@dataclass
class DatasetResult:
    """Outcome of build_dataset."""

    out_dir: str
    manifest_path: str
    counts: Dict[str, int]
    failures: Dict[str, str]

    @property
    def total(self) -> int:
        return self.counts['total']


def _process_single_episode(
    source: EpisodeSource,
    out_dir: str,
    generator: Optional[Generator],
    config: DatasetConfig,
    library: PrimitiveLibrary,
    cache: Optional[GenerationCache]
) -> Tuple[Optional[EpisodeRecord], Optional[str]]:
    """
    Annotate one episode (helper function for parallel processing).

    Returns:
        Tuple of (record or None, error message or None)
    """
    try:
        sheet_rel = f"{SHEETS_DIR}/{source.episode_id}.png"
        chosen = select_frames(source, config.stride, config.frames, config.seed_index, config.metric)
        contact_sheet([f.path for f in chosen]).save(os.path.join(out_dir, sheet_rel), format='PNG')

        first = source.frames[0]
        frame_rel = f"{FRAMES_DIR}/{source.episode_id}{os.path.splitext(first.path)[1]}"
        shutil.copyfile(first.path, os.path.join(out_dir, frame_rel))

        cached = cache.get(source, library) if cache is not None else None
        if cached is not None:
            analysis = parse_scene_analysis(cached['scene_analysis'])
            bt_xml = cached['bt_xml']
        else:
            if generator is None:
                raise GeneratorUnavailableError("No generator configured and no cached annotation")
            analysis, bt_xml = teacher_loop(
                generator, os.path.join(out_dir, sheet_rel), source.instruction, library,
                max_retries=config.max_retries, task=source.episode_id,
            )
            if cache is not None:
                cache.put(source, library, analysis.to_dict(), bt_xml)

        record = EpisodeRecord(
            episode_id=source.episode_id,
            source_episode=source.episode_id,
            initial_frame=frame_rel,
            contact_sheet=sheet_rel,
            instruction=source.instruction,
            allowed_actions=tuple(derive_allowed_actions(bt_xml)),
            scene_analysis=analysis,
            bt_xml=bt_xml,
        )
        return record, None
    except BtForgeError as e:
        return None, f"Episode {source.episode_id}: {e.message}"
    except OSError as e:
        return None, f"Episode {source.episode_id}: {e}"


def _annotate(
    sources: Sequence[EpisodeSource],
    out_dir: str,
    generator: Optional[Generator],
    config: DatasetConfig,
    library: PrimitiveLibrary,
    show_progress: bool
) -> Tuple[Dict[str, EpisodeRecord], Dict[str, str]]:
    cache = GenerationCache(config.cache_dir) if config.use_cache else None
    records: Dict[str, EpisodeRecord] = {}
    failures: Dict[str, str] = {}

    def collect(source, record, error_msg):
        if record is not None:
            records[source.episode_id] = record
        else:
            logger.warning(error_msg)
            failures[source.episode_id] = error_msg

    max_workers = config.workers
    if max_workers == 0:
        max_workers = min(32, (os.cpu_count() or 1) + 4)

    if max_workers > 1:
        logger.debug(f"Annotating with {max_workers} workers")
        if show_progress and TQDM_AVAILABLE:
            progress_bar = tqdm(total=len(sources), desc="Annotating episodes", unit="episode")
        else:
            progress_bar = None

        with ThreadPoolExecutor(max_workers=max_workers) as executor:
            future_to_source = {
                executor.submit(_process_single_episode, s, out_dir, generator, config, library, cache): s
                for s in sources
            }
            for future in as_completed(future_to_source):
                source = future_to_source[future]
                collect(source, *future.result())
                if progress_bar is not None:
                    progress_bar.update(1)
                elif len(records) % 50 == 0 and records:
                    logger.info(f"Annotated {len(records)} episodes...")

        if progress_bar is not None:
            progress_bar.close()
    else:
        if show_progress and TQDM_AVAILABLE:
            sources_iterator = tqdm(sources, desc="Annotating episodes", unit="episode")
        else:
            sources_iterator = sources

        for source in sources_iterator:
            collect(source, *_process_single_episode(source, out_dir, generator, config, library, cache))
            if not (show_progress and TQDM_AVAILABLE) and records and len(records) % 50 == 0:
                logger.info(f"Annotated {len(records)} episodes...")

    return records, failures


def _structural_pass(base: List[EpisodeRecord], config: DatasetConfig) -> List[EpisodeRecord]:
    """Augment plan_counts(...) base records, visiting them in a seeded order and skipping ones that cannot take a construct."""
    wanted, _ = plan_counts(len(base), config.augment_fraction)
    order = list(base)
    random.Random(config.seed).shuffle(order)

    augmented = []
    for record in order:
        if len(augmented) == wanted:
            break
        rng = episode_rng(config.seed, f"struct:{record.episode_id}")
        for _ in range(len(CONSTRUCT_KINDS) * 2):
            construct = sample_construct(rng, config.construct_weights, config.retry_range, config.timeout_range)
            try:
                augmented.append(structural_augment(record, construct, rng=rng))
                break
            except RedundantConstructError as e:
                logger.debug(e.message)
            except BadTargetError as e:
                logger.info(f"{e.message}; not augmented")
                break
        else:
            logger.info(f"Episode {record.episode_id} already uses every construct drawn; not augmented")
    if len(augmented) < wanted:
        logger.warning(f"Only {len(augmented)} of {wanted} planned structural augmentations were possible")
    return augmented


def _lexical_pass(records: List[EpisodeRecord], config: DatasetConfig,
                  synonyms: Optional[Mapping[str, Sequence[str]]]) -> List[EpisodeRecord]:
    out = []
    for record in records:
        key = f"lex:{record.episode_id}"
        try:
            out.append(lexical_augment(record, config.lexical_probability, rng=episode_rng(config.seed, key),
                                       synonyms=synonyms, explicit_objects=config.explicit_objects))
        except NoPriorGraspError as e:
            logger.info(f"{e.message}; keeping implicit objects")
            out.append(lexical_augment(record, config.lexical_probability, rng=episode_rng(config.seed, key),
                                       synonyms=synonyms, explicit_objects=False))
    return out


def _assign_splits(ids: List[str], config: DatasetConfig) -> Dict[str, str]:
    _, n_eval = split_counts(len(ids), config.eval_size, config.eval_fraction)
    order = sorted(ids)
    episode_rng(config.seed, 'split').shuffle(order)
    eval_ids = set(order[:n_eval])
    return {i: EVAL if i in eval_ids else TRAIN for i in ids}


def _manifest_entry(record: EpisodeRecord, split: str) -> Dict[str, Any]:
    return {
        'episode_id': record.episode_id,
        'source_episode': record.source_episode,
        'split': split,
        'record': f"{RECORDS_DIR}/{record.episode_id}.yml",
        'contact_sheet': record.contact_sheet,
        'allowed_actions': list(record.allowed_actions),
        'structurally_augmented': record.structurally_augmented,
        'lexically_augmented': record.lexically_augmented,
    }


def build_dataset(
    sources: Sequence[EpisodeSource],
    out_dir: str,
    generator: Optional[Generator],
    config: Optional[DatasetConfig] = None,
    library: Optional[PrimitiveLibrary] = None,
    synonyms: Optional[Mapping[str, Sequence[str]]] = None,
    show_progress: bool = True
) -> DatasetResult:
    """
    Build the record store for a set of episodes.

    Args:
        sources: Episodes to annotate
        out_dir: Store directory (records/, sheets/, frames/, manifest.jsonl, summary.yml)
        generator: Text generator for the Scene Analysis and Architect stages
        config: Build settings (defaults reproduce the published recipe)
        library: Primitive library P (default: bundled or BTFORGE_LIBRARY)
        synonyms: Synonym map for lexical augmentation (default: bundled)
        show_progress: Show progress bar while annotating

    Returns:
        DatasetResult with counts per stage and per-episode failures

    Raises:
        OutputDirectoryError: If out_dir cannot be created
        ConfigurationError: If the split asks for more eval records than exist

    Example:
        >>> from btforge import build_dataset, discover_sources
        >>> result = build_dataset(discover_sources('episodes'), 'store', generator)
        >>> print(result.counts['total'])
    """
    from btforge.config import load_library, load_synonyms

    config = config or DatasetConfig()
    library = library or load_library()
    if synonyms is None:
        synonyms = load_synonyms(library=library)

    try:
        for sub in (RECORDS_DIR, SHEETS_DIR, FRAMES_DIR):
            os.makedirs(os.path.join(out_dir, sub), exist_ok=True)
    except OSError as e:
        raise OutputDirectoryError(f"Cannot create output directory: {e}")

    ids = [s.episode_id for s in sources]
    duplicates = sorted({i for i in ids if ids.count(i) > 1})
    if duplicates:
        raise ConfigurationError(f"Duplicate episode ids: {', '.join(duplicates)}")
    # Failed episodes only shrink the total, so a split that cannot fit the plan never fits
    split_counts(plan_counts(len(sources), config.augment_fraction)[1], config.eval_size, config.eval_fraction)

    logger.info(f"Building dataset from {len(sources)} episodes into {out_dir}")
    annotated, failures = _annotate(sources, out_dir, generator, config, library, show_progress)

    base = [annotated[i] for i in sorted(annotated)]
    structural = _structural_pass(base, config)
    records = _lexical_pass(base + sorted(structural, key=lambda r: r.episode_id), config, synonyms)
    records.sort(key=lambda r: r.episode_id)
    splits = _assign_splits([r.episode_id for r in records], config)

    for record in records:
        path = os.path.join(out_dir, RECORDS_DIR, f"{record.episode_id}.yml")
        with open(path, 'w', encoding='utf-8') as f:
            f.write(dump_record(record))

    manifest_path = os.path.join(out_dir, MANIFEST_FILE)
    with open(manifest_path, 'w', encoding='utf-8') as manifest:
        for record in records:
            manifest.write(json.dumps(_manifest_entry(record, splits[record.episode_id]), sort_keys=True) + '\n')

    counts = {
        'sources': len(sources),
        'base': len(base),
        'structural': len(structural),
        'lexical': sum(1 for r in records if r.lexically_augmented),
        'total': len(records),
        'train': sum(1 for s in splits.values() if s == TRAIN),
        'eval': sum(1 for s in splits.values() if s == EVAL),
        'failed': len(failures),
    }
    summary = {'counts': counts, 'failed_episodes': sorted(failures), 'seed': config.seed}
    with open(os.path.join(out_dir, SUMMARY_FILE), 'w', encoding='utf-8') as f:
        yaml.safe_dump(summary, f, sort_keys=False)

    logger.info(f"Wrote {counts['total']} records ({counts['train']} train / {counts['eval']} eval).")
    if failures:
        logger.warning(f"Skipped {len(failures)} episodes due to errors.")
    logger.info(f"Manifest created at {manifest_path}")
    return DatasetResult(out_dir, manifest_path, counts, dict(sorted(failures.items())))


def read_manifest(out_dir: str) -> List[Dict[str, Any]]:
    manifest_path = os.path.join(out_dir, MANIFEST_FILE)
    if not os.path.isfile(manifest_path):
        raise InvalidPathError(f"Record store has no manifest: {manifest_path}")
    with open(manifest_path, 'r', encoding='utf-8') as f:
        return [json.loads(line) for line in f if line.strip()]


def check_store(out_dir: str, library: Optional[PrimitiveLibrary] = None) -> Dict[str, List[str]]:
    """
    Re-verify every record listed in a store's manifest.

    Returns:
        Mapping of episode id to its problems; empty when the store is consistent
    """
    from btforge.config import load_library

    library = library or load_library()
    problems: Dict[str, List[str]] = {}
    for entry in read_manifest(out_dir):
        episode_id = entry['episode_id']
        path = os.path.join(out_dir, entry['record'])
        try:
            record = load_record(path)
        except OSError as e:
            problems[episode_id] = [f"record unreadable: {e}"]
            continue
        except BtForgeError as e:
            problems[episode_id] = [e.message]
            continue
        found = record_violations(record, library)
        if list(record.allowed_actions) != entry['allowed_actions']:
            found.append("manifest allowed_actions differ from the record")
        if not os.path.isfile(os.path.join(out_dir, record.contact_sheet)):
            found.append(f"missing contact sheet {record.contact_sheet}")
        if found:
            problems[episode_id] = found
    return problems
