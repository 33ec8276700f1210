"""
Plan evaluation metrics.

Offline: structural match of decorator tags, action-set Jaccard, sentence
BLEU and ROUGE-1/2/L/Lsum over tokenized XML. Online: success rate and
pass@k aggregation over task attempts.
"""

import logging
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from btforge.exceptions import EmptyInputError, RaggedAttemptsError, TreeFormatError
from btforge.tree import BehaviorTree, extract_action_set, extract_decorator_set
from btforge.xmlio import extract_xml_block, parse_xml

logger = logging.getLogger(__name__)

# Frozen tokenization rule for lexical metrics: angle brackets and double
# quotes are tokens of their own, everything else splits on whitespace.
# Case is preserved.
TOKEN_RE = re.compile(r'[<>"]|[^\s<>"]+')

LINEAR = 'linear'
DECORATOR = 'decorator'


def tokenize(text: str) -> List[str]:
    return TOKEN_RE.findall(text or '')


def struct_match(o: BehaviorTree, g: BehaviorTree) -> int:
    """1 iff both trees use exactly the same set of structural tags."""
    return int(extract_decorator_set(o) == extract_decorator_set(g))


def action_jaccard(o: BehaviorTree, g: BehaviorTree) -> float:
    """Jaccard overlap of distinct action primitives; two action-free trees score 1.0."""
    a, b = extract_action_set(o), extract_action_set(g)
    union = a | b
    if not union:
        return 1.0
    return len(a & b) / len(union)


def reference_bucket(tree: BehaviorTree) -> str:
    """Classify a reference tree as linear (no structural tags) or decorator."""
    return DECORATOR if extract_decorator_set(tree) else LINEAR


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(hypothesis: Sequence[str], reference: Sequence[str], max_n: int = 4) -> float:
    """
    Sentence BLEU with brevity penalty.

    Modified n-gram precisions up to max_n. When any order n >= 2 has no
    matching n-gram, add-one smoothing is applied to every order n >= 2.
    An empty hypothesis, or one without a single matching unigram, scores 0.
    """
    hyp, ref = list(hypothesis), list(reference)
    if not hyp:
        return 0.0

    matches, totals = [], []
    for n in range(1, max_n + 1):
        hyp_counts = _ngrams(hyp, n)
        ref_counts = _ngrams(ref, n)
        matches.append(sum(min(c, ref_counts[g]) for g, c in hyp_counts.items()))
        totals.append(max(len(hyp) - n + 1, 0))

    if matches[0] == 0:
        return 0.0

    smooth = any(m == 0 for m in matches[1:])
    log_precision = 0.0
    for n, (m, t) in enumerate(zip(matches, totals), start=1):
        if n >= 2 and smooth:
            m, t = m + 1, t + 1
        log_precision += math.log(m / t)

    h, r = len(hyp), len(ref)
    brevity = 1.0 if h >= r else math.exp(1 - r / h)
    return brevity * math.exp(log_precision / max_n)


def _f1(overlap: float, hyp_total: int, ref_total: int) -> float:
    if overlap == 0 or hyp_total == 0 or ref_total == 0:
        return 0.0
    precision = overlap / hyp_total
    recall = overlap / ref_total
    return 2 * precision * recall / (precision + recall)


def _rouge_n(hyp: List[str], ref: List[str], n: int) -> float:
    hyp_counts, ref_counts = _ngrams(hyp, n), _ngrams(ref, n)
    hyp_total, ref_total = sum(hyp_counts.values()), sum(ref_counts.values())
    if hyp_total == 0 and ref_total == 0:
        return 1.0 if hyp == ref else 0.0
    overlap = sum(min(c, ref_counts[g]) for g, c in hyp_counts.items())
    return _f1(overlap, hyp_total, ref_total)


def _lcs_table(x: Sequence[str], y: Sequence[str]) -> List[List[int]]:
    table = [[0] * (len(y) + 1) for _ in range(len(x) + 1)]
    for i in range(1, len(x) + 1):
        for j in range(1, len(y) + 1):
            if x[i - 1] == y[j - 1]:
                table[i][j] = table[i - 1][j - 1] + 1
            else:
                table[i][j] = max(table[i - 1][j], table[i][j - 1])
    return table


def lcs_length(x: Sequence[str], y: Sequence[str]) -> int:
    return _lcs_table(x, y)[len(x)][len(y)]


def _lcs_positions(ref: Sequence[str], hyp: Sequence[str]) -> List[int]:
    """Indices into ref of one longest common subsequence with hyp."""
    table = _lcs_table(ref, hyp)
    i, j = len(ref), len(hyp)
    positions = []
    while i > 0 and j > 0:
        if ref[i - 1] == hyp[j - 1]:
            positions.append(i - 1)
            i, j = i - 1, j - 1
        elif table[i - 1][j] >= table[i][j - 1]:
            i -= 1
        else:
            j -= 1
    return positions[::-1]


def _rouge_lsum(hyp_lines: List[List[str]], ref_lines: List[List[str]]) -> float:
    hyp_counts = Counter(t for line in hyp_lines for t in line)
    ref_counts = Counter(t for line in ref_lines for t in line)
    hyp_total, ref_total = sum(hyp_counts.values()), sum(ref_counts.values())
    if hyp_total == 0 and ref_total == 0:
        return 1.0
    hits = 0
    for ref_line in ref_lines:
        union = set()
        for hyp_line in hyp_lines:
            union.update(_lcs_positions(ref_line, hyp_line))
        for index in sorted(union):
            token = ref_line[index]
            if hyp_counts[token] > 0 and ref_counts[token] > 0:
                hits += 1
                hyp_counts[token] -= 1
                ref_counts[token] -= 1
    return _f1(hits, hyp_total, ref_total)


@dataclass(frozen=True)
class RougeScores:
    rouge_1: float
    rouge_2: float
    rouge_L: float
    rouge_Lsum: float


def rouge(hypothesis: str, reference: str) -> RougeScores:
    """
    ROUGE F1 scores of two texts.

    rouge_Lsum treats every non-blank line as a sentence and scores the
    union LCS of each reference line against all hypothesis lines.
    Two empty texts score 1.0 everywhere.
    """
    hyp, ref = tokenize(hypothesis), tokenize(reference)
    if not hyp and not ref:
        return RougeScores(1.0, 1.0, 1.0, 1.0)
    hyp_lines = [tokens for tokens in (tokenize(line) for line in (hypothesis or '').splitlines()) if tokens]
    ref_lines = [tokens for tokens in (tokenize(line) for line in (reference or '').splitlines()) if tokens]
    return RougeScores(
        rouge_1=_rouge_n(hyp, ref, 1),
        rouge_2=_rouge_n(hyp, ref, 2),
        rouge_L=_f1(lcs_length(hyp, ref), len(hyp), len(ref)),
        rouge_Lsum=_rouge_lsum(hyp_lines, ref_lines),
    )


@dataclass(frozen=True)
class PairScore:
    """Scores of one generated tree against its reference."""

    struct_match: int
    action_jaccard: float
    bleu: float
    rouge_1: float
    rouge_2: float
    rouge_L: float
    rouge_Lsum: float
    hyp_parsed: bool = True
    bucket: str = LINEAR
    name: Optional[str] = None

    def to_record(self) -> Dict:
        return {
            'name': self.name,
            'bucket': self.bucket,
            'hyp_parsed': self.hyp_parsed,
            'struct_match': self.struct_match,
            'action_jaccard': self.action_jaccard,
            'bleu': self.bleu,
            'rouge_1': self.rouge_1,
            'rouge_2': self.rouge_2,
            'rouge_L': self.rouge_L,
            'rouge_Lsum': self.rouge_Lsum,
        }


def score_pair(ref_text: str, hyp_text: str, name: Optional[str] = None) -> PairScore:
    """
    Score a hypothesis response against a reference tree.

    The XML block is located in both texts first. An unparsable hypothesis
    scores 0 on StructMatch and Jaccard; lexical metrics still apply.

    Raises:
        TreeFormatError: If the reference does not parse
    """
    ref_xml = extract_xml_block(ref_text)
    hyp_xml = extract_xml_block(hyp_text)
    reference = parse_xml(ref_xml)
    try:
        hypothesis = parse_xml(hyp_xml)
    except TreeFormatError as e:
        logger.debug(f"Hypothesis {name or ''} does not parse: {e.message}")
        hypothesis = None

    lexical = rouge(hyp_xml, ref_xml)
    return PairScore(
        struct_match=struct_match(hypothesis, reference) if hypothesis else 0,
        action_jaccard=action_jaccard(hypothesis, reference) if hypothesis else 0.0,
        bleu=bleu(tokenize(hyp_xml), tokenize(ref_xml)),
        rouge_1=lexical.rouge_1,
        rouge_2=lexical.rouge_2,
        rouge_L=lexical.rouge_L,
        rouge_Lsum=lexical.rouge_Lsum,
        hyp_parsed=hypothesis is not None,
        bucket=reference_bucket(reference),
        name=name,
    )


def mean_std(values: Sequence[float]) -> Tuple[float, float]:
    """Mean and population standard deviation."""
    if len(values) == 0:
        raise EmptyInputError("mean_std needs at least one value")
    array = np.asarray(values, dtype=float)
    return float(array.mean()), float(array.std())


@dataclass(frozen=True)
class StructCompliance:
    """Overall and per-bucket StructMatch rates."""

    hits: int
    total: int
    buckets: Dict[str, Tuple[int, int]] = field(default_factory=dict)

    @property
    def rate(self) -> float:
        return self.hits / self.total if self.total else 0.0

    def bucket_rate(self, bucket: str) -> float:
        hits, total = self.buckets.get(bucket, (0, 0))
        return hits / total if total else 0.0


def struct_compliance(matches: Sequence[int], buckets: Sequence[str]) -> StructCompliance:
    """
    Fold per-pair StructMatch values into overall and per-bucket counts.

    Raises:
        EmptyInputError: If there are no pairs
        RaggedAttemptsError: If matches and buckets differ in length
    """
    if not matches:
        raise EmptyInputError("struct_compliance needs at least one pair")
    if len(matches) != len(buckets):
        raise RaggedAttemptsError(f"{len(matches)} StructMatch values but {len(buckets)} buckets",
                                  tip="Pass one bucket per scored pair")
    per_bucket: Dict[str, List[int]] = {}
    for match, bucket in zip(matches, buckets):
        entry = per_bucket.setdefault(bucket, [0, 0])
        entry[0] += int(match)
        entry[1] += 1
    return StructCompliance(
        hits=sum(int(m) for m in matches),
        total=len(matches),
        buckets={b: (h, t) for b, (h, t) in sorted(per_bucket.items())},
    )


def summarize_scores(scores: Sequence[PairScore]) -> Dict:
    """Aggregate view of a scored corpus."""
    if not scores:
        raise EmptyInputError("No scored pairs to summarize")
    compliance = struct_compliance([s.struct_match for s in scores], [s.bucket for s in scores])
    jaccard_mean, jaccard_std = mean_std([s.action_jaccard for s in scores])
    summary = {
        'pairs': len(scores),
        'struct_match': compliance.rate,
        'struct_match_buckets': {b: list(v) for b, v in compliance.buckets.items()},
        'jaccard_mean': jaccard_mean,
        'jaccard_std': jaccard_std,
    }
    for metric in ('bleu', 'rouge_1', 'rouge_2', 'rouge_L', 'rouge_Lsum'):
        summary[metric] = mean_std([getattr(s, metric) for s in scores])[0]
    return summary


@dataclass(frozen=True)
class SuiteResult:
    """Per-task attempt outcomes and the BT-Valid / SR / Pass@k aggregates."""

    task_names: Tuple[str, ...]
    outcomes: Tuple[Tuple[bool, ...], ...]
    validity: Tuple[bool, ...]
    k: int
    bt_valid_rate: float
    sr: float
    pass_at_k: float

    def to_record(self) -> Dict:
        return {
            'tasks': len(self.task_names),
            'k': self.k,
            'bt_valid': self.bt_valid_rate,
            'sr': self.sr,
            'pass_at_k': self.pass_at_k,
        }


def aggregate_suite(
    outcomes: Sequence[Sequence[bool]],
    validity: Sequence[bool],
    task_names: Optional[Sequence[str]] = None
) -> SuiteResult:
    """
    Aggregate task attempts into BT-Valid, SR and Pass@k.

    Args:
        outcomes: Per task, the success of each of its k attempts in order
        validity: Per task, the conformance verdict of its first attempt
        task_names: Optional names, defaults to task_1..task_n

    Raises:
        EmptyInputError: If there are no tasks
        RaggedAttemptsError: If tasks have different attempt counts
    """
    if not outcomes:
        raise EmptyInputError("aggregate_suite needs at least one task")
    counts = sorted({len(o) for o in outcomes})
    if len(counts) != 1 or counts[0] < 1:
        raise RaggedAttemptsError(f"Tasks have differing attempt counts: {counts}")
    if len(validity) != len(outcomes):
        raise RaggedAttemptsError(
            f"Got {len(validity)} validity flags for {len(outcomes)} tasks",
            tip="Pass one first-attempt validity flag per task"
        )
    names = tuple(task_names) if task_names is not None else \
        tuple(f"task_{i}" for i in range(1, len(outcomes) + 1))

    n = len(outcomes)
    return SuiteResult(
        task_names=names,
        outcomes=tuple(tuple(bool(a) for a in o) for o in outcomes),
        validity=tuple(bool(v) for v in validity),
        k=counts[0],
        bt_valid_rate=sum(bool(v) for v in validity) / n,
        sr=sum(bool(o[0]) for o in outcomes) / n,
        pass_at_k=sum(any(o) for o in outcomes) / n,
    )
