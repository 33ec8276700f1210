"""
Conformance Validator: decides whether a candidate output is a deployable tree
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, Iterator, List, Mapping, Optional, Sequence, Tuple

from btforge.exceptions import ConfigurationError, EmptyInputError, TreeFormatError
from btforge.tree import Action, iter_nodes, extract_action_set
from btforge.xmlio import is_well_formed, parse_xml

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PrimitiveLibrary:
    """The fixed primitive library P with per-name required attributes."""

    names: Tuple[str, ...]
    arity: Mapping[str, Tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self):
        names = tuple(self.names)
        if any(not isinstance(n, str) or not n.strip() for n in names):
            raise ConfigurationError("Primitive names must be non-empty strings")
        duplicates = sorted({n for n in names if names.count(n) > 1})
        if duplicates:
            raise ConfigurationError(f"Duplicate primitives in library: {', '.join(duplicates)}")
        object.__setattr__(self, 'names', names)
        object.__setattr__(self, 'arity', {n: tuple(self.arity.get(n, ())) for n in names})

    def __contains__(self, name: str) -> bool:
        return name in self.arity

    def __iter__(self) -> Iterator[str]:
        return iter(self.names)

    def __len__(self) -> int:
        return len(self.names)

    def required_attributes(self, name: str) -> Tuple[str, ...]:
        return self.arity.get(name, ())


@dataclass(frozen=True)
class ValidationReport:
    """Outcome of validating one candidate output."""

    xml_valid: bool
    btcpp_valid: bool
    unknown_actions: Tuple[str, ...] = ()
    disallowed_actions: Tuple[str, ...] = ()
    arity_violations: Tuple[str, ...] = ()
    error: Optional[str] = None

    @property
    def verdict(self) -> bool:
        return self.btcpp_valid and not self.unknown_actions and not self.disallowed_actions

    def to_record(self) -> Dict:
        return {
            'xml_valid': self.xml_valid,
            'btcpp_valid': self.btcpp_valid,
            'unknown_actions': list(self.unknown_actions),
            'disallowed_actions': list(self.disallowed_actions),
            'arity_violations': list(self.arity_violations),
            'error': self.error,
            'verdict': self.verdict,
        }


def validate(
    text: str,
    library: PrimitiveLibrary,
    allowed: Optional[Iterable[str]] = None
) -> ValidationReport:
    """
    Validate a candidate tree against the primitive library.

    Args:
        text: Candidate XML text
        library: Primitive library P
        allowed: Optional per-episode allowed actions A (must be a subset of P)

    Returns:
        ValidationReport; all failure modes are report fields

    Raises:
        ConfigurationError: If allowed contains names outside the library
    """
    allowed_set = None
    if allowed is not None:
        allowed_set = set(allowed)
        outside = sorted(a for a in allowed_set if a not in library)
        if outside:
            raise ConfigurationError(f"Allowed actions not in primitive library: {', '.join(outside)}")

    xml_valid = is_well_formed(text)
    try:
        tree = parse_xml(text)
    except TreeFormatError as e:
        return ValidationReport(xml_valid=xml_valid, btcpp_valid=False, error=e.message)

    actions = extract_action_set(tree)
    unknown = tuple(sorted(a for a in actions if a not in library))
    disallowed = tuple(sorted(actions - allowed_set)) if allowed_set is not None else ()

    arity = []
    for node in iter_nodes(tree):
        if isinstance(node, Action) and node.id in library:
            for attribute in library.required_attributes(node.id):
                if node.get(attribute) is None:
                    arity.append(f"{node.id} missing '{attribute}'")

    report = ValidationReport(
        xml_valid=True,
        btcpp_valid=True,
        unknown_actions=unknown,
        disallowed_actions=disallowed,
        arity_violations=tuple(arity),
    )
    if not report.verdict:
        logger.debug(f"Conformance failed: unknown={list(unknown)} disallowed={list(disallowed)}")
    return report


def validity_rates(texts: Sequence[str], library: PrimitiveLibrary) -> Tuple[float, float]:
    """
    Fractions of texts that are well-formed XML and loadable trees.

    Raises:
        EmptyInputError: If texts is empty
    """
    if not texts:
        raise EmptyInputError("validity_rates needs at least one text")
    reports = [validate(text, library) for text in texts]
    xml_rate = sum(r.xml_valid for r in reports) / len(reports)
    btcpp_rate = sum(r.btcpp_valid for r in reports) / len(reports)
    return xml_rate, btcpp_rate


def summarize_reports(reports: List[ValidationReport]) -> Dict[str, int]:
    return {
        'total': len(reports),
        'xml_valid': sum(r.xml_valid for r in reports),
        'btcpp_valid': sum(r.btcpp_valid for r in reports),
        'conforming': sum(r.verdict for r in reports),
    }
