"""
XML parsing and canonical serialization for behavior trees
"""

import logging
import re
import xml.etree.ElementTree as ET
from typing import Dict, List, Tuple
from xml.sax.saxutils import escape

from btforge.exceptions import (
    ChildArityError,
    InvalidAttributeError,
    MalformedXmlError,
    MissingAttributeError,
    MissingMainTreeError,
    UnexpectedTextError,
    UnknownTagError
)
from btforge.tree import (
    NODE_TAGS,
    Action,
    BehaviorTree,
    BtNode,
    Condition,
    Fallback,
    RetryUntilSuccessful,
    Sequence,
    SubTree,
    Timeout
)

logger = logging.getLogger(__name__)

XML_DECLARATION = '<?xml version="1.0" encoding="UTF-8"?>'
INDENT = '  '

# Root-level elements that are accepted and dropped
IGNORED_ROOT_TAGS = ('TreeNodesModel',)

_ROOT_BLOCK_RE = re.compile(r'<root\b.*?</root\s*>', re.DOTALL)
_ROOT_START_RE = re.compile(r'<root\b', re.DOTALL)
_FENCE_RE = re.compile(r'```(?:xml)?\s*\n(.*?)```', re.DOTALL)

_ATTR_ENTITIES = {'"': '&quot;', '\n': '&#10;', '\t': '&#9;', '\r': '&#13;'}


def extract_xml_block(text: str) -> str:
    """
    Locate the XML plan inside a model response.

    Responses usually carry the Scene Analysis YAML before the tree. The
    first <root>...</root> span wins; a truncated document is returned from
    its opening tag to the end so that the parser reports it as malformed.

    Args:
        text: Raw response text

    Returns:
        The XML portion, or the stripped input when no root element is found
    """
    if text is None:
        return ''
    match = _ROOT_BLOCK_RE.search(text)
    if match:
        return match.group(0)
    start = _ROOT_START_RE.search(text)
    if start:
        return text[start.start():].strip()
    fenced = _FENCE_RE.search(text)
    if fenced:
        return fenced.group(1).strip()
    return text.strip()


def is_well_formed(text: str) -> bool:
    """Return True if the text parses as XML at all."""
    try:
        ET.fromstring(text)
        return True
    except ET.ParseError:
        return False


def _check_text(element: ET.Element) -> None:
    if element.text and element.text.strip():
        raise UnexpectedTextError(
            f"Unexpected text inside <{element.tag}>: {element.text.strip()[:40]!r}"
        )
    for child in element:
        if child.tail and child.tail.strip():
            raise UnexpectedTextError(
                f"Unexpected text after <{child.tag}>: {child.tail.strip()[:40]!r}"
            )


def _require(element: ET.Element, name: str) -> str:
    value = element.get(name)
    if value is None:
        raise MissingAttributeError(f"<{element.tag}> is missing required attribute '{name}'")
    return value


def _int_attribute(element: ET.Element, name: str) -> int:
    raw = _require(element, name)
    try:
        return int(raw.strip())
    except ValueError:
        raise InvalidAttributeError(f"<{element.tag}> attribute {name}={raw!r} is not an integer")


def _parse_node(element: ET.Element) -> BtNode:
    tag = element.tag
    if tag not in NODE_TAGS:
        raise UnknownTagError(f"Unknown element <{tag}>")
    _check_text(element)
    children = list(element)

    if tag in ('Sequence', 'Fallback'):
        if not children:
            raise ChildArityError(f"<{tag}> needs at least one child")
        parsed = tuple(_parse_node(child) for child in children)
        return Sequence(parsed) if tag == 'Sequence' else Fallback(parsed)

    if tag in ('RetryUntilSuccessful', 'Timeout'):
        if len(children) != 1:
            raise ChildArityError(f"<{tag}> needs exactly one child, found {len(children)}")
        if tag == 'RetryUntilSuccessful':
            return RetryUntilSuccessful(_int_attribute(element, 'num_attempts'), _parse_node(children[0]))
        return Timeout(_int_attribute(element, 'msec'), _parse_node(children[0]))

    if children:
        raise ChildArityError(f"<{tag}> is a leaf and cannot have children")

    node_id = _require(element, 'ID')
    attributes = tuple((k, v) for k, v in element.attrib.items() if k != 'ID')
    if tag == 'Action':
        return Action(node_id, attributes)
    if tag == 'Condition':
        return Condition(node_id, attributes)
    return SubTree(node_id, attributes)


def parse_xml(text: str) -> BehaviorTree:
    """
    Parse a BehaviorTree.CPP XML document.

    Args:
        text: UTF-8 XML text

    Returns:
        Parsed BehaviorTree

    Raises:
        MalformedXmlError: If the text is not well-formed
        UnknownTagError: If an element falls outside the node vocabulary
        MissingAttributeError: If ID, num_attempts or msec is missing
        MissingMainTreeError: If no main tree can be determined
        ChildArityError: If a node has the wrong number of children
    """
    if not isinstance(text, str):
        raise MalformedXmlError(f"Expected text, got {type(text).__name__}")
    try:
        document = ET.fromstring(text)
    except ET.ParseError as e:
        raise MalformedXmlError(f"Not well-formed XML: {e}")

    if document.tag != 'root':
        if document.tag in NODE_TAGS:
            raise MissingMainTreeError(f"Document starts with <{document.tag}> instead of <root>")
        raise UnknownTagError(f"Unknown document element <{document.tag}>")
    _check_text(document)

    trees: Dict[str, BtNode] = {}
    for element in document:
        if element.tag in IGNORED_ROOT_TAGS:
            logger.debug(f"Dropping <{element.tag}> metadata")
            continue
        if element.tag != 'BehaviorTree':
            raise UnknownTagError(f"Unexpected <{element.tag}> under <root>")
        tree_id = _require(element, 'ID')
        if tree_id in trees:
            raise InvalidAttributeError(f"BehaviorTree ID '{tree_id}' is defined twice")
        _check_text(element)
        body = list(element)
        if len(body) != 1:
            raise ChildArityError(
                f"<BehaviorTree ID=\"{tree_id}\"> needs exactly one root node, found {len(body)}"
            )
        trees[tree_id] = _parse_node(body[0])

    if not trees:
        raise MissingMainTreeError("Document defines no <BehaviorTree>")

    main_tree_id = document.get('main_tree_to_execute')
    if main_tree_id is None:
        if len(trees) != 1:
            raise MissingMainTreeError(
                "main_tree_to_execute is required when more than one tree is defined"
            )
        main_tree_id = next(iter(trees))
    elif main_tree_id not in trees:
        raise MissingMainTreeError(f"main_tree_to_execute='{main_tree_id}' is not defined")

    return BehaviorTree(main_tree_id, trees)


def _quote(value) -> str:
    return '"' + escape(str(value), _ATTR_ENTITIES) + '"'


def _format_attributes(id_value, pairs: Tuple[Tuple[str, str], ...] = ()) -> str:
    parts: List[str] = []
    if id_value is not None:
        parts.append(f'ID={_quote(id_value)}')
    for key, value in sorted(pairs):
        parts.append(f'{key}={_quote(value)}')
    return (' ' + ' '.join(parts)) if parts else ''


def _emit(node: BtNode, depth: int, lines: List[str]) -> None:
    pad = INDENT * depth
    if isinstance(node, (Action, Condition)):
        lines.append(f'{pad}<{node.tag}{_format_attributes(node.id, node.attributes)}/>')
    elif isinstance(node, SubTree):
        lines.append(f'{pad}<SubTree{_format_attributes(node.tree_id, node.attributes)}/>')
    elif isinstance(node, (Sequence, Fallback)):
        lines.append(f'{pad}<{node.tag}>')
        for child in node.children:
            _emit(child, depth + 1, lines)
        lines.append(f'{pad}</{node.tag}>')
    elif isinstance(node, RetryUntilSuccessful):
        lines.append(f'{pad}<RetryUntilSuccessful num_attempts={_quote(node.num_attempts)}>')
        _emit(node.child, depth + 1, lines)
        lines.append(f'{pad}</RetryUntilSuccessful>')
    elif isinstance(node, Timeout):
        lines.append(f'{pad}<Timeout msec={_quote(node.msec)}>')
        _emit(node.child, depth + 1, lines)
        lines.append(f'{pad}</Timeout>')


def serialize(tree: BehaviorTree) -> str:
    """
    Serialize a tree to canonical XML.

    Two-space indentation, ID first then alphabetical attributes, double
    quotes, main tree first. Comments and ignored metadata are not written.
    """
    lines = [XML_DECLARATION, f'<root main_tree_to_execute={_quote(tree.main_tree_id)}>']
    for tree_id in tree.ordered_tree_ids():
        lines.append(f'{INDENT}<BehaviorTree ID={_quote(tree_id)}>')
        _emit(tree.trees[tree_id], 2, lines)
        lines.append(f'{INDENT}</BehaviorTree>')
    lines.append('</root>')
    return '\n'.join(lines) + '\n'
