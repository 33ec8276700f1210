"""
Tests for XML parsing and canonical serialization
"""

import os

import pytest

from btforge.exceptions import (
    ChildArityError,
    InvalidAttributeError,
    MalformedXmlError,
    MissingAttributeError,
    MissingMainTreeError,
    UnexpectedTextError,
    UnknownTagError
)
from btforge.tree import Action, BehaviorTree, RetryUntilSuccessful, Sequence, SubTree, Timeout
from btforge.xmlio import extract_xml_block, is_well_formed, parse_xml, serialize

CORPUS_DIR = os.path.join(os.path.dirname(__file__), 'data', 'corpus')
CORPUS = sorted(f for f in os.listdir(CORPUS_DIR) if f.endswith('.xml'))


def read_corpus(name):
    with open(os.path.join(CORPUS_DIR, name), 'r', encoding='utf-8') as f:
        return f.read()


def wrap(body):
    return f'<root main_tree_to_execute="MainTree"><BehaviorTree ID="MainTree">{body}</BehaviorTree></root>'


class TestRoundTrip:
    """Test parse/serialize over the corpus"""

    def test_corpus_size(self):
        """The round-trip corpus holds 50 documents"""
        assert len(CORPUS) == 50

    @pytest.mark.parametrize('name', CORPUS)
    def test_parse_serialize_parse(self, name):
        """parse(serialize(parse(x))) equals parse(x)"""
        tree = parse_xml(read_corpus(name))
        assert parse_xml(serialize(tree)) == tree

    @pytest.mark.parametrize('name', CORPUS)
    def test_serialize_is_fixed_point(self, name):
        """Serializing a parsed canonical document reproduces it byte for byte"""
        canonical = serialize(parse_xml(read_corpus(name)))
        assert serialize(parse_xml(canonical)) == canonical

    @pytest.mark.parametrize('name', [n for n in CORPUS if n.endswith('_compact.xml')])
    def test_formatting_variants_parse_identically(self, name):
        """Compact and annotated variants parse to the same tree as the canonical file"""
        base = name[:-len('_compact.xml')]
        canonical = parse_xml(read_corpus(f"{base}.xml"))
        assert parse_xml(read_corpus(name)) == canonical
        assert parse_xml(read_corpus(f"{base}_annotated.xml")) == canonical

    def test_bundled_references_are_canonical(self):
        """Reference trees shipped with the tasks are already canonical"""
        for name in CORPUS:
            if name.endswith(('_compact.xml', '_annotated.xml')) or name in (
                    'decorated_groceries.xml', 'explicit_objects.xml'):
                continue
            text = read_corpus(name)
            assert serialize(parse_xml(text)) == text, name


class TestSerialize:
    """Test the canonical output format"""

    def test_single_action_document(self):
        """A one-action Sequence serializes to exactly eight lines"""
        tree = BehaviorTree.single(Sequence((Action.of('GRASP', obj='cup'),)))
        text = serialize(tree)
        assert text == (
            '<?xml version="1.0" encoding="UTF-8"?>\n'
            '<root main_tree_to_execute="MainTree">\n'
            '  <BehaviorTree ID="MainTree">\n'
            '    <Sequence>\n'
            '      <Action ID="GRASP" obj="cup"/>\n'
            '    </Sequence>\n'
            '  </BehaviorTree>\n'
            '</root>\n'
        )
        assert len(text.splitlines()) == 8

    def test_id_first_then_sorted_attributes(self):
        """Attributes are written ID first, then alphabetically"""
        tree = parse_xml(wrap('<Action obj="shelf" held="book" ID="PLACE_ON_TOP"/>'))
        assert '<Action ID="PLACE_ON_TOP" held="book" obj="shelf"/>' in serialize(tree)

    def test_decorators(self):
        """Retry and Timeout keep their parameters"""
        tree = BehaviorTree.single(Sequence((
            RetryUntilSuccessful(3, Action('A')),
            Timeout(5000, Action('B')),
        )))
        text = serialize(tree)
        assert '<RetryUntilSuccessful num_attempts="3">' in text
        assert '<Timeout msec="5000">' in text

    def test_main_tree_first_then_alphabetical(self):
        """Main tree comes first, other trees alphabetically"""
        tree = BehaviorTree('Z', {'Z': Sequence((SubTree('B'), SubTree('A'))), 'B': Action('b'), 'A': Action('a')})
        text = serialize(tree)
        assert text.index('ID="Z"') < text.index('<BehaviorTree ID="A">') < text.index('<BehaviorTree ID="B">')

    def test_special_characters_escaped(self):
        """Quotes and ampersands in attribute values are escaped"""
        tree = BehaviorTree.single(Action.of('SAY', text='a "b" & c'))
        text = serialize(tree)
        assert 'text="a &quot;b&quot; &amp; c"' in text
        assert parse_xml(text).root.get('text') == 'a "b" & c'


class TestParseErrors:
    """Test structured parse failures"""

    def test_truncated_document(self):
        """A truncated document is malformed"""
        text = serialize(BehaviorTree.single(Sequence((Action('A'), Action('B')))))
        with pytest.raises(MalformedXmlError):
            parse_xml(text[:len(text) // 2])

    def test_prose_is_malformed(self):
        """Free text is not XML"""
        with pytest.raises(MalformedXmlError):
            parse_xml('First navigate to the teapot, then grasp it.')

    def test_empty_sequence(self):
        """<Sequence/> has no children"""
        with pytest.raises(ChildArityError):
            parse_xml(wrap('<Sequence/>'))

    def test_retry_with_two_children(self):
        """Decorators take exactly one child"""
        with pytest.raises(ChildArityError):
            parse_xml(wrap('<RetryUntilSuccessful num_attempts="2"><Action ID="A"/><Action ID="B"/>'
                           '</RetryUntilSuccessful>'))

    def test_action_with_child(self):
        """Leaves cannot have children"""
        with pytest.raises(ChildArityError):
            parse_xml(wrap('<Action ID="A"><Action ID="B"/></Action>'))

    def test_unknown_tag(self):
        """Elements outside the node vocabulary are rejected"""
        with pytest.raises(UnknownTagError):
            parse_xml(wrap('<Parallel><Action ID="A"/></Parallel>'))

    def test_missing_id(self):
        """Actions need an ID"""
        with pytest.raises(MissingAttributeError):
            parse_xml(wrap('<Action obj="cup"/>'))

    def test_missing_num_attempts(self):
        """Retry needs num_attempts"""
        with pytest.raises(MissingAttributeError):
            parse_xml(wrap('<RetryUntilSuccessful><Action ID="A"/></RetryUntilSuccessful>'))

    def test_non_integer_msec(self):
        """Timeout msec must be an integer"""
        with pytest.raises(InvalidAttributeError):
            parse_xml(wrap('<Timeout msec="soon"><Action ID="A"/></Timeout>'))

    def test_document_without_root(self):
        """A bare node is not a document"""
        with pytest.raises(MissingMainTreeError):
            parse_xml('<Sequence><Action ID="A"/></Sequence>')

    def test_main_tree_not_defined(self):
        """main_tree_to_execute must name a defined tree"""
        with pytest.raises(MissingMainTreeError):
            parse_xml('<root main_tree_to_execute="Other"><BehaviorTree ID="MainTree">'
                      '<Action ID="A"/></BehaviorTree></root>')

    def test_single_tree_without_main_attribute(self):
        """With one tree, main_tree_to_execute may be omitted"""
        tree = parse_xml('<root><BehaviorTree ID="Only"><Action ID="A"/></BehaviorTree></root>')
        assert tree.main_tree_id == 'Only'

    def test_stray_text(self):
        """Text content inside nodes is rejected"""
        with pytest.raises(UnexpectedTextError):
            parse_xml(wrap('<Sequence>do this<Action ID="A"/></Sequence>'))

    def test_tree_nodes_model_dropped(self):
        """TreeNodesModel metadata is accepted and not written back"""
        text = ('<root main_tree_to_execute="MainTree"><BehaviorTree ID="MainTree"><Action ID="A"/>'
                '</BehaviorTree><TreeNodesModel><Action ID="A"/></TreeNodesModel></root>')
        assert 'TreeNodesModel' not in serialize(parse_xml(text))


class TestExtractXmlBlock:
    """Test locating the plan inside a response"""

    def test_scene_analysis_then_xml(self, teapot_xml):
        """YAML before the tree is skipped"""
        response = "scene_analysis:\n  target: teapot\n\n" + teapot_xml + "\nDone."
        block = extract_xml_block(response)
        assert block.startswith('<root')
        assert block.endswith('</root>')
        assert parse_xml(block) == parse_xml(teapot_xml)

    def test_fenced_block(self):
        """Markdown fences around the tree are removed"""
        response = "Here is the plan:\n```xml\n" + wrap('<Action ID="A"/>') + "\n```\n"
        assert parse_xml(extract_xml_block(response)).root == Action('A')

    def test_truncated_is_kept(self):
        """A truncated tree is returned from <root> to the end"""
        response = 'analysis\n<root main_tree_to_execute="MainTree"><BehaviorTree'
        assert extract_xml_block(response) == '<root main_tree_to_execute="MainTree"><BehaviorTree'

    def test_none(self):
        """None yields an empty string"""
        assert extract_xml_block(None) == ''

    def test_is_well_formed(self):
        """Well-formedness ignores the node vocabulary"""
        assert is_well_formed('<root><Parallel/></root>')
        assert not is_well_formed('<root>')
