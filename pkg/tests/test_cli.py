"""
Tests for the command-line interface
"""

import json
import os

import pytest
import yaml

from btforge.cli import build_parser, main
from btforge.config import BUNDLED_SUITE_DIR
from btforge.tasks import list_tasks

from tests.conftest import SCENE_ANALYSIS_YAML, STACK_XML, TEAPOT_XML, task_path, write_episode


def write(path, text):
    os.makedirs(os.path.dirname(path), exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        f.write(text)
    return path


def json_lines(output):
    return [json.loads(line) for line in output.splitlines() if line.startswith('{')]


@pytest.fixture(autouse=True)
def no_config_file(temp_dir, monkeypatch):
    """Run every command from an empty directory so no .btforge.yml is picked up"""
    monkeypatch.chdir(temp_dir)


class TestParser:
    """Test argument parsing"""

    def test_command_required(self):
        with pytest.raises(SystemExit) as exc_info:
            build_parser().parse_args([])
        assert exc_info.value.code == 2

    def test_unknown_prompting(self):
        with pytest.raises(SystemExit):
            main(['suite', '--prompting', 'few-shot'])

    def test_suite_defaults(self):
        args = build_parser().parse_args(['suite'])
        assert (args.attempts, args.prompting, args.workers) == (3, 'cot', 1)


class TestValidate:
    """Test the validate command"""

    def test_conforming(self, temp_dir, capsys):
        path = write(os.path.join(temp_dir, 'trees', 'teapot.xml'), TEAPOT_XML)
        assert main(['validate', path]) == 0
        assert '1/1 trees conform' in capsys.readouterr().out

    def test_directory_with_failure(self, temp_dir, capsys):
        trees = os.path.join(temp_dir, 'trees')
        write(os.path.join(trees, 'a.xml'), TEAPOT_XML)
        write(os.path.join(trees, 'b.xml'), STACK_XML)
        assert main(['validate', trees]) == 1
        out = capsys.readouterr().out
        assert 'unknown STACK' in out
        assert '1/2 trees conform' in out

    def test_allowed(self, temp_dir):
        path = write(os.path.join(temp_dir, 'teapot.xml'), TEAPOT_XML)
        assert main(['validate', path, '--allowed', 'NAVIGATE_TO,GRASP']) == 1

    def test_allowed_outside_library(self, temp_dir):
        path = write(os.path.join(temp_dir, 'teapot.xml'), TEAPOT_XML)
        assert main(['validate', path, '--allowed', 'STACK']) == 2

    def test_records(self, temp_dir, capsys):
        path = write(os.path.join(temp_dir, 'stack.xml'), STACK_XML)
        assert main(['validate', path, '--format', 'records', '-q']) == 1
        [record] = json_lines(capsys.readouterr().out)
        assert record['file'] == path
        assert record['unknown_actions'] == ['STACK']
        assert record['verdict'] is False

    def test_missing_file(self, temp_dir):
        assert main(['validate', os.path.join(temp_dir, 'nope.xml')]) == 2

    def test_custom_library(self, temp_dir):
        """STACK conforms once the library declares it"""
        library = write(os.path.join(temp_dir, 'lib.txt'), 'NAVIGATE_TO obj\nSTACK obj\n')
        path = write(os.path.join(temp_dir, 'stack.xml'), STACK_XML)
        assert main(['validate', path, '--library', library]) == 0


class TestExec:
    """Test the exec command"""

    def test_success(self, temp_dir, capsys):
        path = write(os.path.join(temp_dir, 'teapot.xml'), TEAPOT_XML)
        assert main(['exec', 'place_teapot_on_stove', path]) == 0
        assert 'success' in capsys.readouterr().out

    def test_task_file_path(self, temp_dir):
        path = write(os.path.join(temp_dir, 'teapot.xml'), TEAPOT_XML)
        assert main(['exec', task_path('place_teapot_on_stove'), path]) == 0

    def test_failure_reason(self, temp_dir, capsys):
        swapped = TEAPOT_XML.replace(
            '<Action ID="NAVIGATE_TO" obj="teapot"/>\n      <Action ID="GRASP" obj="teapot"/>',
            '<Action ID="GRASP" obj="teapot"/>\n      <Action ID="NAVIGATE_TO" obj="teapot"/>',
        )
        path = write(os.path.join(temp_dir, 'swapped.xml'), swapped)
        assert main(['exec', 'place_teapot_on_stove', path, '-f', 'records', '-q']) == 1
        [record] = json_lines(capsys.readouterr().out)
        assert record['failed_step']['action'] == 'GRASP'
        assert record['failed_step']['reason'] == 'NOT_NEAR'
        assert record['task'] == 'place_teapot_on_stove'

    def test_unparseable_tree(self, temp_dir):
        path = write(os.path.join(temp_dir, 'bad.xml'), '<root><Sequence>')
        assert main(['exec', 'place_teapot_on_stove', path]) == 1

    def test_unknown_task(self, temp_dir):
        path = write(os.path.join(temp_dir, 'teapot.xml'), TEAPOT_XML)
        assert main(['exec', 'no_such_task', path]) == 2


class TestScore:
    """Test the score command"""

    def test_identical(self, temp_dir, capsys):
        ref = os.path.join(temp_dir, 'ref')
        hyp = os.path.join(temp_dir, 'hyp')
        for name in ('a.xml', 'b.xml'):
            write(os.path.join(ref, name), TEAPOT_XML)
            write(os.path.join(hyp, name), TEAPOT_XML)
        write(os.path.join(hyp, 'extra.xml'), TEAPOT_XML)

        assert main(['score', '--ref', ref, '--hyp', hyp, '-f', 'records', '-q']) == 0
        records = json_lines(capsys.readouterr().out)
        summary = records[-1]['summary']
        assert summary['pairs'] == 2
        assert summary['bleu'] == pytest.approx(1.0)
        assert summary['jaccard_mean'] == pytest.approx(1.0)
        assert summary['btcpp_valid'] == 1.0

    def test_table(self, temp_dir, capsys):
        ref = os.path.join(temp_dir, 'ref')
        hyp = os.path.join(temp_dir, 'hyp')
        write(os.path.join(ref, 'a.xml'), TEAPOT_XML)
        write(os.path.join(hyp, 'a.xml'), 'no tree')
        assert main(['score', '--ref', ref, '--hyp', hyp]) == 0
        assert 'StructMatch' in capsys.readouterr().out

    def test_nothing_shared(self, temp_dir):
        write(os.path.join(temp_dir, 'ref', 'a.xml'), TEAPOT_XML)
        write(os.path.join(temp_dir, 'hyp', 'b.xml'), TEAPOT_XML)
        assert main(['score', '--ref', os.path.join(temp_dir, 'ref'), '--hyp', os.path.join(temp_dir, 'hyp')]) == 2

    def test_missing_directory(self, temp_dir):
        assert main(['score', '--ref', os.path.join(temp_dir, 'x'), '--hyp', temp_dir]) == 2


class TestSuite:
    """Test the suite command"""

    def write_references(self, root):
        for path in list_tasks(BUNDLED_SUITE_DIR):
            name = os.path.splitext(os.path.basename(path))[0]
            with open(os.path.join(BUNDLED_SUITE_DIR, f"{name}.xml"), encoding='utf-8') as f:
                write(os.path.join(root, name, 'attempt_1.xml'), f.read())

    def test_candidates(self, temp_dir, capsys):
        candidates = os.path.join(temp_dir, 'outputs')
        self.write_references(candidates)
        assert main(['suite', '--candidates', candidates, '-k', '1']) == 0
        out = capsys.readouterr().out
        assert 'BT-Valid' in out
        assert 'Pass@1' in out
        assert '100%' in out

    def test_records(self, temp_dir, capsys):
        candidates = os.path.join(temp_dir, 'outputs')
        self.write_references(candidates)
        assert main(['suite', '--candidates', candidates, '-k', '1', '-f', 'records', '-q']) == 0
        records = json_lines(capsys.readouterr().out)
        assert len(records) == 16
        assert records[-1]['summary']['sr'] == 1.0

    def test_generator_script(self, temp_dir, capsys):
        """A scripted student answering every task with the same tree"""
        script = write(os.path.join(temp_dir, 'student.yml'), yaml.safe_dump({'student': [TEAPOT_XML]}))
        assert main(['suite', '--generator-script', script, '-k', '2', '-f', 'records', '-q']) == 0
        summary = json_lines(capsys.readouterr().out)[-1]['summary']
        assert summary['bt_valid'] == 1.0
        assert summary['sr'] == 0.0

    def test_too_few_candidates(self, temp_dir):
        candidates = os.path.join(temp_dir, 'outputs')
        self.write_references(candidates)
        assert main(['suite', '--candidates', candidates, '-k', '3']) == 2

    def test_no_candidate_source(self):
        assert main(['suite']) == 2


class TestDataset:
    """Test the dataset command"""

    def setup_sources(self, temp_dir, count=4):
        sources = os.path.join(temp_dir, 'episodes')
        for i in range(count):
            write_episode(sources, f"ep{i}", 12)
        script = write(os.path.join(temp_dir, 'teacher.yml'), yaml.safe_dump({
            'scene_analysis': [SCENE_ANALYSIS_YAML],
            'architect': [TEAPOT_XML],
        }))
        return sources, script

    def test_build_and_check(self, temp_dir, capsys):
        sources, script = self.setup_sources(temp_dir)
        out = os.path.join(temp_dir, 'store')
        code = main(['dataset', sources, '--out', out, '--generator-script', script,
                     '--no-cache', '--check', '-f', 'records', '-q'])
        assert code == 0
        [record] = json_lines(capsys.readouterr().out)
        assert record['counts']['total'] == 6
        assert record['failed_episodes'] == []
        assert os.path.isfile(os.path.join(out, 'manifest.jsonl'))

    def test_summary(self, temp_dir, capsys):
        sources, script = self.setup_sources(temp_dir)
        code = main(['dataset', sources, '--out', os.path.join(temp_dir, 'store'), '--generator-script', script,
                     '--no-cache', '--no-progress', '--eval-size', '1'])
        assert code == 0
        assert '(5 train / 1 eval)' in capsys.readouterr().out

    def test_config_file(self, temp_dir, capsys):
        """dataset settings come from the config file"""
        sources, script = self.setup_sources(temp_dir)
        config = write(os.path.join(temp_dir, 'btforge.yml'), yaml.safe_dump({
            'dataset': {'augment_fraction': 1.0, 'use_cache': False},
            'generator': {'script': script},
        }))
        code = main(['dataset', sources, '--out', os.path.join(temp_dir, 'store'), '--config', config,
                     '-f', 'records', '-q'])
        assert code == 0
        assert json_lines(capsys.readouterr().out)[0]['counts']['structural'] == 4

    def test_cache_reported_and_cleared(self, temp_dir, capsys):
        """Cached annotations rebuild the store without a generator until --clear-cache"""
        sources, script = self.setup_sources(temp_dir)
        cache_dir = os.path.join(temp_dir, 'cache')
        out = os.path.join(temp_dir, 'store')
        assert main(['dataset', sources, '--out', out, '--generator-script', script,
                     '--cache-dir', cache_dir, '-f', 'records', '-q']) == 0
        [record] = json_lines(capsys.readouterr().out)
        assert record['cache']['cache_entries'] == 4

        assert main(['dataset', sources, '--out', out, '--cache-dir', cache_dir, '-f', 'records', '-q']) == 0
        [record] = json_lines(capsys.readouterr().out)
        assert record['failed_episodes'] == []

        assert main(['dataset', sources, '--out', out, '--cache-dir', cache_dir, '--clear-cache',
                     '-f', 'records', '-q']) == 0
        [record] = json_lines(capsys.readouterr().out)
        assert sorted(record['failed_episodes']) == ['ep0', 'ep1', 'ep2', 'ep3']
        assert record['cache']['cache_entries'] == 0

    def test_no_cache_info_without_cache(self, temp_dir, capsys):
        sources, script = self.setup_sources(temp_dir)
        assert main(['dataset', sources, '--out', os.path.join(temp_dir, 'store'), '--generator-script', script,
                     '--no-cache', '-f', 'records', '-q']) == 0
        assert json_lines(capsys.readouterr().out)[0]['cache'] is None

    def test_unknown_setting(self, temp_dir):
        sources, script = self.setup_sources(temp_dir)
        config = write(os.path.join(temp_dir, 'btforge.yml'), 'dataset:\n  colour: red\n')
        assert main(['dataset', sources, '--out', os.path.join(temp_dir, 'store'), '--config', config,
                     '--generator-script', script]) == 2

    def test_missing_sources(self, temp_dir):
        assert main(['dataset', os.path.join(temp_dir, 'nope'), '--out', os.path.join(temp_dir, 'store'),
                     '--no-cache']) == 2
