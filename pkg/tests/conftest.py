"""
Shared fixtures for btforge tests
"""

import os
import shutil
import tempfile

import pytest
import yaml
from PIL import Image

from btforge.annotation import derive_allowed_actions, parse_scene_analysis
from btforge.config import BUNDLED_SUITE_DIR, BUNDLED_TASKS_DIR, load_library
from btforge.generator import ARCHITECT, SCENE_ANALYSIS, ScriptedGenerator
from btforge.records import EpisodeRecord

TEAPOT_XML = """<?xml version="1.0" encoding="UTF-8"?>
<root main_tree_to_execute="MainTree">
  <BehaviorTree ID="MainTree">
    <Sequence>
      <Action ID="NAVIGATE_TO" obj="teapot"/>
      <Action ID="GRASP" obj="teapot"/>
      <Action ID="NAVIGATE_TO" obj="stove"/>
      <Action ID="PLACE_ON_TOP" obj="stove"/>
    </Sequence>
  </BehaviorTree>
</root>
"""

STACK_XML = """<root main_tree_to_execute="MainTree">
  <BehaviorTree ID="MainTree">
    <Sequence>
      <Action ID="NAVIGATE_TO" obj="cube"/>
      <Action ID="STACK" obj="cube"/>
    </Sequence>
  </BehaviorTree>
</root>
"""

SCENE_ANALYSIS_YAML = """scene_analysis:
  target: teapot
  destination: stove
  expanded_instruction: Pick up the teapot from the counter and set it on the stove.
  scene_context: A kitchen with a teapot on the counter next to a stove.
  expected_sequence: navigate to teapot, grasp it, navigate to stove, place it on top
"""


def linear_tree(obj: str, destination: str) -> str:
    """Canonical four-step pick-and-place tree."""
    return TEAPOT_XML.replace('teapot', obj).replace('stove', destination)


def task_path(name: str) -> str:
    """Path of a bundled task file (suite tasks first)."""
    suite = os.path.join(BUNDLED_SUITE_DIR, f"{name}.yml")
    return suite if os.path.isfile(suite) else os.path.join(BUNDLED_TASKS_DIR, f"{name}.yml")


def write_episode(root: str, episode_id: str, n_frames: int, instruction: str = 'Place the teapot on the stove.',
                  size=(8, 8)) -> str:
    """Write a synthetic episode: n_frames PNGs plus meta.yml."""
    directory = os.path.join(root, episode_id)
    os.makedirs(directory, exist_ok=True)
    width, height = size
    for i in range(n_frames):
        shade = (i * 37) % 256
        image = Image.new('RGB', size, (shade, 255 - shade, (shade * 3) % 256))
        # moving bright block so that frames differ after normalization
        x = i % max(width - 1, 1)
        image.paste((255, 255, 255), (x, 0, x + 2, height // 2))
        image.save(os.path.join(directory, f"frame_{i:06d}.png"))
    with open(os.path.join(directory, 'meta.yml'), 'w', encoding='utf-8') as f:
        yaml.safe_dump({'instruction': instruction}, f)
    return directory


@pytest.fixture
def library():
    """The bundled 22-primitive library"""
    return load_library()


@pytest.fixture
def temp_dir():
    """Create a temporary directory for testing"""
    temp_dir = tempfile.mkdtemp()
    yield temp_dir
    shutil.rmtree(temp_dir, ignore_errors=True)


@pytest.fixture
def teapot_xml():
    return TEAPOT_XML


@pytest.fixture
def scripted_teacher():
    """Scripted generator answering every episode with a valid analysis and a linear tree"""
    return ScriptedGenerator({
        SCENE_ANALYSIS: [SCENE_ANALYSIS_YAML],
        ARCHITECT: [TEAPOT_XML],
    })


def make_record(bt_xml: str = TEAPOT_XML, episode_id: str = 'ep1', instruction: str = 'Place the teapot on the stove.'):
    """Record over a canonical tree with allowed actions derived from it."""
    return EpisodeRecord(
        episode_id=episode_id,
        source_episode=episode_id,
        initial_frame=f"frames/{episode_id}.png",
        contact_sheet=f"sheets/{episode_id}.png",
        instruction=instruction,
        allowed_actions=tuple(derive_allowed_actions(bt_xml)),
        scene_analysis=parse_scene_analysis(SCENE_ANALYSIS_YAML),
        bt_xml=bt_xml,
    )
