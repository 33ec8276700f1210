"""
Tests for the symbolic world: preconditions, effects, goals and execution traces
"""

import pytest
from hypothesis import given, settings, strategies as st

from btforge.config import BUNDLED_SUITE_DIR
from btforge.exceptions import ExecutionError, SchemaError, UnknownObjectError, UnknownPrimitiveError
from btforge.tasks import load_task, load_tasks
from btforge.tree import Action, BehaviorTree, Condition, Fallback, RetryUntilSuccessful, Sequence, TickStatus
from btforge.world import (
    PRECONDITION_REASONS,
    RELATION_KINDS,
    UNARY_KINDS,
    GoalSpec,
    ObjectSpec,
    PreconditionFailure,
    Predicate,
    Reason,
    WorldRegistry,
    WorldState,
    apply,
    check_goals,
    evaluate_condition,
    execute,
    state_violations
)

from tests.conftest import task_path


@pytest.fixture
def world():
    """Small scene covering every object capability"""
    return WorldRegistry([
        ObjectSpec('cup'),
        ObjectSpec('ball'),
        ObjectSpec('table', surface=True, graspable=False),
        ObjectSpec('box', container=True, openable=True),
        ObjectSpec('bin', container=True, graspable=False),
        ObjectSpec('lamp', toggleable=True),
        ObjectSpec('door', openable=True, graspable=False),
    ])


def plan(*steps):
    """Sequence of actions from (id, obj) pairs"""
    return BehaviorTree.single(Sequence(tuple(
        Action.of(a, obj=o) if o is not None else Action(a) for a, o in steps
    )))


def reason(outcome):
    assert isinstance(outcome, PreconditionFailure), outcome
    return outcome.reason


class TestPreconditions:
    """One minimal state per failure reason"""

    def test_hands_full(self, world):
        state = WorldState(near='ball', held='cup')
        assert reason(apply(state, 'GRASP', 'ball', world)) == Reason.HANDS_FULL

    def test_not_near(self, world):
        assert reason(apply(WorldState(), 'GRASP', 'cup', world)) == Reason.NOT_NEAR

    def test_not_graspable(self, world):
        assert reason(apply(WorldState(near='table'), 'GRASP', 'table', world)) == Reason.NOT_GRASPABLE

    def test_occluded(self, world):
        """Objects inside a closed openable container cannot be grasped"""
        state = WorldState(near='cup', relations={('inside', 'cup', 'box')})
        assert reason(apply(state, 'GRASP', 'cup', world)) == Reason.OCCLUDED
        opened = WorldState(near='cup', open_set={'box'}, relations={('inside', 'cup', 'box')})
        assert apply(opened, 'GRASP', 'cup', world).held == 'cup'

    def test_empty_hand_place(self, world):
        assert reason(apply(WorldState(near='table'), 'PLACE_ON_TOP', 'table', world)) == Reason.EMPTY_HAND

    def test_empty_hand_release(self, world):
        assert reason(apply(WorldState(), 'RELEASE', None, world)) == Reason.EMPTY_HAND

    def test_held_mismatch(self, world):
        state = WorldState(near='table', held='cup')
        outcome = apply(state, 'PLACE_ON_TOP', 'table', world, held_hint='ball')
        assert reason(outcome) == Reason.HELD_MISMATCH

    def test_cyclic_placement(self, world):
        """A held container cannot go onto its own contents"""
        state = WorldState(near='cup', held='box', relations={('inside', 'cup', 'box')})
        assert reason(apply(state, 'PLACE_ON_TOP', 'cup', world)) == Reason.CYCLIC_PLACEMENT

    def test_not_a_surface(self, world):
        state = WorldState(near='lamp', held='cup')
        assert reason(apply(state, 'PLACE_ON_TOP', 'lamp', world)) == Reason.NOT_A_SURFACE

    def test_not_a_container(self, world):
        state = WorldState(near='table', held='cup')
        assert reason(apply(state, 'PLACE_INSIDE', 'table', world)) == Reason.NOT_A_CONTAINER

    def test_closed_container(self, world):
        state = WorldState(near='box', held='cup')
        assert reason(apply(state, 'PLACE_INSIDE', 'box', world)) == Reason.CLOSED_CONTAINER

    def test_not_openable(self, world):
        assert reason(apply(WorldState(near='table'), 'OPEN', 'table', world)) == Reason.NOT_OPENABLE

    def test_open_needs_free_hands(self, world):
        state = WorldState(near='door', held='cup')
        assert reason(apply(state, 'OPEN', 'door', world)) == Reason.HANDS_FULL

    def test_not_toggleable(self, world):
        assert reason(apply(WorldState(near='table'), 'TOGGLE_ON', 'table', world)) == Reason.NOT_TOGGLEABLE

    def test_unknown_object(self, world):
        with pytest.raises(UnknownObjectError):
            apply(WorldState(), 'NAVIGATE_TO', 'ghost', world)

    def test_unknown_primitive(self, world):
        with pytest.raises(UnknownPrimitiveError):
            apply(WorldState(), 'STACK', 'cup', world)

    def test_missing_obj(self, world):
        with pytest.raises(ExecutionError):
            apply(WorldState(), 'GRASP', None, world)


# reason -> (initial state, object to navigate to, failing action, its object, extra attributes)
FAILING_SECOND_STEPS = {
    Reason.HANDS_FULL: (WorldState(held='cup'), 'ball', 'GRASP', 'ball', {}),
    Reason.NOT_NEAR: (WorldState(), 'table', 'GRASP', 'cup', {}),
    Reason.OCCLUDED: (WorldState(relations={('inside', 'cup', 'box')}), 'cup', 'GRASP', 'cup', {}),
    Reason.EMPTY_HAND: (WorldState(), 'table', 'PLACE_ON_TOP', 'table', {}),
    Reason.NOT_A_SURFACE: (WorldState(held='cup'), 'lamp', 'PLACE_ON_TOP', 'lamp', {}),
    Reason.NOT_A_CONTAINER: (WorldState(held='cup'), 'table', 'PLACE_INSIDE', 'table', {}),
    Reason.CLOSED_CONTAINER: (WorldState(held='cup'), 'box', 'PLACE_INSIDE', 'box', {}),
    Reason.NOT_OPENABLE: (WorldState(), 'table', 'OPEN', 'table', {}),
    Reason.NOT_TOGGLEABLE: (WorldState(), 'table', 'TOGGLE_ON', 'table', {}),
    Reason.NOT_GRASPABLE: (WorldState(), 'table', 'GRASP', 'table', {}),
    Reason.HELD_MISMATCH: (WorldState(held='cup'), 'table', 'PLACE_ON_TOP', 'table', {'held': 'ball'}),
    Reason.CYCLIC_PLACEMENT: (WorldState(held='box', relations={('inside', 'cup', 'box')}),
                              'cup', 'PLACE_ON_TOP', 'cup', {}),
}


class TestFailureReasonCoverage:
    """Every precondition reason is reachable from a two-action tree"""

    def test_table_covers_every_reason(self):
        assert set(FAILING_SECOND_STEPS) == set(PRECONDITION_REASONS)

    @pytest.mark.parametrize('expected', PRECONDITION_REASONS, ids=lambda r: r.value)
    def test_second_step_fails(self, world, expected):
        state, destination, action_id, obj, attributes = FAILING_SECOND_STEPS[expected]
        tree = BehaviorTree.single(Sequence((
            Action.of('NAVIGATE_TO', obj=destination),
            Action.of(action_id, obj=obj, **attributes),
        )))
        trace = execute(tree, state, world, GoalSpec())
        assert len(trace.steps) == 2
        assert trace.steps[0].status == TickStatus.SUCCESS
        assert trace.failed_step.action == action_id
        assert trace.failed_step.reason == expected
        assert trace.final_status == TickStatus.FAILURE


OBJECTS = ('cup', 'box', 'table')

predicates = st.one_of(
    st.builds(Predicate, st.sampled_from(UNARY_KINDS), st.sampled_from(OBJECTS), negated=st.booleans()),
    st.builds(Predicate, st.sampled_from(RELATION_KINDS), st.sampled_from(OBJECTS), st.sampled_from(OBJECTS),
              negated=st.booleans()),
)

states = st.builds(
    WorldState,
    open_set=st.frozensets(st.sampled_from(OBJECTS)),
    toggled_set=st.frozensets(st.sampled_from(OBJECTS)),
    relations=st.frozensets(st.tuples(st.sampled_from(RELATION_KINDS), st.sampled_from(OBJECTS),
                                      st.sampled_from(OBJECTS)), max_size=6),
)


class TestEffects:
    """Successful primitives update the state"""

    def test_navigate(self, world):
        assert apply(WorldState(near='cup'), 'NAVIGATE_TO', 'table', world).near == 'table'

    def test_grasp_detaches(self, world):
        """Grasping removes the object's placement but keeps its contents"""
        state = WorldState(near='box', relations={('ontop', 'box', 'table'), ('inside', 'cup', 'box')})
        after = apply(state, 'GRASP', 'box', world)
        assert after.held == 'box'
        assert after.relations == {('inside', 'cup', 'box')}

    def test_place_inside_open_container(self, world):
        state = WorldState(near='bin', held='cup')
        after = apply(state, 'PLACE_INSIDE', 'bin', world)
        assert after.held is None
        assert after.holds('inside', 'cup', 'bin')

    def test_place_next_to_is_symmetric(self, world):
        after = apply(WorldState(near='door', held='cup'), 'PLACE_NEXT_TO', 'door', world)
        assert after.holds('nextto', 'cup', 'door')
        assert after.holds('nextto', 'door', 'cup')

    def test_release_leaves_object_near_robot(self, world):
        after = apply(WorldState(near='table', held='cup'), 'RELEASE', None, world)
        assert after.held is None
        assert after.holds('nextto', 'cup', 'table')

    def test_open_close_toggle(self, world):
        state = apply(WorldState(near='box'), 'OPEN', 'box', world)
        assert state.holds('open', 'box')
        assert not apply(state, 'CLOSE', 'box', world).holds('open', 'box')
        lit = apply(WorldState(near='lamp'), 'TOGGLE_ON', 'lamp', world)
        assert lit.holds('toggled_on', 'lamp')
        assert not apply(lit, 'TOGGLE_OFF', 'lamp', world).holds('toggled_on', 'lamp')

    def test_aliases_share_semantics(self, world):
        """GRAB and PICK behave as GRASP"""
        for name in ('GRAB', 'PICK'):
            assert apply(WorldState(near='cup'), name, 'cup', world).held == 'cup'

    def test_contact_primitive_needs_proximity(self, world):
        state = WorldState(near='table')
        assert apply(state, 'WIPE', 'table', world) == state
        assert reason(apply(state, 'WIPE', 'cup', world)) == Reason.NOT_NEAR

    def test_pour_needs_held_object(self, world):
        assert reason(apply(WorldState(near='cup'), 'POUR', 'cup', world)) == Reason.EMPTY_HAND


class TestConditions:
    """Condition leaves read the state"""

    def test_predicates(self, world):
        state = WorldState(near='box', held='cup', open_set={'box'}, relations={('ontop', 'ball', 'table')})
        assert evaluate_condition(state, Condition.of('IS_OPEN', obj='box'), world)
        assert not evaluate_condition(state, Condition.of('IS_CLOSED', obj='box'), world)
        assert evaluate_condition(state, Condition.of('IS_HOLDING', obj='cup'), world)
        assert evaluate_condition(state, Condition.of('IS_NEAR', obj='box'), world)
        assert not evaluate_condition(state, Condition('HANDS_EMPTY'), world)
        assert evaluate_condition(state, Condition.of('IS_ON_TOP', obj='ball', target='table'), world)

    def test_unknown_condition(self, world):
        with pytest.raises(ExecutionError):
            evaluate_condition(WorldState(), Condition.of('IS_HAPPY', obj='cup'), world)

    def test_binary_condition_needs_target(self, world):
        with pytest.raises(ExecutionError):
            evaluate_condition(WorldState(), Condition.of('IS_INSIDE', obj='cup'), world)


class TestGoals:
    """Goals are conjunctions checked on the final state"""

    def test_conjunction(self):
        state = WorldState(open_set={'box'}, relations={('inside', 'cup', 'box')})
        inside = Predicate('inside', 'cup', 'box')
        closed = Predicate('open', 'box', negated=True)
        assert check_goals(state, GoalSpec((inside,)))
        assert not check_goals(state, GoalSpec((inside, closed)))
        assert check_goals(state, GoalSpec())

    def test_goal_addition_deduplicates(self):
        a, b = Predicate('open', 'box'), Predicate('toggled_on', 'lamp')
        assert (GoalSpec((a,)) + GoalSpec((a, b))).predicates == (a, b)

    @settings(max_examples=300, deadline=None)
    @given(states, st.lists(predicates, max_size=4), st.lists(predicates, max_size=4))
    def test_union_is_conjunction(self, state, first, second):
        """Adding goals holds exactly when both parts hold"""
        g1, g2 = GoalSpec(tuple(first)), GoalSpec(tuple(second))
        assert check_goals(state, g1 + g2) == (check_goals(state, g1) and check_goals(state, g2))

    def test_goal_unknown_object(self, world):
        with pytest.raises(UnknownObjectError):
            check_goals(WorldState(), GoalSpec((Predicate('open', 'ghost'),)), world)

    def test_predicate_arity(self):
        with pytest.raises(SchemaError):
            Predicate('inside', 'cup')
        with pytest.raises(SchemaError):
            Predicate('open', 'box', 'table')

    def test_state_violations(self, world):
        state = WorldState(held='cup', open_set={'table'}, relations={('ontop', 'cup', 'table')})
        problems = state_violations(state, world)
        assert "'table' is open but not openable" in problems
        assert any('held object' in p for p in problems)


class TestExecute:
    """Whole-tree execution against bundled tasks"""

    def test_teapot_reference(self, library):
        task = load_task(task_path('place_teapot_on_stove'), library)
        trace = execute(task.reference_tree(), task.initial_state, task.registry, task.goal)
        assert trace.final_status == TickStatus.SUCCESS
        assert trace.goal_satisfied
        assert trace.failed_step is None
        assert trace.final_state.holds('ontop', 'teapot', 'stove')

    def test_grasp_before_navigate_flips_verdict(self, library):
        """Swapping the first two steps leaves the robot too far to grasp"""
        task = load_task(task_path('place_teapot_on_stove'), library)
        swapped = plan(('GRASP', 'teapot'), ('NAVIGATE_TO', 'teapot'),
                       ('NAVIGATE_TO', 'stove'), ('PLACE_ON_TOP', 'stove'))
        trace = execute(swapped, task.initial_state, task.registry, task.goal)
        assert not trace.goal_satisfied
        assert trace.failed_step.action == 'GRASP'
        assert trace.failed_step.reason == Reason.NOT_NEAR
        assert len(trace.steps) == 1

    def test_trash_reference(self, library):
        task = load_task(task_path('picking_up_trash'), library)
        trace = execute(task.reference_tree(), task.initial_state, task.registry, task.goal)
        assert trace.goal_satisfied
        assert len(trace.steps) == 12

    def test_every_suite_reference_reaches_its_goal(self, library):
        for task in load_tasks(BUNDLED_SUITE_DIR, library):
            trace = execute(task.reference_tree(), task.initial_state, task.registry, task.goal)
            assert trace.goal_satisfied, task.name

    def test_groceries_fridge_still_closed(self, library):
        """Placing into the fridge before opening it fails"""
        task = load_task(task_path('carrying_in_groceries'), library)
        tree = plan(('NAVIGATE_TO', 'tomato'), ('GRASP', 'tomato'),
                    ('NAVIGATE_TO', 'fridge'), ('PLACE_INSIDE', 'fridge'))
        trace = execute(tree, task.initial_state, task.registry, task.goal)
        assert trace.final_status == TickStatus.FAILURE
        assert trace.failed_step.reason == Reason.CLOSED_CONTAINER
        assert trace.final_state.held == 'tomato'

    def test_groceries_open_while_holding(self, library):
        """Opening the fridge with the tomato in hand fails"""
        task = load_task(task_path('carrying_in_groceries'), library)
        tree = plan(('NAVIGATE_TO', 'tomato'), ('GRASP', 'tomato'),
                    ('NAVIGATE_TO', 'fridge'), ('OPEN', 'fridge'))
        trace = execute(tree, task.initial_state, task.registry, task.goal)
        assert trace.failed_step.action == 'OPEN'
        assert trace.failed_step.reason == Reason.HANDS_FULL

    def test_partial_goal_is_failure(self, library):
        """Reaching one of five goal predicates is not success"""
        task = load_task(task_path('carrying_in_groceries'), library)
        tree = plan(('NAVIGATE_TO', 'fridge'), ('OPEN', 'fridge'), ('NAVIGATE_TO', 'tomato'),
                    ('GRASP', 'tomato'), ('NAVIGATE_TO', 'fridge'), ('PLACE_INSIDE', 'fridge'))
        trace = execute(tree, task.initial_state, task.registry, task.goal)
        assert trace.final_status == TickStatus.SUCCESS
        assert not trace.goal_satisfied

    def test_unknown_object_and_primitive_become_failed_steps(self, world):
        trace = execute(plan(('NAVIGATE_TO', 'ghost')), WorldState(), world, GoalSpec())
        assert trace.failed_step.reason == Reason.UNKNOWN_OBJECT
        trace = execute(plan(('STACK', 'cup')), WorldState(), world, GoalSpec())
        assert trace.failed_step.reason == Reason.UNKNOWN_PRIMITIVE

    def test_condition_false_is_recorded(self, world):
        tree = BehaviorTree.single(Fallback((
            Condition.of('IS_OPEN', obj='box'),
            Sequence((Action.of('NAVIGATE_TO', obj='box'), Action.of('OPEN', obj='box'))),
        )))
        trace = execute(tree, WorldState(), world, GoalSpec((Predicate('open', 'box'),)))
        assert trace.steps[0].reason == Reason.CONDITION_FALSE
        assert trace.goal_satisfied
        assert trace.failed_step is None

    def test_retry_reticks_failed_grasp(self, world):
        """A retried grasp fails identically every attempt in a static world"""
        tree = BehaviorTree.single(RetryUntilSuccessful(3, Action.of('GRASP', obj='cup')))
        trace = execute(tree, WorldState(), world, GoalSpec())
        assert [s.reason for s in trace.steps] == [Reason.NOT_NEAR] * 3
        assert trace.final_status == TickStatus.FAILURE

    def test_to_record(self, library):
        task = load_task(task_path('turning_on_radio'), library)
        record = execute(task.reference_tree(), task.initial_state, task.registry, task.goal).to_record()
        assert record['goal_satisfied'] is True
        assert record['final_state']['toggled'] == ['radio']
        assert [s['action'] for s in record['steps']] == ['NAVIGATE_TO', 'TOGGLE_ON']
