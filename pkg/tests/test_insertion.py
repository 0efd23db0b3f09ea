import json
import math
from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cornpoint.fsm import FsmEvent, FsmState, InsertionFsm, fsm_step, transition_table, transition_table_json
from cornpoint.insertion import (
    FailureStage,
    GraspOutcome,
    GripperSpec,
    InsertionOutcome,
    SensorSpec,
    available_push,
    grade_trial,
    simulate_grasp,
    simulate_insertion,
    simulate_vblock_alignment,
)
from cornpoint.selection import InsertionTarget

from conftest import single_stalk_scene

# --- state machine --------------------------------------------------------


def test_fsm_examples():
    assert fsm_step(FsmState.SCAN, FsmEvent.DETECT_OK)[0] is FsmState.APPROACH
    assert fsm_step(FsmState.SCAN, FsmEvent.REPOSITION)[0] is FsmState.AWAIT_OPERATOR
    assert fsm_step(FsmState.INSERT, FsmEvent.ACTUATOR_EXTENDED)[0] is FsmState.RETRACT


def test_fsm_total_and_deterministic():
    rows = transition_table()
    assert len(rows) == len(FsmState) * len(FsmEvent)
    assert len({(r["state"], r["event"]) for r in rows}) == len(rows)
    for st_ in FsmState:
        for ev in FsmEvent:
            assert fsm_step(st_, ev) == fsm_step(st_, ev)
            nxt, actions = fsm_step(st_, ev)
            assert isinstance(nxt, FsmState)
            if ev in (FsmEvent.COLLISION_STOP, FsmEvent.ACTUATOR_FAULT):
                assert nxt is FsmState.FAULT


def test_fsm_undefined_pairs_fault_with_diagnostic():
    nxt, actions = fsm_step(FsmState.STOW, FsmEvent.LOGGER_RELEASED)
    assert nxt is FsmState.FAULT and actions[0].startswith("diagnostic:")


def test_fsm_reachability():
    seen, todo = {FsmState.STOW}, deque([FsmState.STOW])
    while todo:
        s = todo.popleft()
        for ev in FsmEvent:
            n = fsm_step(s, ev)[0]
            if n not in seen:
                seen.add(n)
                todo.append(n)
    assert seen == set(FsmState)
    # Done is reachable without passing through Fault
    seen, todo = {FsmState.STOW}, deque([FsmState.STOW])
    while todo:
        s = todo.popleft()
        for ev in FsmEvent:
            n = fsm_step(s, ev)[0]
            if n is not FsmState.FAULT and n not in seen:
                seen.add(n)
                todo.append(n)
    assert FsmState.DONE in seen


def test_fsm_nominal_run_and_logger_stock():
    fsm = InsertionFsm()
    seq = [FsmEvent.INSERT_COMMAND, FsmEvent.MOTION_DONE, FsmEvent.DETECT_OK, FsmEvent.MOTION_DONE,
           FsmEvent.CONTACT_MADE, FsmEvent.CONTACT_MADE, FsmEvent.ACTUATOR_EXTENDED,
           FsmEvent.ACTUATOR_RETRACTED, FsmEvent.LOGGER_RELEASED]
    for k in range(5):
        for ev in seq:
            fsm.fire(ev)
        assert fsm.state is FsmState.DONE
        assert fsm.loggers_remaining == 4 - k
    for ev in seq[:-2]:
        fsm.fire(ev)
    fsm.fire(FsmEvent.ACTUATOR_RETRACTED)
    assert fsm.state is FsmState.FAULT


def test_fsm_json_export():
    doc = json.loads(transition_table_json())
    assert doc["schema_version"] == 1
    assert len(doc["transitions"]) == len(FsmState) * len(FsmEvent)


# --- contact model -------------------------------------------------------


def _target(point, direction=(1.0, 0.0, 0.0)):
    return InsertionTarget(np.asarray(point, float), np.asarray(direction, float), 5)


def test_grasp_capture_boundary():
    spec = GripperSpec()
    scene = single_stalk_scene(x=0.45, y=0.0)
    t = _target((0.45, 0.0, 0.05))
    assert simulate_grasp(t, scene, np.zeros(3), spec).captured
    h = spec.funnel_half_opening
    exact = simulate_grasp(t, scene, np.array([0.0, h, 0.0]), spec)
    assert abs(exact.offset) == h and exact.captured
    assert not simulate_grasp(t, scene, np.array([0.0, h + 0.001, 0.0]), spec).captured
    # error along the approach direction does not change the lateral offset
    assert simulate_grasp(t, scene, np.array([0.01, 0.0, 0.0]), spec).offset == 0.0


def test_vblock_examples():
    stalk = single_stalk_scene(stiffness=0.0).stalks[0]
    assert simulate_vblock_alignment(0.01, stalk) == pytest.approx(0.05 * 0.01)
    for s in (0.0, 0.5, 1.0):
        assert simulate_vblock_alignment(0.0, single_stalk_scene(stiffness=s).stalks[0]) == 0.0


@settings(max_examples=300, deadline=None)
@given(e=st.floats(-0.03, 0.03), s1=st.floats(0, 1), s2=st.floats(0, 1),
       rho0=st.floats(-0.5, 1.0), rho1=st.floats(0, 2))
def test_vblock_never_worsens(e, s1, s2, rho0, rho1):
    spec = GripperSpec(centering_base=rho0, centering_stiffness=rho1)
    lo, hi = sorted((s1, s2))
    d_lo = simulate_vblock_alignment(e, single_stalk_scene(stiffness=lo).stalks[0], spec)
    d_hi = simulate_vblock_alignment(e, single_stalk_scene(stiffness=hi).stalks[0], spec)
    assert abs(d_lo) <= abs(e) and abs(d_hi) <= abs(e)
    assert abs(d_lo) <= abs(d_hi)


def test_insertion_examples():
    stalk = single_stalk_scene(radius=0.01, stiffness=0.2).stalks[0]
    out = simulate_insertion(0.0, stalk, GripperSpec(), 0.0, 0.05)
    assert out.penetration >= 0.006 and out.pads_covered and out.retained and not out.glanced
    g = simulate_insertion(0.99 * 0.01, stalk)
    assert g.glanced and g.penetration == 0.0 and not g.retained
    assert simulate_insertion(0.011, stalk).glanced


def test_shallow_penetration_is_knocked_out():
    stalk = single_stalk_scene(radius=0.01, stiffness=0.0).stalks[0]
    # force budget leaves exactly retain_depth - 1 mm of protrusion
    spec = GripperSpec(actuator_force=6000.0 * (0.004 + 0.003))
    out = simulate_insertion(0.0, stalk, spec, 0.0, 0.05)
    assert out.penetration == pytest.approx(0.003)
    assert not out.retained
    scene = single_stalk_scene(radius=0.01)
    grasp = GraspOutcome(True, 0.0, 0, 0.0)
    report = grade_trial(_target((0.45, 0, 0.05)), scene, grasp, out)
    assert report.grasped and not report.inserted and report.failure_stage is FailureStage.INSERT


def test_available_push_model():
    spec = GripperSpec()
    stalk = single_stalk_scene(radius=0.01).stalks[0]
    # thin compliant stalk: limited by probe length
    assert available_push(stalk.section, 0.0, 0.0, spec) == pytest.approx(0.011)
    # rigid stalk: force limited to (90 - 45) / 6000 - recess
    assert available_push(stalk.section, 0.0, 1.0, spec) == pytest.approx(45 / 6000 - 0.004)


def test_through_pith_rule():
    stalk = single_stalk_scene(radius=0.012, stiffness=0.0, pith=0.06).stalks[0]
    assert simulate_insertion(0.0, stalk, GripperSpec(), 0.0, 0.05).through_pith
    assert not simulate_insertion(0.0, stalk, GripperSpec(), 0.0, 0.07).through_pith


def test_grade_examples():
    scene = single_stalk_scene(x=0.45, y=0.0)
    r = grade_trial(None, scene, reposition_reason="NoDetections")
    assert not r.detected and r.failure_stage is FailureStage.DETECT
    t = _target((0.45, 0.0, 0.05))
    miss = GraspOutcome(False, 0.03, 0, 0.0)
    r = grade_trial(t, scene, miss)
    assert r.detected and not r.grasped and not any(r.criteria[2:])
    assert r.failure_stage is FailureStage.GRASP
    far = grade_trial(_target((0.45, 0.03, 0.05)), scene)
    assert not far.detected


@settings(max_examples=300, deadline=None)
@given(dy=st.floats(-0.04, 0.04), captured=st.booleans(), pen=st.floats(0, 0.012),
       glanced=st.booleans(), pith=st.booleans(), have_ins=st.booleans())
def test_report_funnel_monotone(dy, captured, pen, glanced, pith, have_ins):
    scene = single_stalk_scene(x=0.45, y=0.0)
    grasp = GraspOutcome(captured, dy, 0, 0.0)
    ins = InsertionOutcome(pen, glanced, pen >= 0.004, pen >= 0.006, pith and pen >= 0.004) if have_ins else None
    r = grade_trial(_target((0.45, dy, 0.05)), scene, grasp, ins)
    c = r.criteria
    assert all(c[i] or not c[i + 1] for i in range(4))
    first_false = next((i for i, v in enumerate(c) if not v), None)
    stages = list(FailureStage)
    assert r.failure_stage == (None if first_false is None else stages[first_false])


def _success(stalk, delta, approach, spec):
    out = simulate_insertion(delta, stalk, spec, approach, 0.05)
    return out.retained and not out.glanced


def test_success_monotone_in_approach_sigma():
    rng = np.random.default_rng(0)
    spec = GripperSpec()
    n = 500
    stalks = []
    for _ in range(n):
        a = rng.uniform(0.006, 0.020)
        b = a / rng.uniform(1.0, 1.5)
        stalks.append(single_stalk_scene(radius=a, b=b, stiffness=rng.uniform(0, 1),
                                         orientation=rng.uniform(0, math.pi)).stalks[0])
    z = rng.standard_normal(n)  # common random numbers across levels
    rates = []
    for sigma in (0.002, 0.008, 0.02):
        ok = 0
        for s, zi in zip(stalks, z):
            e = sigma * zi
            if abs(e) > spec.funnel_half_opening:
                continue
            ok += _success(s, simulate_vblock_alignment(e, s, spec), 0.0, spec)
        rates.append(ok / n)
    assert rates[0] >= rates[1] >= rates[2]


def test_sensor_spec_invariants():
    with pytest.raises(ValueError):
        SensorSpec(pad_depth=0.02).validate()
    with pytest.raises(ValueError):
        GripperSpec(stroke=0.06).validate()
