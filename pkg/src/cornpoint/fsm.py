"""Task-level state machine for one sensor insertion sequence.

The transition table is total: any (state, event) pair that is not listed
below goes to ``Fault`` with a diagnostic, and ``CollisionStop`` or
``ActuatorFault`` fault every state.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple


class FsmState(str, Enum):
    STOW = "Stow"
    SCAN = "Scan"
    DETECT = "Detect"
    AWAIT_OPERATOR = "AwaitOperator"
    APPROACH = "Approach"
    ALIGN_FUNNEL = "AlignFunnel"
    ALIGN_VBLOCK = "AlignVBlock"
    INSERT = "Insert"
    RETRACT = "Retract"
    DEPLOY_LOGGER = "DeployLogger"
    DONE = "Done"
    FAULT = "Fault"


class FsmEvent(str, Enum):
    INSERT_COMMAND = "InsertCommand"
    DETECT_OK = "DetectOk"
    REPOSITION = "Reposition"
    MOTION_DONE = "MotionDone"
    CONTACT_MADE = "ContactMade"
    ACTUATOR_EXTENDED = "ActuatorExtended"
    ACTUATOR_RETRACTED = "ActuatorRetracted"
    LOGGER_RELEASED = "LoggerReleased"
    COLLISION_STOP = "CollisionStop"
    ACTUATOR_FAULT = "ActuatorFault"


S, E = FsmState, FsmEvent

# (state, event) -> (next state, actions)
_TABLE: Dict[Tuple[FsmState, FsmEvent], Tuple[FsmState, Tuple[str, ...]]] = {
    (S.STOW, E.INSERT_COMMAND): (S.SCAN, ("move_to_scan_pose",)),
    (S.SCAN, E.MOTION_DONE): (S.DETECT, ("request_detection",)),
    (S.SCAN, E.DETECT_OK): (S.APPROACH, ("plan_approach", "move_to_pre_insert")),
    (S.SCAN, E.REPOSITION): (S.AWAIT_OPERATOR, ("halt_motion", "notify_operator")),
    (S.DETECT, E.DETECT_OK): (S.APPROACH, ("plan_approach", "move_to_pre_insert")),
    (S.DETECT, E.REPOSITION): (S.AWAIT_OPERATOR, ("halt_motion", "notify_operator")),
    (S.AWAIT_OPERATOR, E.INSERT_COMMAND): (S.SCAN, ("move_to_scan_pose",)),
    (S.APPROACH, E.MOTION_DONE): (S.ALIGN_FUNNEL, ("lateral_sweep_into_funnel",)),
    (S.APPROACH, E.CONTACT_MADE): (S.ALIGN_FUNNEL, ("lateral_sweep_into_funnel",)),
    (S.ALIGN_FUNNEL, E.CONTACT_MADE): (S.ALIGN_VBLOCK, ("extend_actuator",)),
    (S.ALIGN_VBLOCK, E.CONTACT_MADE): (S.INSERT, ()),
    (S.INSERT, E.ACTUATOR_EXTENDED): (S.RETRACT, ("retract_actuator",)),
    (S.RETRACT, E.ACTUATOR_RETRACTED): (S.DEPLOY_LOGGER, ("release_logger",)),
    (S.DEPLOY_LOGGER, E.LOGGER_RELEASED): (S.DONE, ("move_to_stow",)),
    (S.DONE, E.INSERT_COMMAND): (S.SCAN, ("move_to_scan_pose",)),
}

_ALWAYS_FAULT = {E.COLLISION_STOP: "stop_arm", E.ACTUATOR_FAULT: "stop_actuator"}


def fsm_step(state: FsmState, event: FsmEvent) -> Tuple[FsmState, Tuple[str, ...]]:
    """Deterministic transition. Unlisted pairs fault with a ``diagnostic:`` action."""
    state, event = FsmState(state), FsmEvent(event)
    if event in _ALWAYS_FAULT:
        return S.FAULT, (_ALWAYS_FAULT[event],)
    if state is S.FAULT:
        return S.FAULT, ()
    try:
        return _TABLE[(state, event)]
    except KeyError:
        return S.FAULT, (f"diagnostic: event {event.value} not handled in state {state.value}",)


def transition_table() -> List[dict]:
    """Every (state, event) pair with its successor and actions."""
    rows = []
    for st in FsmState:
        for ev in FsmEvent:
            nxt, actions = fsm_step(st, ev)
            rows.append({"state": st.value, "event": ev.value, "next": nxt.value,
                         "actions": list(actions), "defined": (st, ev) in _TABLE})
    return rows


def transition_table_json() -> str:
    return json.dumps({"schema_version": 1, "transitions": transition_table()}, indent=2)


@dataclass
class InsertionFsm:
    """Stateful runner around :func:`fsm_step` that also tracks datalogger stock."""

    loggers_remaining: int = 5
    state: FsmState = FsmState.STOW
    history: List[Tuple[str, str, str]] = field(default_factory=list)
    target: Optional[Any] = None

    def fire(self, event: FsmEvent, payload: Any = None) -> Tuple[str, ...]:
        prev = self.state
        nxt, actions = fsm_step(prev, event)
        if nxt is FsmState.DEPLOY_LOGGER and self.loggers_remaining <= 0:
            nxt, actions = FsmState.FAULT, ("diagnostic: no datalogging unit left",)
        if event is FsmEvent.DETECT_OK and nxt is FsmState.APPROACH:
            self.target = payload
        if prev is FsmState.DEPLOY_LOGGER and nxt is FsmState.DONE:
            self.loggers_remaining -= 1
        self.state = nxt
        self.history.append((prev.value, FsmEvent(event).value, nxt.value))
        return actions
