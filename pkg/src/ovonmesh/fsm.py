"""Conversation state machines.

Three pure machines describe an agent's protocol position:

* serving: answers requests (Idle, Ready, SearchingForResponse, SendingResponse)
* demanding: initiates requests (Idle, Ready, ConsumingResponse)
* discovery: locates capable peers (CapabilitySearch, WaitingForManifest,
  AssistantSearch, WaitingForAssistantList, Ready)

Each step function maps (state, input) to (state', action) from an explicit
transition table. Inputs outside the table never change state: the step
returns (state, NONE) and raises a ProtocolWarning, so a noncompliant peer
cannot corrupt session state. Actions are descriptions only; the runtime
executes them.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Union

from .envelope import ConversationEnvelope, DialogEvent, EventType


class ProtocolWarning(UserWarning):
    """A peer drove the machine with an input its current state does not define."""


class ServingState(Enum):
    IDLE = "Idle"
    READY = "Ready"
    SEARCHING_FOR_RESPONSE = "SearchingForResponse"
    SENDING_RESPONSE = "SendingResponse"


class DemandingState(Enum):
    IDLE = "Idle"
    READY = "Ready"
    CONSUMING_RESPONSE = "ConsumingResponse"


class DiscoveryState(Enum):
    CAPABILITY_SEARCH = "CapabilitySearch"
    WAITING_FOR_MANIFEST = "WaitingForManifest"
    ASSISTANT_SEARCH = "AssistantSearch"
    WAITING_FOR_ASSISTANT_LIST = "WaitingForAssistantList"
    READY = "Ready"


class InputKind(Enum):
    RECEIVED_INVITE = "ReceivedInvite"
    RECEIVED_UTTERANCE = "ReceivedUtterance"
    RECEIVED_WHISPER = "ReceivedWhisper"
    RECEIVED_BYE = "ReceivedBye"
    LOOKUP_SUCCEEDED = "LookupSucceeded"
    LOOKUP_FAILED = "LookupFailed"
    INACTIVITY_TIMEOUT = "InactivityTimeout"
    SENT_INVITE = "SentInvite"
    SENT_UTTERANCE_OR_WHISPER = "SentUtteranceOrWhisper"
    RECEIVED_RESPONSE = "ReceivedResponse"
    SENT_REQUEST_MANIFEST = "SentRequestManifest"
    RECEIVED_PUBLISH_MANIFEST = "ReceivedPublishManifest"
    SENT_FIND_ASSISTANT = "SentFindAssistant"
    RECEIVED_PROPOSE_ASSISTANT = "ReceivedProposeAssistant"
    RESEND_TICK = "ResendTick"


class Referral(Enum):
    DIRECT = "direct"      # proposed agents can service the request themselves
    INDIRECT = "indirect"  # proposed agents should be queried in turn


@dataclass(frozen=True)
class FsmInput:
    """One trigger. `referral` qualifies ReceivedProposeAssistant and nothing else."""

    kind: InputKind
    referral: Optional[Referral] = None

    def __post_init__(self) -> None:
        if self.kind is InputKind.RECEIVED_PROPOSE_ASSISTANT:
            if self.referral is None:
                raise ValueError("ReceivedProposeAssistant requires a referral qualifier")
        elif self.referral is not None:
            raise ValueError(f"{self.kind.value} does not take a referral qualifier")

    def __str__(self) -> str:
        if self.referral is not None:
            return f"{self.kind.value}({self.referral.value})"
        return self.kind.value


def all_inputs() -> list[FsmInput]:
    """Every distinct input, with both referral variants: 16 in total."""
    inputs = []
    for kind in InputKind:
        if kind is InputKind.RECEIVED_PROPOSE_ASSISTANT:
            inputs.append(FsmInput(kind, Referral.DIRECT))
            inputs.append(FsmInput(kind, Referral.INDIRECT))
        else:
            inputs.append(FsmInput(kind))
    return inputs


class FsmAction(Enum):
    EMIT_RESPONSE_ENVELOPE = "EmitResponseEnvelope"
    EMIT_BYE = "EmitBye"
    START_LOOKUP = "StartLookup"
    RESEND_REQUEST_MANIFEST = "ResendRequestManifest"
    RESEND_FIND_ASSISTANT = "ResendFindAssistant"
    QUERY_SUGGESTED_AGENTS = "QuerySuggestedAgents"
    NONE = "None"


_SERVING_TABLE: dict[tuple[ServingState, FsmInput], tuple[ServingState, FsmAction]] = {
    (ServingState.IDLE, FsmInput(InputKind.RECEIVED_INVITE)):
        (ServingState.READY, FsmAction.NONE),
    (ServingState.READY, FsmInput(InputKind.RECEIVED_UTTERANCE)):
        (ServingState.SEARCHING_FOR_RESPONSE, FsmAction.START_LOOKUP),
    (ServingState.READY, FsmInput(InputKind.RECEIVED_WHISPER)):
        (ServingState.SEARCHING_FOR_RESPONSE, FsmAction.START_LOOKUP),
    (ServingState.SEARCHING_FOR_RESPONSE, FsmInput(InputKind.LOOKUP_SUCCEEDED)):
        (ServingState.SENDING_RESPONSE, FsmAction.EMIT_RESPONSE_ENVELOPE),
    (ServingState.SEARCHING_FOR_RESPONSE, FsmInput(InputKind.LOOKUP_FAILED)):
        (ServingState.IDLE, FsmAction.EMIT_BYE),
    (ServingState.SENDING_RESPONSE, FsmInput(InputKind.SENT_UTTERANCE_OR_WHISPER)):
        (ServingState.READY, FsmAction.NONE),
    (ServingState.READY, FsmInput(InputKind.RECEIVED_BYE)):
        (ServingState.IDLE, FsmAction.NONE),
    (ServingState.READY, FsmInput(InputKind.INACTIVITY_TIMEOUT)):
        (ServingState.IDLE, FsmAction.NONE),
}

# The Ready self-loop keeps the table total over the demanding agent's own
# sends: it may issue any number of utterances or whispers while awaiting a
# response.
_DEMANDING_TABLE: dict[tuple[DemandingState, FsmInput], tuple[DemandingState, FsmAction]] = {
    (DemandingState.IDLE, FsmInput(InputKind.SENT_INVITE)):
        (DemandingState.READY, FsmAction.NONE),
    (DemandingState.READY, FsmInput(InputKind.SENT_UTTERANCE_OR_WHISPER)):
        (DemandingState.READY, FsmAction.NONE),
    (DemandingState.READY, FsmInput(InputKind.RECEIVED_RESPONSE)):
        (DemandingState.CONSUMING_RESPONSE, FsmAction.NONE),
    (DemandingState.CONSUMING_RESPONSE, FsmInput(InputKind.SENT_UTTERANCE_OR_WHISPER)):
        (DemandingState.READY, FsmAction.NONE),
    (DemandingState.CONSUMING_RESPONSE, FsmInput(InputKind.RECEIVED_BYE)):
        (DemandingState.IDLE, FsmAction.NONE),
}

_DISCOVERY_TABLE: dict[tuple[DiscoveryState, FsmInput], tuple[DiscoveryState, FsmAction]] = {
    (DiscoveryState.CAPABILITY_SEARCH, FsmInput(InputKind.SENT_REQUEST_MANIFEST)):
        (DiscoveryState.WAITING_FOR_MANIFEST, FsmAction.NONE),
    (DiscoveryState.WAITING_FOR_MANIFEST, FsmInput(InputKind.RESEND_TICK)):
        (DiscoveryState.WAITING_FOR_MANIFEST, FsmAction.RESEND_REQUEST_MANIFEST),
    (DiscoveryState.WAITING_FOR_MANIFEST, FsmInput(InputKind.RECEIVED_PUBLISH_MANIFEST)):
        (DiscoveryState.READY, FsmAction.NONE),
    (DiscoveryState.ASSISTANT_SEARCH, FsmInput(InputKind.SENT_FIND_ASSISTANT)):
        (DiscoveryState.WAITING_FOR_ASSISTANT_LIST, FsmAction.NONE),
    (DiscoveryState.WAITING_FOR_ASSISTANT_LIST, FsmInput(InputKind.RESEND_TICK)):
        (DiscoveryState.WAITING_FOR_ASSISTANT_LIST, FsmAction.RESEND_FIND_ASSISTANT),
    (DiscoveryState.WAITING_FOR_ASSISTANT_LIST,
     FsmInput(InputKind.RECEIVED_PROPOSE_ASSISTANT, Referral.DIRECT)):
        (DiscoveryState.READY, FsmAction.NONE),
    (DiscoveryState.WAITING_FOR_ASSISTANT_LIST,
     FsmInput(InputKind.RECEIVED_PROPOSE_ASSISTANT, Referral.INDIRECT)):
        (DiscoveryState.ASSISTANT_SEARCH, FsmAction.QUERY_SUGGESTED_AGENTS),
    # Terminal state keeps absorbing resend ticks once the answer arrived.
    (DiscoveryState.READY, FsmInput(InputKind.RESEND_TICK)):
        (DiscoveryState.READY, FsmAction.NONE),
}

_State = Union[ServingState, DemandingState, DiscoveryState]


def _step(table: dict, machine: str, state: _State, inp: FsmInput) -> tuple[_State, FsmAction]:
    result = table.get((state, inp))
    if result is None:
        warnings.warn(
            f"{machine} machine: input {inp} is undefined in state {state.value}; ignored",
            ProtocolWarning,
            stacklevel=3,
        )
        return state, FsmAction.NONE
    return result


def serving_step(state: ServingState, inp: FsmInput) -> tuple[ServingState, FsmAction]:
    """One transition of the serving machine."""
    return _step(_SERVING_TABLE, "serving", state, inp)


def demanding_step(state: DemandingState, inp: FsmInput) -> tuple[DemandingState, FsmAction]:
    """One transition of the demanding machine."""
    return _step(_DEMANDING_TABLE, "demanding", state, inp)


def discovery_step(state: DiscoveryState, inp: FsmInput) -> tuple[DiscoveryState, FsmAction]:
    """One transition of the discovery machine."""
    return _step(_DISCOVERY_TABLE, "discovery", state, inp)


# fold_envelope treats one envelope as one conversational turn: the events
# after the first lookup-starting (or response-carrying) dialog event refine
# that same turn instead of opening new ones.

_SERVING_EVENT_INPUTS = {
    EventType.INVITE: InputKind.RECEIVED_INVITE,
    EventType.UTTERANCE: InputKind.RECEIVED_UTTERANCE,
    EventType.WHISPER: InputKind.RECEIVED_WHISPER,
    EventType.BYE: InputKind.RECEIVED_BYE,
}

_DEMANDING_EVENT_INPUTS = {
    EventType.UTTERANCE: InputKind.RECEIVED_RESPONSE,
    EventType.WHISPER: InputKind.RECEIVED_RESPONSE,
    EventType.BYE: InputKind.RECEIVED_BYE,
}


def fold_envelope(role: str, state: _State,
                  env: ConversationEnvelope) -> tuple[_State, list[FsmAction]]:
    """Feed an envelope's events through a machine in wire order.

    `role` is "serving" or "demanding". Returns the final state and the
    actions produced, NONE excluded. Discovery-plane events (requestManifest,
    findAssistant, publishManifest, proposeAssistant) are not conversation
    turns and fold to nothing here.

    Dialog events beyond the first that starts a lookup (serving) or lands a
    response (demanding) are context for that same turn, not extra
    transitions: the invite+utterance+whisper envelope yields exactly one
    StartLookup with the whisper attached as refinement.
    """
    if role == "serving":
        step, event_inputs = serving_step, _SERVING_EVENT_INPUTS
        turn_consumed_action: Optional[FsmAction] = FsmAction.START_LOOKUP
        turn_consumed_kind: Optional[InputKind] = None
    elif role == "demanding":
        step, event_inputs = demanding_step, _DEMANDING_EVENT_INPUTS
        turn_consumed_action = None
        turn_consumed_kind = InputKind.RECEIVED_RESPONSE
    else:
        raise ValueError(f"unknown fold role {role!r}")

    actions: list[FsmAction] = []
    turn_open = False
    for event in env.events:
        kind = event_inputs.get(event.event_type)
        if kind is None:
            continue
        if turn_open and kind in (InputKind.RECEIVED_UTTERANCE, InputKind.RECEIVED_WHISPER,
                                  InputKind.RECEIVED_RESPONSE):
            continue
        state, action = step(state, FsmInput(kind))
        if action is not FsmAction.NONE:
            actions.append(action)
        if turn_consumed_action is not None and action is turn_consumed_action:
            turn_open = True
        if turn_consumed_kind is not None and kind is turn_consumed_kind:
            turn_open = True
    return state, actions


def lookup_context(env: ConversationEnvelope) -> tuple[Optional[DialogEvent], list[DialogEvent]]:
    """Split an inbound envelope's dialog events into (primary, refinements).

    The primary is the first utterance or whisper; later ones ride along as
    context for the same lookup (the whisper of an invite+utterance+whisper
    envelope refines the utterance's query).
    """
    primary: Optional[DialogEvent] = None
    refinements: list[DialogEvent] = []
    for event in env.events:
        if event.event_type in (EventType.UTTERANCE, EventType.WHISPER):
            if isinstance(event.payload, DialogEvent):
                if primary is None:
                    primary = event.payload
                else:
                    refinements.append(event.payload)
    return primary, refinements
