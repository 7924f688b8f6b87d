"""State machine tests.

The expected transition tables are restated here as plain string literals,
written out independently of the implementation's dict, so the exhaustive
conformance sweep cannot inherit a bug from the code under test.
"""
from __future__ import annotations

import json
import warnings
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ovonmesh.envelope import EventType, build_event, make_dialog_event, make_envelope, parse_envelope
from ovonmesh.fsm import (
    DemandingState,
    DiscoveryState,
    FsmAction,
    FsmInput,
    InputKind,
    ProtocolWarning,
    Referral,
    ServingState,
    all_inputs,
    demanding_step,
    discovery_step,
    fold_envelope,
    lookup_context,
    serving_step,
)

CORPUS = Path(__file__).resolve().parent.parent / "corpus"

# (state, input) -> (state', action); every pair absent from these tables
# must leave the state untouched and raise ProtocolWarning.

EXPECTED_SERVING = {
    ("Idle", "ReceivedInvite"): ("Ready", "None"),
    ("Ready", "ReceivedUtterance"): ("SearchingForResponse", "StartLookup"),
    ("Ready", "ReceivedWhisper"): ("SearchingForResponse", "StartLookup"),
    ("SearchingForResponse", "LookupSucceeded"): ("SendingResponse", "EmitResponseEnvelope"),
    ("SearchingForResponse", "LookupFailed"): ("Idle", "EmitBye"),
    ("SendingResponse", "SentUtteranceOrWhisper"): ("Ready", "None"),
    ("Ready", "ReceivedBye"): ("Idle", "None"),
    ("Ready", "InactivityTimeout"): ("Idle", "None"),
}

EXPECTED_DEMANDING = {
    ("Idle", "SentInvite"): ("Ready", "None"),
    ("Ready", "SentUtteranceOrWhisper"): ("Ready", "None"),
    ("Ready", "ReceivedResponse"): ("ConsumingResponse", "None"),
    ("ConsumingResponse", "SentUtteranceOrWhisper"): ("Ready", "None"),
    ("ConsumingResponse", "ReceivedBye"): ("Idle", "None"),
}

EXPECTED_DISCOVERY = {
    ("CapabilitySearch", "SentRequestManifest"): ("WaitingForManifest", "None"),
    ("WaitingForManifest", "ResendTick"): ("WaitingForManifest", "ResendRequestManifest"),
    ("WaitingForManifest", "ReceivedPublishManifest"): ("Ready", "None"),
    ("AssistantSearch", "SentFindAssistant"): ("WaitingForAssistantList", "None"),
    ("WaitingForAssistantList", "ResendTick"): ("WaitingForAssistantList", "ResendFindAssistant"),
    ("WaitingForAssistantList", "ReceivedProposeAssistant(direct)"): ("Ready", "None"),
    ("WaitingForAssistantList", "ReceivedProposeAssistant(indirect)"):
        ("AssistantSearch", "QuerySuggestedAgents"),
    ("Ready", "ResendTick"): ("Ready", "None"),
}

MACHINES = [
    (ServingState, serving_step, EXPECTED_SERVING),
    (DemandingState, demanding_step, EXPECTED_DEMANDING),
    (DiscoveryState, discovery_step, EXPECTED_DISCOVERY),
]


def sweep(states, step, expected):
    """Check every (state, input) pair against the literal table."""
    for state in states:
        for inp in all_inputs():
            key = (state.value, str(inp))
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always")
                new_state, action = step(state, inp)
            if key in expected:
                want_state, want_action = expected[key]
                assert (new_state.value, action.value) == (want_state, want_action), key
                assert not caught, f"defined pair {key} must not warn"
            else:
                assert new_state is state, f"undefined pair {key} changed state"
                assert action is FsmAction.NONE
                assert len(caught) == 1 and issubclass(caught[0].category, ProtocolWarning), key


class TestConformance:
    def test_all_inputs_enumerates_16(self):
        inputs = all_inputs()
        assert len(inputs) == 16
        assert len(set(inputs)) == 16

    @pytest.mark.parametrize("states,step,expected", MACHINES,
                             ids=["serving", "demanding", "discovery"])
    def test_exhaustive_sweep(self, states, step, expected):
        sweep(states, step, expected)

    def test_input_qualifier_rules(self):
        with pytest.raises(ValueError):
            FsmInput(InputKind.RECEIVED_PROPOSE_ASSISTANT)
        with pytest.raises(ValueError):
            FsmInput(InputKind.RECEIVED_BYE, Referral.DIRECT)


class TestServingPaths:
    def test_success_loop(self):
        # Idle -> Ready -> Searching -> Sending -> Ready -> Idle
        path = [
            (InputKind.RECEIVED_INVITE, ServingState.READY),
            (InputKind.RECEIVED_UTTERANCE, ServingState.SEARCHING_FOR_RESPONSE),
            (InputKind.LOOKUP_SUCCEEDED, ServingState.SENDING_RESPONSE),
            (InputKind.SENT_UTTERANCE_OR_WHISPER, ServingState.READY),
            (InputKind.RECEIVED_BYE, ServingState.IDLE),
        ]
        state = ServingState.IDLE
        for kind, want in path:
            state, _ = serving_step(state, FsmInput(kind))
            assert state is want

    def test_reachability_emits_one_response(self):
        # The transient SendingResponse resolves inside the same processing
        # step: the driver reports the send as soon as the emit action fires.
        state = ServingState.IDLE
        emitted = 0
        for kind in (InputKind.RECEIVED_INVITE, InputKind.RECEIVED_UTTERANCE,
                     InputKind.LOOKUP_SUCCEEDED):
            state, action = serving_step(state, FsmInput(kind))
            if action is FsmAction.EMIT_RESPONSE_ENVELOPE:
                emitted += 1
                state, _ = serving_step(state, FsmInput(InputKind.SENT_UTTERANCE_OR_WHISPER))
        assert state is ServingState.READY
        assert emitted == 1

    def test_failure_path_exact(self):
        state, action = serving_step(ServingState.SEARCHING_FOR_RESPONSE,
                                     FsmInput(InputKind.LOOKUP_FAILED))
        assert (state, action) == (ServingState.IDLE, FsmAction.EMIT_BYE)

    def test_every_state_reaches_idle_within_two_inputs(self):
        escape = {
            ServingState.IDLE: [],
            ServingState.READY: [InputKind.RECEIVED_BYE],
            ServingState.SEARCHING_FOR_RESPONSE: [InputKind.LOOKUP_FAILED],
            ServingState.SENDING_RESPONSE: [InputKind.SENT_UTTERANCE_OR_WHISPER,
                                            InputKind.RECEIVED_BYE],
        }
        for start, inputs in escape.items():
            assert len(inputs) <= 2
            state = start
            with warnings.catch_warnings():
                warnings.simplefilter("error")  # escape route must be fully defined
                for kind in inputs:
                    state, _ = serving_step(state, FsmInput(kind))
            assert state is ServingState.IDLE

    def test_inactivity_timeout(self):
        state, action = serving_step(ServingState.READY, FsmInput(InputKind.INACTIVITY_TIMEOUT))
        assert (state, action) == (ServingState.IDLE, FsmAction.NONE)

    def test_whisper_alone_starts_lookup(self):
        state, action = serving_step(ServingState.READY, FsmInput(InputKind.RECEIVED_WHISPER))
        assert (state, action) == (ServingState.SEARCHING_FOR_RESPONSE, FsmAction.START_LOOKUP)


class TestDemandingPaths:
    def test_request_response_loop(self):
        state = DemandingState.IDLE
        state, _ = demanding_step(state, FsmInput(InputKind.SENT_INVITE))
        state, _ = demanding_step(state, FsmInput(InputKind.SENT_UTTERANCE_OR_WHISPER))
        assert state is DemandingState.READY
        state, _ = demanding_step(state, FsmInput(InputKind.RECEIVED_RESPONSE))
        assert state is DemandingState.CONSUMING_RESPONSE
        state, _ = demanding_step(state, FsmInput(InputKind.SENT_UTTERANCE_OR_WHISPER))
        assert state is DemandingState.READY

    def test_bye_only_lands_from_consuming(self):
        state, _ = demanding_step(DemandingState.CONSUMING_RESPONSE,
                                  FsmInput(InputKind.RECEIVED_BYE))
        assert state is DemandingState.IDLE
        with pytest.warns(ProtocolWarning):
            state, action = demanding_step(DemandingState.READY,
                                           FsmInput(InputKind.RECEIVED_BYE))
        assert (state, action) == (DemandingState.READY, FsmAction.NONE)


class TestDiscoveryPaths:
    def test_manifest_wait_and_resend(self):
        state = DiscoveryState.CAPABILITY_SEARCH
        state, _ = discovery_step(state, FsmInput(InputKind.SENT_REQUEST_MANIFEST))
        assert state is DiscoveryState.WAITING_FOR_MANIFEST
        state, action = discovery_step(state, FsmInput(InputKind.RESEND_TICK))
        assert (state, action) == (DiscoveryState.WAITING_FOR_MANIFEST,
                                   FsmAction.RESEND_REQUEST_MANIFEST)
        state, _ = discovery_step(state, FsmInput(InputKind.RECEIVED_PUBLISH_MANIFEST))
        assert state is DiscoveryState.READY

    def test_indirect_referral_loops_back_to_search(self):
        state = DiscoveryState.ASSISTANT_SEARCH
        state, _ = discovery_step(state, FsmInput(InputKind.SENT_FIND_ASSISTANT))
        state, action = discovery_step(
            state, FsmInput(InputKind.RECEIVED_PROPOSE_ASSISTANT, Referral.INDIRECT))
        assert (state, action) == (DiscoveryState.ASSISTANT_SEARCH,
                                   FsmAction.QUERY_SUGGESTED_AGENTS)
        # Second round lands a direct answer.
        state, _ = discovery_step(state, FsmInput(InputKind.SENT_FIND_ASSISTANT))
        state, action = discovery_step(
            state, FsmInput(InputKind.RECEIVED_PROPOSE_ASSISTANT, Referral.DIRECT))
        assert (state, action) == (DiscoveryState.READY, FsmAction.NONE)

    def test_ready_absorbs_ticks_silently(self):
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            state, action = discovery_step(DiscoveryState.READY, FsmInput(InputKind.RESEND_TICK))
        assert (state, action) == (DiscoveryState.READY, FsmAction.NONE)


class TestProperties:
    @given(state=st.sampled_from(list(ServingState)), inp=st.sampled_from(all_inputs()))
    @settings(max_examples=200, deadline=None)
    def test_serving_deterministic_and_total(self, state, inp):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            first = serving_step(state, inp)
            second = serving_step(state, inp)
        assert first == second
        assert isinstance(first[0], ServingState)
        assert isinstance(first[1], FsmAction)

    @given(state=st.sampled_from(list(DemandingState)), inp=st.sampled_from(all_inputs()))
    @settings(max_examples=200, deadline=None)
    def test_demanding_deterministic_and_total(self, state, inp):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            assert demanding_step(state, inp) == demanding_step(state, inp)

    @given(state=st.sampled_from(list(DiscoveryState)), inp=st.sampled_from(all_inputs()))
    @settings(max_examples=200, deadline=None)
    def test_discovery_deterministic_and_total(self, state, inp):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            assert discovery_step(state, inp) == discovery_step(state, inp)

    @given(state=st.sampled_from(list(ServingState)),
           inputs=st.lists(st.sampled_from(all_inputs()), max_size=12))
    @settings(max_examples=200, deadline=None)
    def test_serving_never_leaves_enum(self, state, inputs):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            for inp in inputs:
                state, _ = serving_step(state, inp)
        assert state in set(ServingState)


class TestFoldEnvelope:
    def listing2(self):
        return parse_envelope((CORPUS / "listing2.json").read_text(encoding="utf-8"))

    def test_listing2_from_idle(self):
        state, actions = fold_envelope("serving", ServingState.IDLE, self.listing2())
        assert state is ServingState.SEARCHING_FOR_RESPONSE
        assert actions == [FsmAction.START_LOOKUP]

    def test_listing2_lookup_context_split(self):
        primary, refinements = lookup_context(self.listing2())
        assert primary.speaker_id == "humanOrAssistantID"
        assert len(refinements) == 1
        assert refinements[0].features["text"].tokens[0].value.startswith("In particular")

    def test_bye_only_from_ready(self):
        env = make_envelope("c1", "peer", [build_event(EventType.BYE)])
        state, actions = fold_envelope("serving", ServingState.READY, env)
        assert (state, actions) == (ServingState.IDLE, [])

    def test_utterance_in_idle_warns_and_stays(self):
        env = make_envelope("c1", "peer", [
            build_event(EventType.UTTERANCE, make_dialog_event("s", "hi"))])
        with pytest.warns(ProtocolWarning):
            state, actions = fold_envelope("serving", ServingState.IDLE, env)
        assert (state, actions) == (ServingState.IDLE, [])

    def test_discovery_plane_events_do_not_fold(self):
        env = make_envelope("c1", "peer", [build_event(EventType.REQUEST_MANIFEST)])
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            state, actions = fold_envelope("serving", ServingState.IDLE, env)
        assert (state, actions) == (ServingState.IDLE, [])

    def test_demanding_multi_utterance_is_one_response(self):
        env = make_envelope("c1", "peer", [
            build_event(EventType.UTTERANCE, make_dialog_event("m", "connecting you")),
            build_event(EventType.UTTERANCE, make_dialog_event("p", "hello there")),
        ])
        with warnings.catch_warnings():
            warnings.simplefilter("error")  # the second utterance must not re-step
            state, actions = fold_envelope("demanding", DemandingState.READY, env)
        assert state is DemandingState.CONSUMING_RESPONSE
        assert actions == []

    def test_demanding_relay_then_bye_returns_to_idle(self):
        env = make_envelope("c1", "peer", [
            build_event(EventType.UTTERANCE, make_dialog_event("p", "done, goodbye")),
            build_event(EventType.BYE),
        ])
        state, actions = fold_envelope("demanding", DemandingState.READY, env)
        assert (state, actions) == (DemandingState.IDLE, [])

    def test_unknown_role_rejected(self):
        with pytest.raises(ValueError):
            fold_envelope("observing", ServingState.IDLE, self.listing2())


def test_fold_matches_manual_replay_of_listing2():
    """Cross-check fold_envelope against stepping by hand over the wire JSON."""
    raw = json.loads((CORPUS / "listing2.json").read_text(encoding="utf-8"))
    kinds = []
    lookup_started = False
    for event in raw["ovon"]["events"]:
        name = event["eventType"]
        if name == "invite":
            kinds.append(InputKind.RECEIVED_INVITE)
        elif name in ("utterance", "whisper") and not lookup_started:
            kinds.append(InputKind.RECEIVED_UTTERANCE if name == "utterance"
                         else InputKind.RECEIVED_WHISPER)
            lookup_started = True
    state = ServingState.IDLE
    manual_actions = []
    for kind in kinds:
        state, action = serving_step(state, FsmInput(kind))
        if action is not FsmAction.NONE:
            manual_actions.append(action)
    env = parse_envelope((CORPUS / "listing2.json").read_text(encoding="utf-8"))
    assert fold_envelope("serving", ServingState.IDLE, env) == (state, manual_actions)
