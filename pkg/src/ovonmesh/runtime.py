"""Assistant runtime: response backends, agent config, floor management.

An agent's conversational behavior is a pluggable backend (echo, scripted
replay, ordered rules) behind one deterministic interface. A mediator agent
additionally owns the human-facing floor: it routes matching requests to
specialist agents by inviting them into the conversation, relays their
replies, and takes the floor back when the specialist says bye.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Union

import yaml

from .envelope import (
    AssistantManifest,
    Clock,
    ConversationEnvelope,
    DialogEvent,
    EnvelopeEvent,
    EventType,
    ProtocolError,
    ResponseCode,
    build_event,
    extract_text,
    make_dialog_event,
    make_envelope,
    utc_now_iso,
)
from .fsm import DemandingState, FsmInput, InputKind, demanding_step, fold_envelope
from .registry import PeerRegistry

# One conversational exchange as backends see it.
HistoryItem = tuple[str, str, str]  # (speaker_id, text, "utterance" | "whisper")


class ConfigError(ProtocolError):
    """Agent configuration file is unusable."""


class BackendFailure(ProtocolError):
    """Backend could not produce a reply; feeds the serving machine's LookupFailed."""


@dataclass(frozen=True)
class BackendResult:
    """Outcome of one backend consultation.

    Exactly one of `text` and `failure` is set. `capability` asks the hosting
    mediator to delegate to a specialist for the named capability; `bye`
    closes the backend's participation after `text` (which may be empty for a
    silent leave).
    """

    text: Optional[str] = None
    failure: Optional[str] = None
    capability: Optional[str] = None
    bye: bool = False

    @classmethod
    def reply(cls, text: str, bye: bool = False) -> "BackendResult":
        return cls(text=text, bye=bye)

    @classmethod
    def failed(cls, reason: str) -> "BackendResult":
        return cls(failure=reason)

    @classmethod
    def delegate(cls, capability: str) -> "BackendResult":
        return cls(capability=capability)

    @property
    def ok(self) -> bool:
        return self.failure is None


class Backend:
    """Deterministic text-in text-out responder.

    `history` is the conversation so far, oldest first, including the
    agent's own prior replies; `current` is the text being answered;
    `whisper_context` carries any behind-the-scenes refinement that arrived
    with it.
    """

    name = "backend"

    def respond(self, history: list[HistoryItem], current: str,
                whisper_context: Optional[str] = None) -> BackendResult:
        raise NotImplementedError

    def replies_given(self, history: list[HistoryItem], speaker_id: str) -> int:
        return sum(1 for speaker, _, _ in history if speaker == speaker_id)


class EchoBackend(Backend):
    """Repeats the input; the no-configuration baseline."""

    name = "echo"

    def respond(self, history: list[HistoryItem], current: str,
                whisper_context: Optional[str] = None) -> BackendResult:
        return BackendResult.reply(current)


@dataclass(frozen=True)
class ScriptTurn:
    reply: str
    expect: Optional[str] = None
    bye: bool = False
    capability: Optional[str] = None


class ScriptedBackend(Backend):
    """Replays a fixed list of turns in order.

    Position in the script is recomputed from the history (the count of this
    agent's own prior lines), so the backend holds no state and identical
    histories always produce identical replies. A turn with an `expect`
    substring fails loudly when the inbound text does not contain it; the
    turn after the last one fails as exhausted.
    """

    def __init__(self, turns: list[ScriptTurn], speaker_id: str):
        self.turns = list(turns)
        self.name = speaker_id
        self.speaker_id = speaker_id

    def respond(self, history: list[HistoryItem], current: str,
                whisper_context: Optional[str] = None) -> BackendResult:
        index = self.replies_given(history, self.speaker_id)
        if index >= len(self.turns):
            return BackendResult.failed("script exhausted")
        turn = self.turns[index]
        if turn.expect is not None and turn.expect.lower() not in current.lower():
            return BackendResult.failed(
                f"script expected {turn.expect!r} in turn {index}, got {current!r}")
        if turn.capability:
            return BackendResult.delegate(turn.capability)
        return BackendResult.reply(turn.reply, bye=turn.bye)


@dataclass(frozen=True)
class Rule:
    """First-match-wins response rule.

    `when` lists case-insensitive substrings, any of which fires the rule;
    a rule with `when_first` fires only on the agent's first turn of the
    conversation. A rule with neither condition always fires.
    """

    reply: str = ""
    when: tuple[str, ...] = ()
    when_first: bool = False
    bye: bool = False
    capability: Optional[str] = None


class RuleBackend(Backend):
    def __init__(self, rules: list[Rule], speaker_id: str):
        self.rules = list(rules)
        self.name = speaker_id
        self.speaker_id = speaker_id

    def respond(self, history: list[HistoryItem], current: str,
                whisper_context: Optional[str] = None) -> BackendResult:
        first_turn = self.replies_given(history, self.speaker_id) == 0
        haystack = current.lower()
        if whisper_context:
            haystack += "\n" + whisper_context.lower()
        for rule in self.rules:
            if rule.when_first and not first_turn:
                continue
            if rule.when and not any(w.lower() in haystack for w in rule.when):
                continue
            if rule.capability:
                return BackendResult.delegate(rule.capability)
            return BackendResult.reply(rule.reply, bye=rule.bye)
        return BackendResult.failed(f"no rule matched {current!r}")


def _load_structured(path: Path) -> object:
    raw = path.read_text(encoding="utf-8")
    if path.suffix in (".yaml", ".yml"):
        return yaml.safe_load(raw)
    return json.loads(raw)


def load_script(path: Union[str, Path], speaker_id: str) -> ScriptedBackend:
    data = _load_structured(Path(path))
    if not isinstance(data, list):
        raise ConfigError(f"{path}: script file must be a list of turns")
    turns = [
        ScriptTurn(
            reply=item.get("reply", ""),
            expect=item.get("expect"),
            bye=item.get("then") == "bye",
            capability=item.get("delegate"),
        )
        for item in data
    ]
    return ScriptedBackend(turns, speaker_id)


def load_rules(path: Union[str, Path], speaker_id: str) -> RuleBackend:
    data = _load_structured(Path(path))
    if not isinstance(data, list):
        raise ConfigError(f"{path}: rules file must be a list of rules")
    rules = [
        Rule(
            reply=item.get("reply", ""),
            when=tuple(item.get("when", ())),
            when_first=bool(item.get("when_first", False)),
            bye=item.get("then") == "bye",
            capability=item.get("delegate"),
        )
        for item in data
    ]
    return RuleBackend(rules, speaker_id)


@dataclass
class Route:
    """One delegation rule of a mediator.

    A request whose text contains any keyword (as a whole word) is handed to
    the specialist at `url`, or to the agent named `agent` (resolved to a URL
    by the host process), or to whatever a discovery registry at `via`
    proposes. `announce` is spoken by the mediator before connecting;
    `farewell` after the specialist leaves, before the standard greeting.
    `relay_prefix` is prepended to the first relayed specialist reply;
    `relay_as_self` makes the mediator speak relayed replies in its own voice.
    """

    keywords: list[str]
    url: Optional[str] = None
    agent: Optional[str] = None
    via: Optional[str] = None
    name: Optional[str] = None
    capability: Optional[str] = None
    announce: Optional[str] = None
    farewell: Optional[str] = None
    relay_prefix: Optional[str] = None
    relay_as_self: bool = False

    def matches(self, text: str) -> bool:
        return any(
            re.search(rf"\b{re.escape(k.lower())}\b", text.lower())
            for k in self.keywords)


@dataclass
class AgentConfig:
    """Everything needed to run one agent."""

    name: str
    endpoint: str = ""
    role: str = "specialist"  # mediator | specialist | registry
    backend: str = "echo"     # echo | scripted:<path> | rules:<path>
    routes: list[Route] = field(default_factory=list)
    manifest: Optional[AssistantManifest] = None
    peers: list[PeerRegistry] = field(default_factory=list)
    greeting: Optional[str] = None
    welcome: Optional[str] = None
    apology: str = "Sorry, I could not reach the specialist for that request."
    max_delegation_depth: int = 1
    base_dir: Path = field(default_factory=Path)

    VALID_ROLES = ("mediator", "specialist", "registry")

    @classmethod
    def from_dict(cls, data: dict, base_dir: Union[str, Path] = ".") -> "AgentConfig":
        if "name" not in data:
            raise ConfigError("agent config requires a name")
        role = data.get("role", "specialist")
        if role not in cls.VALID_ROLES:
            raise ConfigError(f"unknown role {role!r}; expected one of {cls.VALID_ROLES}")
        routes = [
            Route(
                keywords=list(r.get("keywords", ())),
                url=r.get("url"),
                agent=r.get("agent"),
                via=r.get("via"),
                name=r.get("name"),
                capability=r.get("capability"),
                announce=r.get("announce"),
                farewell=r.get("farewell"),
                relay_prefix=r.get("relay_prefix"),
                relay_as_self=bool(r.get("relay_as_self", False)),
            )
            for r in data.get("routes", ())
        ]
        manifest = None
        if "manifest" in data:
            manifest = AssistantManifest.from_wire(data["manifest"], "config.manifest")
        peers = [PeerRegistry(name=p["name"], url=p["url"])
                 for p in data.get("peers", ())]
        return cls(
            name=data["name"],
            endpoint=data.get("endpoint", ""),
            role=role,
            backend=data.get("backend", "echo"),
            routes=routes,
            manifest=manifest,
            peers=peers,
            greeting=data.get("greeting"),
            welcome=data.get("welcome"),
            apology=data.get("apology", cls.apology),
            max_delegation_depth=int(data.get("max_delegation_depth", 1)),
            base_dir=Path(base_dir),
        )

    def build_backend(self) -> Backend:
        spec = self.backend
        if spec == "echo":
            return EchoBackend()
        if spec.startswith("scripted:"):
            return load_script(self.base_dir / spec.split(":", 1)[1], self.name)
        if spec.startswith("rules:"):
            return load_rules(self.base_dir / spec.split(":", 1)[1], self.name)
        raise ConfigError(f"unknown backend spec {spec!r}")

    def default_manifest(self) -> AssistantManifest:
        if self.manifest is not None:
            return self.manifest
        from .envelope import Capability, Identification
        return AssistantManifest(
            identification=Identification(
                service_endpoint=self.endpoint or f"loop://{self.name}",
                conversational_name=self.name,
                role=self.role,
            ),
            capabilities=[Capability(keywords=[self.name.lower()])],
        )


def load_agent_config(path: Union[str, Path]) -> AgentConfig:
    path = Path(path)
    data = _load_structured(path)
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: agent config must be a mapping")
    return AgentConfig.from_dict(data, base_dir=path.parent)


SendFn = Callable[[str, ConversationEnvelope], ConversationEnvelope]


class DelegateUnreachableError(ProtocolError):
    """The specialist leg failed at the transport level."""


@dataclass
class DelegationLeg:
    """Live link from a mediator to one invited specialist.

    The mediator is the demanding side of this leg, so the leg carries its
    own demanding-machine state, advanced on every send and reply.
    """

    url: str
    name: str
    route: Route
    relays_done: int = 0
    state: DemandingState = DemandingState.IDLE

    def note_sent_invite(self) -> None:
        self.state, _ = demanding_step(self.state, FsmInput(InputKind.SENT_INVITE))

    def note_sent_turn(self) -> None:
        self.state, _ = demanding_step(
            self.state, FsmInput(InputKind.SENT_UTTERANCE_OR_WHISPER))

    def note_reply(self, reply: ConversationEnvelope) -> None:
        self.state, _ = fold_envelope("demanding", self.state, reply)


class MediatorSession:
    """Per-conversation floor management for one mediator agent.

    The session is the demanding side toward its specialists and composes the
    serving-side response envelopes for the human-facing leg. Turns within a
    session must be driven serially; the hosting service guarantees that.
    """

    def __init__(self, config: AgentConfig, conversation_id: str, send: SendFn,
                 backend: Backend, clock: Optional[Clock] = None,
                 resolve_agent: Optional[Callable[[str], Optional[str]]] = None,
                 discover: Optional[Callable[[str, str, str], Optional[tuple[str, str]]]] = None):
        self.config = config
        self.conversation_id = conversation_id
        self.send = send
        self.backend = backend
        self.clock = clock or utc_now_iso
        self.resolve_agent = resolve_agent or (lambda name: None)
        # discover(via_url, query, conversation_id) -> (specialist_url, name)
        self.discover = discover
        self.delegates: list[DelegationLeg] = []
        self.history: list[HistoryItem] = []

    @property
    def floor_delegated(self) -> bool:
        return bool(self.delegates)

    def _say(self, text: str, speaker: Optional[str] = None,
             kind: EventType = EventType.UTTERANCE) -> EnvelopeEvent:
        return build_event(
            kind,
            make_dialog_event(speaker or self.config.name, text),
            clock=self.clock)

    def handle_turn(self, text: str, speaker_id: str,
                    whisper_context: Optional[str] = None) -> list[EnvelopeEvent]:
        """Answer one human-side turn; returns the response envelope's events.

        Raises BackendFailure when no reply can be produced, which the host
        maps to the serving machine's LookupFailed (bye per the failure path).
        """
        self.history.append((speaker_id, text, "utterance"))
        if self.floor_delegated:
            events = self._forward_to_delegate(text, speaker_id, whisper_context)
        else:
            events = self._answer_with_floor(text, speaker_id, whisper_context)
        for event in events:
            if event.event_type is EventType.UTTERANCE and isinstance(event.payload,
                                                                      DialogEvent):
                self.history.append((event.payload.speaker_id,
                                     extract_text(event.payload), "utterance"))
        return events

    def handle_invite_only(self) -> list[EnvelopeEvent]:
        """Greet a joining user when there is nothing to answer yet."""
        text = self.config.welcome or self.config.greeting
        if not text:
            return []
        self.history.append((self.config.name, text, "utterance"))
        return [self._say(text)]

    def _answer_with_floor(self, text: str, speaker_id: str,
                           whisper_context: Optional[str]) -> list[EnvelopeEvent]:
        route = next((r for r in self.config.routes if r.matches(text)), None)
        if route is not None:
            return self._open_delegation(route, text, speaker_id, whisper_context)
        result = self.backend.respond(self.history[:-1], text, whisper_context)
        if result.capability:
            route = self._route_for_capability(result.capability)
            if route is None:
                raise BackendFailure(
                    f"backend asked for unknown capability {result.capability!r}")
            return self._open_delegation(route, text, speaker_id, whisper_context)
        if not result.ok:
            raise BackendFailure(result.failure or "lookup failed")
        events = [self._say(result.text)] if result.text else []
        if result.bye:
            events.append(build_event(
                EventType.BYE,
                make_dialog_event(self.config.name, "leaving the conversation"),
                clock=self.clock))
        if not events:
            raise BackendFailure("backend produced neither text nor bye")
        return events

    def _route_for_capability(self, capability: str) -> Optional[Route]:
        for route in self.config.routes:
            if route.capability == capability or capability in route.keywords:
                return route
        return None

    def _resolve_route_target(self, route: Route, text: str) -> tuple[str, str]:
        """Route -> (specialist url, conversational name)."""
        if route.url:
            return route.url, route.name or route.agent or route.url
        if route.agent:
            url = self.resolve_agent(route.agent)
            if not url:
                raise DelegateUnreachableError(f"no known endpoint for agent {route.agent!r}")
            return url, route.name or route.agent
        if route.via:
            if self.discover is None:
                raise DelegateUnreachableError("route needs discovery, none configured")
            via_url = self.resolve_agent(route.via) or route.via
            found = self.discover(via_url, text, self.conversation_id)
            if found is None:
                raise DelegateUnreachableError(f"discovery via {route.via!r} found no specialist")
            return found
        raise ConfigError(f"route {route.keywords} names no url, agent, or via registry")

    def _open_delegation(self, route: Route, text: str, speaker_id: str,
                         whisper_context: Optional[str]) -> list[EnvelopeEvent]:
        if len(self.delegates) >= self.config.max_delegation_depth:
            raise BackendFailure("delegation depth exceeded")
        events: list[EnvelopeEvent] = []
        if route.announce:
            events.append(self._say(route.announce))
        try:
            url, name = self._resolve_route_target(route, text)
        except DelegateUnreachableError:
            return events + self._apologize()

        leg = DelegationLeg(url=url, name=name, route=route)
        outbound = make_envelope(
            conversation_id=self.conversation_id,
            sender_from=self.config.name,
            to=name,
            events=[
                build_event(EventType.INVITE, url, clock=self.clock),
                build_event(
                    EventType.UTTERANCE,
                    make_dialog_event(speaker_id, text), clock=self.clock),
            ],
        )
        if whisper_context:
            outbound.events.append(build_event(
                EventType.WHISPER, make_dialog_event(speaker_id, whisper_context),
                clock=self.clock))
        leg.note_sent_invite()
        leg.note_sent_turn()
        try:
            reply = self.send(url, outbound)
        except ProtocolError:
            return events + self._apologize()
        leg.note_reply(reply)
        self.delegates.append(leg)
        events.append(build_event(EventType.INVITE, url, to=name, clock=self.clock))
        events.extend(self._relay(reply, leg))
        return events

    def _forward_to_delegate(self, text: str, speaker_id: str,
                             whisper_context: Optional[str]) -> list[EnvelopeEvent]:
        leg = self.delegates[-1]
        outbound = make_envelope(
            conversation_id=self.conversation_id,
            sender_from=self.config.name,
            to=leg.name,
            events=[build_event(
                EventType.UTTERANCE,
                make_dialog_event(speaker_id, text), clock=self.clock)],
        )
        if whisper_context:
            outbound.events.append(build_event(
                EventType.WHISPER, make_dialog_event(speaker_id, whisper_context),
                clock=self.clock))
        leg.note_sent_turn()
        try:
            reply = self.send(leg.url, outbound)
        except ProtocolError:
            self.delegates.pop()
            return self._apologize()
        leg.note_reply(reply)
        return self._relay(reply, leg)

    def _apologize(self) -> list[EnvelopeEvent]:
        return [self._say(self.config.apology)]

    def _relay(self, reply: ConversationEnvelope, leg: DelegationLeg) -> list[EnvelopeEvent]:
        """Turn a specialist's response envelope into human-facing events."""
        events: list[EnvelopeEvent] = []
        specialist_left = False
        bye_reason: Optional[DialogEvent] = None
        for event in reply.events:
            if event.event_type in (EventType.UTTERANCE, EventType.WHISPER) and \
                    isinstance(event.payload, DialogEvent):
                text = extract_text(event.payload)
                if not text:
                    continue
                speaker = event.payload.speaker_id or leg.name
                if leg.route.relay_as_self:
                    prefix = leg.route.relay_prefix if leg.relays_done == 0 else None
                    events.append(self._say((prefix or "") + text, kind=event.event_type))
                else:
                    prefix = leg.route.relay_prefix if leg.relays_done == 0 else None
                    events.append(self._say((prefix or "") + text, speaker=speaker,
                                            kind=event.event_type))
                leg.relays_done += 1
            elif event.event_type is EventType.BYE:
                specialist_left = True
                if isinstance(event.payload, DialogEvent):
                    bye_reason = event.payload
        if specialist_left:
            self.delegates.remove(leg)
            reason = bye_reason or make_dialog_event(leg.name, "leaving the conversation")
            if not reason.speaker_id:
                reason.speaker_id = leg.name
            events.append(build_event(EventType.BYE, reason, clock=self.clock))
            if leg.route.farewell:
                events.append(self._say(leg.route.farewell))
            if self.config.greeting:
                events.append(self._say(self.config.greeting))
        return events


def error_response(env: ConversationEnvelope, code: int, description: str,
                   sender: str, clock: Optional[Clock] = None) -> ConversationEnvelope:
    """Protocol-level error envelope: the code rides inside, as a whisper
    explains; HTTP still says 200 upstream."""
    whisper = build_event(
        EventType.WHISPER, make_dialog_event(sender, description), clock=clock)
    return make_envelope(
        conversation_id=env.conversation_id,
        sender_from=sender,
        to=env.sender_from,
        events=[whisper],
        response_code=ResponseCode(code=code, description=description),
    )
