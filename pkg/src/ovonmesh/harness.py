"""Scenario harness: declarative multi-agent replays with sequence assertions.

A scenario file names the agents, the human turns, and a list of sequence
expectations. The harness runs everything on an in-process loopback mesh,
merges the per-hop transcript records by their shared sequence counter, and
evaluates the expectations against the raw JSONL entries, so every verdict
can be reproduced by independently scanning the transcript file.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import yaml

from .envelope import Clock, ProtocolError, utc_now_iso
from .runtime import AgentConfig, ConfigError, _load_structured
from .transport import ClientSession, LoopbackNetwork, TranscriptWriter, read_transcript

FROZEN_CLOCK_TS = "2024-01-01T00:00:00.000Z"

EXPECTATION_KINDS = ("EventOccurs", "OrderedBefore", "TextContains", "FloorReturnsTo")


class ScenarioSetupFailure(ProtocolError):
    """The scenario could not even start; distinct from expectation failures."""


def _dialog_text(dialog: dict) -> str:
    tokens = ((dialog.get("features") or {}).get("text") or {}).get("tokens") or []
    return " ".join(t.get("value", "") for t in tokens if isinstance(t, dict))


@dataclass(frozen=True)
class Hop:
    """One envelope transfer between two named parties, from the transcript."""

    seq: int
    sender: str
    recipient: str
    envelope: dict

    @property
    def events(self) -> list[dict]:
        return (self.envelope.get("ovon") or {}).get("events") or []


def merge_hops(entries: list[dict], aliases: Optional[dict[str, str]] = None) -> list[Hop]:
    """Collapse transcript entries into one Hop per envelope transfer.

    A transfer both parties logged (sender's `out` immediately followed by the
    receiver's `in` of the same envelope) collapses to one hop; endpoint URLs
    are rewritten to agent names via `aliases` so expectations read naturally.
    """
    aliases = aliases or {}

    def norm(party: str) -> str:
        return aliases.get(party, party)

    entries = sorted(entries, key=lambda e: e.get("seq", 0))
    hops: list[Hop] = []
    i = 0
    while i < len(entries):
        entry = entries[i]
        if entry["direction"] == "out" and i + 1 < len(entries):
            nxt = entries[i + 1]
            if nxt["direction"] == "in" and nxt["envelope"] == entry["envelope"] \
                    and norm(nxt["agent"]) == norm(entry["peer"]):
                hops.append(Hop(entry["seq"], norm(entry["agent"]),
                                norm(entry["peer"]), entry["envelope"]))
                i += 2
                continue
        if entry["direction"] == "in":
            hops.append(Hop(entry["seq"], norm(entry["peer"]),
                            norm(entry["agent"]), entry["envelope"]))
        else:
            hops.append(Hop(entry["seq"], norm(entry["agent"]),
                            norm(entry["peer"]), entry["envelope"]))
        i += 1
    return hops


@dataclass(frozen=True)
class EventPattern:
    """Filter over hops and the events they carry; None fields match anything."""

    from_agent: Optional[str] = None
    to_agent: Optional[str] = None
    event: Optional[str] = None
    speaker: Optional[str] = None
    substring: Optional[str] = None

    @classmethod
    def from_dict(cls, data: dict) -> "EventPattern":
        return cls(
            from_agent=data.get("from"),
            to_agent=data.get("to"),
            event=data.get("event"),
            speaker=data.get("speaker"),
            substring=data.get("substring"),
        )

    def describe(self) -> str:
        parts = []
        if self.event:
            parts.append(self.event)
        if self.from_agent:
            parts.append(f"from {self.from_agent}")
        if self.to_agent:
            parts.append(f"to {self.to_agent}")
        if self.speaker:
            parts.append(f"spoken by {self.speaker}")
        if self.substring:
            parts.append(f"containing {self.substring!r}")
        return " ".join(parts) or "anything"

    def _event_matches(self, event: dict) -> bool:
        if self.event and event.get("eventType") != self.event:
            return False
        if self.speaker or self.substring is not None:
            if self.event is None and event.get("eventType") not in (
                    "utterance", "whisper"):
                return False
            dialog = (event.get("parameters") or {}).get("dialogEvent") or {}
            if self.speaker and dialog.get("speakerId") != self.speaker:
                return False
            if self.substring is not None and \
                    self.substring not in _dialog_text(dialog):
                return False
        return True

    def matching_seqs(self, hops: list[Hop]) -> list[int]:
        out = []
        for hop in hops:
            if self.from_agent and hop.sender != self.from_agent:
                continue
            if self.to_agent and hop.recipient != self.to_agent:
                continue
            if any(self._event_matches(e) for e in hop.events):
                out.append(hop.seq)
        return out


@dataclass(frozen=True)
class Expectation:
    kind: str
    pattern: Optional[EventPattern] = None
    then: Optional[EventPattern] = None   # OrderedBefore only
    agent: Optional[str] = None           # FloorReturnsTo only
    count: Optional[int] = None           # exact matches when given

    @classmethod
    def from_dict(cls, data: dict) -> "Expectation":
        kind = data.get("kind")
        if kind not in EXPECTATION_KINDS:
            raise ScenarioSetupFailure(
                f"unknown expectation kind {kind!r}; expected one of {EXPECTATION_KINDS}")
        if kind == "OrderedBefore":
            if "first" not in data or "then" not in data:
                raise ScenarioSetupFailure("OrderedBefore needs 'first' and 'then'")
            return cls(kind=kind,
                       pattern=EventPattern.from_dict(data["first"]),
                       then=EventPattern.from_dict(data["then"]))
        if kind == "FloorReturnsTo":
            if "agent" not in data:
                raise ScenarioSetupFailure("FloorReturnsTo needs 'agent'")
            return cls(kind=kind, agent=data["agent"], count=data.get("count"))
        pattern = EventPattern.from_dict(data)
        if kind == "TextContains" and pattern.substring is None:
            raise ScenarioSetupFailure("TextContains needs 'substring'")
        return cls(kind=kind, pattern=pattern, count=data.get("count"))

    def describe(self) -> str:
        if self.kind == "OrderedBefore":
            return f"OrderedBefore[{self.pattern.describe()} precedes {self.then.describe()}]"
        if self.kind == "FloorReturnsTo":
            times = f" x{self.count}" if self.count is not None else ""
            return f"FloorReturnsTo[{self.agent}{times}]"
        suffix = f" x{self.count}" if self.count is not None else ""
        return f"{self.kind}[{self.pattern.describe()}{suffix}]"


@dataclass(frozen=True)
class ExpectationResult:
    expectation: Expectation
    passed: bool
    detail: str

    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return f"{verdict}  {self.expectation.describe()}  {self.detail}"


def _check_occurrence(expectation: Expectation, hops: list[Hop]) -> ExpectationResult:
    seqs = expectation.pattern.matching_seqs(hops)
    if expectation.count is not None:
        passed = len(seqs) == expectation.count
        detail = f"matched seq {seqs}" if seqs else "no matches"
        if not passed:
            detail += f" (wanted exactly {expectation.count})"
    else:
        passed = bool(seqs)
        detail = f"matched seq {seqs}" if seqs else "no matches"
    return ExpectationResult(expectation, passed, detail)


def _check_ordered(expectation: Expectation, hops: list[Hop]) -> ExpectationResult:
    first = expectation.pattern.matching_seqs(hops)
    then = expectation.then.matching_seqs(hops)
    if not first or not then:
        missing = []
        if not first:
            missing.append(f"no match for {expectation.pattern.describe()}")
        if not then:
            missing.append(f"no match for {expectation.then.describe()}")
        return ExpectationResult(expectation, False, "; ".join(missing))
    passed = first[0] < then[0]
    return ExpectationResult(
        expectation, passed, f"seq {first[0]} vs seq {then[0]}")


def _check_floor(expectation: Expectation, hops: list[Hop],
                 user: str, gateway: str) -> ExpectationResult:
    """Replay the floor from the user's inbound events: invites hand it to the
    named specialist, a specialist bye hands it back to the gateway."""
    floor = gateway
    returns = 0
    trail = []
    for hop in hops:
        if hop.recipient != user:
            continue
        for event in hop.events:
            kind = event.get("eventType")
            if kind == "invite":
                target = event.get("to") or \
                    ((event.get("parameters") or {}).get("to") or {}).get("url")
                if target:
                    floor = target
                    trail.append((hop.seq, f"-> {target}"))
            elif kind == "bye":
                dialog = (event.get("parameters") or {}).get("dialogEvent") or {}
                speaker = dialog.get("speakerId", "")
                if floor != gateway and (not speaker or speaker != gateway):
                    returns += 1
                floor = gateway
                trail.append((hop.seq, f"-> {gateway}"))
    ok = floor == expectation.agent and returns >= 1
    if expectation.count is not None:
        ok = ok and returns == expectation.count
    detail = f"{returns} return(s), final floor {floor}; trail {trail}"
    return ExpectationResult(expectation, ok, detail)


def evaluate_expectations(expectations: list[Expectation], hops: list[Hop],
                          user: str, gateway: str) -> list[ExpectationResult]:
    results = []
    for expectation in expectations:
        if expectation.kind == "OrderedBefore":
            results.append(_check_ordered(expectation, hops))
        elif expectation.kind == "FloorReturnsTo":
            results.append(_check_floor(expectation, hops, user, gateway))
        else:  # EventOccurs and TextContains both reduce to occurrence checks
            results.append(_check_occurrence(expectation, hops))
    return results


@dataclass(frozen=True)
class ScenarioTurn:
    actor: str
    say: str
    whisper: Optional[str] = None


@dataclass
class ScenarioAgent:
    config: AgentConfig
    manifests: Optional[Path] = None


@dataclass
class ScenarioSpec:
    name: str
    user: str
    gateway: str
    agents: list[ScenarioAgent]
    turns: list[ScenarioTurn]
    expectations: list[Expectation]
    greet: bool = False
    base_dir: Path = field(default_factory=Path)

    def __post_init__(self):
        names = {agent.config.name for agent in self.agents}
        if self.gateway not in names:
            raise ScenarioSetupFailure(
                f"gateway {self.gateway!r} is not one of the agents {sorted(names)}")
        known = names | {self.user}
        for turn in self.turns:
            if turn.actor not in known:
                raise ScenarioSetupFailure(f"turn actor {turn.actor!r} is not defined")
        for expectation in self.expectations:
            for party in self._referenced_parties(expectation):
                if party not in known:
                    raise ScenarioSetupFailure(
                        f"expectation references unknown agent {party!r}")

    @staticmethod
    def _referenced_parties(expectation: Expectation) -> list[str]:
        parties = []
        for pattern in (expectation.pattern, expectation.then):
            if pattern is not None:
                parties.extend(p for p in (pattern.from_agent, pattern.to_agent) if p)
        if expectation.agent:
            parties.append(expectation.agent)
        return parties


def scenario_from_dict(data: dict, base_dir: Union[str, Path] = ".") -> ScenarioSpec:
    base_dir = Path(base_dir)
    try:
        name = data["name"]
        user = data["user"]
        gateway = data["gateway"]
    except KeyError as exc:
        raise ScenarioSetupFailure(f"scenario needs a {exc.args[0]!r} field") from exc
    agents = []
    for raw in data.get("agents", ()):
        raw = dict(raw)
        manifests = raw.pop("manifests", None)
        try:
            config = AgentConfig.from_dict(raw, base_dir=base_dir)
        except ConfigError as exc:
            raise ScenarioSetupFailure(str(exc)) from exc
        agents.append(ScenarioAgent(
            config=config,
            manifests=base_dir / manifests if manifests else None))
    turns = [ScenarioTurn(actor=t.get("actor", user), say=t["say"],
                          whisper=t.get("whisper"))
             for t in data.get("turns", ())]
    expectations = [Expectation.from_dict(e) for e in data.get("expectations", ())]
    return ScenarioSpec(name=name, user=user, gateway=gateway, agents=agents,
                        turns=turns, expectations=expectations,
                        greet=bool(data.get("greet", False)), base_dir=base_dir)


def load_scenario(path: Union[str, Path]) -> ScenarioSpec:
    path = Path(path)
    data = _load_structured(path)
    if not isinstance(data, dict):
        raise ScenarioSetupFailure(f"{path}: scenario file must be a mapping")
    return scenario_from_dict(data, base_dir=path.parent)


@dataclass
class ScenarioReport:
    scenario: str
    conversation_id: str
    transcript_path: str
    results: list[ExpectationResult]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    @property
    def failures(self) -> list[ExpectationResult]:
        return [r for r in self.results if not r.passed]

    def lines(self) -> list[str]:
        out = [r.line() for r in self.results]
        verdict = "passed" if self.passed else "FAILED"
        out.append(f"scenario {self.scenario}: {len(self.results)} expectation(s), "
                   f"{len(self.failures)} failure(s), {verdict}")
        return out

    def to_json(self) -> dict:
        return {
            "scenario": self.scenario,
            "conversation_id": self.conversation_id,
            "transcript": self.transcript_path,
            "passed": self.passed,
            "expectations": [
                {
                    "kind": r.expectation.kind,
                    "description": r.expectation.describe(),
                    "passed": r.passed,
                    "detail": r.detail,
                }
                for r in self.results
            ],
        }


def run_scenario(spec: ScenarioSpec, *, freeze_time: bool = False,
                 transcript_dir: Union[str, Path] = "transcripts",
                 reports_dir: Optional[Union[str, Path]] = None,
                 clock: Optional[Clock] = None) -> ScenarioReport:
    """Replay a scenario on a loopback mesh and judge its expectations.

    Expectation failures land in the report; only problems that prevent the
    replay (bad config, unknown gateway) raise ScenarioSetupFailure.
    """
    if clock is None:
        clock = (lambda: FROZEN_CLOCK_TS) if freeze_time else utc_now_iso
    conversation_id = f"conv_{spec.name}"
    transcript = TranscriptWriter(transcript_dir, clock=clock)
    transcript.path_for(conversation_id).unlink(missing_ok=True)

    network = LoopbackNetwork(transcript=transcript, clock=clock)
    for agent in spec.agents:
        try:
            network.add_agent(agent.config, manifests_path=agent.manifests)
        except (ConfigError, OSError, ProtocolError) as exc:
            raise ScenarioSetupFailure(
                f"cannot start agent {agent.config.name!r}: {exc}") from exc

    gateway_url = network.resolve(spec.gateway)
    client = ClientSession(
        network.send, gateway_url, spec.gateway, user_name=spec.user,
        conversation_id=conversation_id, clock=clock, transcript=transcript)
    if spec.greet:
        client.start()
    for turn in spec.turns:
        client.say(turn.say, whisper=turn.whisper)

    transcript_path = transcript.path_for(conversation_id)
    if spec.turns or spec.greet:
        entries = read_transcript(transcript_path)
        aliases = {a.config.endpoint: a.config.name for a in spec.agents}
        hops = merge_hops(entries, aliases)
        results = evaluate_expectations(
            spec.expectations, hops, spec.user, spec.gateway)
    else:
        results = []  # nothing ran, so nothing is judged

    report = ScenarioReport(
        scenario=spec.name,
        conversation_id=conversation_id,
        transcript_path=str(transcript_path),
        results=results,
    )
    if reports_dir is not None:
        reports_dir = Path(reports_dir)
        reports_dir.mkdir(parents=True, exist_ok=True)
        path = reports_dir / f"{spec.name}.json"
        path.write_text(json.dumps(report.to_json(), indent=2, ensure_ascii=False) + "\n",
                        encoding="utf-8")
    return report


def export_sequence_diagram(entries: list[dict],
                            aliases: Optional[dict[str, str]] = None) -> str:
    """Plain-text sequence diagram source: one arrow per envelope event.

    Lifelines appear in order of first activity; output is deterministic for
    a given transcript.
    """
    hops = merge_hops(entries, aliases)
    participants: list[str] = []
    for hop in hops:
        for party in (hop.sender, hop.recipient):
            if party not in participants:
                participants.append(party)
    lines = ["@startuml"]
    lines.extend(f'participant "{p}"' for p in participants)
    for hop in hops:
        for event in hop.events:
            kind = event.get("eventType", "?")
            lines.append(f'"{hop.sender}" -> "{hop.recipient}" : {kind}')
    lines.append("@enduml")
    return "\n".join(lines) + "\n"
