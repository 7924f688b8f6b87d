"""Conversation-envelope codec.

Envelopes are the universal JSON message exchanged between agents:

    {"ovon": {"schema": {...}, "conversation": {"id": ...},
              "sender": {"from": ..., "reply-to": ..., "to": ...},
              "responseCode": ...,
              "events": [{"to": ..., "eventType": ..., "parameters": {...}}, ...]}}

Eight event types are understood: invite, utterance, whisper, bye,
requestManifest, publishManifest, findAssistant, proposeAssistant.
Utterance-like events carry a dialog event (speaker, time span, tokenized
text features); publishManifest carries an assistant manifest;
proposeAssistant carries a candidate list.

Parsing is liberal (responseCode as bare integer or object, `to` on the
sender or per event, `proposedAssistant` accepted as an alias), serialization
is conservative (object-form responseCode, canonical event type names,
stable key order). Unrecognized keys at any level are kept in per-object
extension bags and re-emitted verbatim, so parse → serialize round-trips
foreign envelopes without loss.

All values here are plain dataclasses with no shared mutable state; every
function is safe to call from any thread.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from typing import Any, Callable, Optional, Union

SCHEMA_VERSION = "0.9.2"

Clock = Callable[[], str]


def utc_now_iso() -> str:
    """Current UTC wall-clock as an ISO-8601 string with millisecond precision."""
    now = datetime.now(timezone.utc)
    return now.strftime("%Y-%m-%dT%H:%M:%S.") + f"{now.microsecond // 1000:03d}Z"


def new_conversation_id() -> str:
    return f"conv_{int(time.time() * 1000)}"


class ProtocolError(Exception):
    """Base class for envelope-level failures."""


class EnvelopeSyntaxError(ProtocolError):
    """Input text is not well-formed JSON."""


class SchemaViolationError(ProtocolError):
    """Input JSON does not have the envelope structure.

    Carries the dotted path of the offending node, e.g. ``ovon.events[1].parameters``.
    """

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path
        self.message = message


class ValidationFailedError(ProtocolError):
    """Refusing to serialize an envelope that has validation violations."""

    def __init__(self, violations: list["Violation"]):
        super().__init__("; ".join(str(v) for v in violations))
        self.violations = violations


class PayloadMismatchError(ProtocolError):
    """Payload shape does not match the requested event type."""


class MissingTextFeatureError(ProtocolError):
    """Dialog event has no \"text\" feature to extract."""


@dataclass(frozen=True)
class Violation:
    """One validation finding, anchored to a document path."""

    path: str
    message: str

    def __str__(self) -> str:
        return f"{self.path}: {self.message}"


class EventType(str, Enum):
    INVITE = "invite"
    UTTERANCE = "utterance"
    WHISPER = "whisper"
    BYE = "bye"
    REQUEST_MANIFEST = "requestManifest"
    PUBLISH_MANIFEST = "publishManifest"
    FIND_ASSISTANT = "findAssistant"
    PROPOSE_ASSISTANT = "proposeAssistant"


# Accepted on input only; serialization always emits the canonical name.
_EVENT_TYPE_ALIASES = {"proposedAssistant": EventType.PROPOSE_ASSISTANT}

# Event types whose payload is a dialog event.
DIALOG_EVENT_TYPES = (EventType.UTTERANCE, EventType.WHISPER, EventType.FIND_ASSISTANT)


class ServicingMode(str, Enum):
    DIRECT = "direct"      # candidate can service the request itself
    INDIRECT = "indirect"  # candidate can help find who can


def _take(data: dict, known: tuple[str, ...]) -> dict:
    """Extension bag: everything in `data` except the known keys."""
    return {k: v for k, v in data.items() if k not in known}


def _require_obj(value: Any, path: str) -> dict:
    if not isinstance(value, dict):
        raise SchemaViolationError(path, f"expected an object, got {type(value).__name__}")
    return value


@dataclass
class Token:
    value: str
    extensions: dict = field(default_factory=dict)

    @classmethod
    def from_wire(cls, data: Any, path: str) -> "Token":
        data = _require_obj(data, path)
        value = data.get("value", "")
        if not isinstance(value, str):
            raise SchemaViolationError(f"{path}.value", "token value must be a string")
        return cls(value=value, extensions=_take(data, ("value",)))

    def to_wire(self) -> dict:
        return {"value": self.value, **self.extensions}


@dataclass
class Feature:
    """One named feature of a dialog event, e.g. the \"text\" feature."""

    mime_type: str = "text/plain"
    tokens: list[Token] = field(default_factory=list)
    extensions: dict = field(default_factory=dict)

    @classmethod
    def from_wire(cls, data: Any, path: str) -> "Feature":
        data = _require_obj(data, path)
        raw_tokens = data.get("tokens", [])
        if not isinstance(raw_tokens, list):
            raise SchemaViolationError(f"{path}.tokens", "tokens must be a list")
        tokens = [Token.from_wire(t, f"{path}.tokens[{i}]") for i, t in enumerate(raw_tokens)]
        return cls(
            mime_type=data.get("mimeType", "text/plain"),
            tokens=tokens,
            extensions=_take(data, ("mimeType", "tokens")),
        )

    def to_wire(self) -> dict:
        return {
            "mimeType": self.mime_type,
            "tokens": [t.to_wire() for t in self.tokens],
            **self.extensions,
        }


@dataclass
class DialogEvent:
    """Speaker-attributed, time-spanned, tokenized payload of utterance-like events.

    Timestamps are opaque strings preserved verbatim; peers use more than one
    format and none of them is normalized here.
    """

    speaker_id: str = ""
    span_start_time: str = ""
    features: dict[str, Feature] = field(default_factory=dict)
    span_extensions: dict = field(default_factory=dict)
    extensions: dict = field(default_factory=dict)

    @classmethod
    def from_wire(cls, data: Any, path: str) -> "DialogEvent":
        data = _require_obj(data, path)
        span = data.get("span", {})
        span = _require_obj(span, f"{path}.span") if span else {}
        raw_features = data.get("features", {})
        raw_features = _require_obj(raw_features, f"{path}.features") if raw_features else {}
        features = {
            name: Feature.from_wire(f, f"{path}.features.{name}")
            for name, f in raw_features.items()
        }
        return cls(
            speaker_id=data.get("speakerId", ""),
            span_start_time=span.get("startTime", ""),
            features=features,
            span_extensions=_take(span, ("startTime",)),
            extensions=_take(data, ("speakerId", "span", "features")),
        )

    def to_wire(self) -> dict:
        out: dict[str, Any] = {"speakerId": self.speaker_id}
        span = dict(self.span_extensions)
        if self.span_start_time:
            span = {"startTime": self.span_start_time, **self.span_extensions}
        if span:
            out["span"] = span
        out["features"] = {name: f.to_wire() for name, f in self.features.items()}
        out.update(self.extensions)
        return out


def make_dialog_event(speaker_id: str, text: str, start_time: str = "",
                      mime_type: str = "text/plain") -> DialogEvent:
    """Single-token text dialog event; span left empty unless given."""
    return DialogEvent(
        speaker_id=speaker_id,
        span_start_time=start_time,
        features={"text": Feature(mime_type=mime_type, tokens=[Token(text)])},
    )


def extract_text(d: DialogEvent) -> str:
    """Text of the \"text\" feature: token values in order, space-joined.

    A single token comes back verbatim (surrounding whitespace included).
    """
    feature = d.features.get("text")
    if feature is None:
        raise MissingTextFeatureError(f"dialog event from {d.speaker_id!r} has no 'text' feature")
    return " ".join(t.value for t in feature.tokens)


@dataclass
class InviteTarget:
    """Invite payload: the agent being asked to join the conversation."""

    url: str
    extensions: dict = field(default_factory=dict)

    @classmethod
    def from_wire(cls, data: Any, path: str) -> "InviteTarget":
        data = _require_obj(data, path)
        target = data.get("to")
        if target is None:
            raise SchemaViolationError(path, "invite parameters require a 'to' object")
        target = _require_obj(target, f"{path}.to")
        url = target.get("url", "")
        return cls(url=url, extensions=_take(target, ("url",)))

    def to_wire(self) -> dict:
        return {"to": {"url": self.url, **self.extensions}}


@dataclass
class Identification:
    service_endpoint: str = ""
    organization: str = ""
    conversational_name: str = ""
    service_name: str = ""
    role: str = ""
    synopsis: str = ""
    extensions: dict = field(default_factory=dict)

    _KEYS = ("serviceEndpoint", "organization", "conversationalName",
             "serviceName", "role", "synopsis")

    @classmethod
    def from_wire(cls, data: Any, path: str) -> "Identification":
        data = _require_obj(data, path)
        return cls(
            service_endpoint=data.get("serviceEndpoint", ""),
            organization=data.get("organization", ""),
            conversational_name=data.get("conversationalName", ""),
            service_name=data.get("serviceName", ""),
            role=data.get("role", ""),
            synopsis=data.get("synopsis", ""),
            extensions=_take(data, cls._KEYS),
        )

    def to_wire(self) -> dict:
        return {
            "serviceEndpoint": self.service_endpoint,
            "organization": self.organization,
            "conversationalName": self.conversational_name,
            "serviceName": self.service_name,
            "role": self.role,
            "synopsis": self.synopsis,
            **self.extensions,
        }


@dataclass
class Capability:
    """One capability block of a manifest.

    List fields distinguish absent (None) from present-but-empty so foreign
    manifests round-trip without key invention.
    """

    keywords: list[str] = field(default_factory=list)
    languages: Optional[list[str]] = None
    descriptive_texts: Optional[list[str]] = None
    modalities: Optional[list[str]] = None
    content_type: Optional[str] = None
    extensions: dict = field(default_factory=dict)

    _KEYS = ("keywords", "languages", "descriptiveTexts", "modalities", "contentType")

    @classmethod
    def from_wire(cls, data: Any, path: str) -> "Capability":
        data = _require_obj(data, path)
        return cls(
            keywords=list(data.get("keywords", [])),
            languages=list(data["languages"]) if "languages" in data else None,
            descriptive_texts=list(data["descriptiveTexts"]) if "descriptiveTexts" in data else None,
            modalities=list(data["modalities"]) if "modalities" in data else None,
            content_type=data.get("contentType"),
            extensions=_take(data, cls._KEYS),
        )

    def to_wire(self) -> dict:
        out: dict[str, Any] = {"keywords": list(self.keywords)}
        if self.languages is not None:
            out["languages"] = list(self.languages)
        if self.descriptive_texts is not None:
            out["descriptiveTexts"] = list(self.descriptive_texts)
        if self.modalities is not None:
            out["modalities"] = list(self.modalities)
        if self.content_type is not None:
            out["contentType"] = self.content_type
        out.update(self.extensions)
        return out


@dataclass
class AssistantManifest:
    """Self-description an agent publishes on request: identity plus capabilities."""

    identification: Identification = field(default_factory=Identification)
    capabilities: list[Capability] = field(default_factory=list)
    extensions: dict = field(default_factory=dict)

    @classmethod
    def from_wire(cls, data: Any, path: str = "manifest") -> "AssistantManifest":
        data = _require_obj(data, path)
        identification = Identification.from_wire(
            data.get("identification", {}), f"{path}.identification")
        raw_caps = data.get("capabilities", [])
        if not isinstance(raw_caps, list):
            raise SchemaViolationError(f"{path}.capabilities", "capabilities must be a list")
        capabilities = [
            Capability.from_wire(c, f"{path}.capabilities[{i}]")
            for i, c in enumerate(raw_caps)
        ]
        return cls(
            identification=identification,
            capabilities=capabilities,
            extensions=_take(data, ("identification", "capabilities")),
        )

    def to_wire(self) -> dict:
        return {
            "identification": self.identification.to_wire(),
            "capabilities": [c.to_wire() for c in self.capabilities],
            **self.extensions,
        }


def parse_manifest(raw: Union[str, bytes]) -> AssistantManifest:
    """Parse a standalone manifest document (not wrapped in an envelope)."""
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise EnvelopeSyntaxError(f"malformed JSON: {exc}") from exc
    return AssistantManifest.from_wire(data, "manifest")


def serialize_manifest(m: AssistantManifest, indent: Optional[int] = None) -> str:
    return json.dumps(m.to_wire(), indent=indent, ensure_ascii=False,
                      separators=None if indent else (",", ":"))


def validate_manifest(m: AssistantManifest, path: str = "manifest") -> list[Violation]:
    violations = []
    if not m.identification.service_endpoint:
        violations.append(Violation(f"{path}.identification.serviceEndpoint", "must be non-empty"))
    if not m.identification.conversational_name:
        violations.append(Violation(f"{path}.identification.conversationalName", "must be non-empty"))
    if not m.capabilities:
        violations.append(Violation(f"{path}.capabilities", "must list at least one capability"))
    for i, cap in enumerate(m.capabilities):
        if not cap.keywords:
            violations.append(Violation(f"{path}.capabilities[{i}].keywords",
                                        "must list at least one keyword"))
    return violations


@dataclass
class AssistantCandidate:
    """One entry of a proposeAssistant payload.

    `score` is a local ranking aid; it is never put on the wire unless the
    producer tucks it into `extensions` explicitly.
    """

    conversational_name: str = ""
    url: str = ""
    servicing_mode: ServicingMode = ServicingMode.DIRECT
    score: Optional[float] = None
    extensions: dict = field(default_factory=dict)

    @classmethod
    def from_wire(cls, data: Any, path: str) -> "AssistantCandidate":
        data = _require_obj(data, path)
        mode_raw = data.get("servicingMode", ServicingMode.DIRECT.value)
        try:
            mode = ServicingMode(mode_raw)
        except ValueError:
            raise SchemaViolationError(
                f"{path}.servicingMode", f"unknown servicing mode {mode_raw!r}") from None
        return cls(
            conversational_name=data.get("conversationalName", ""),
            url=data.get("url", ""),
            servicing_mode=mode,
            extensions=_take(data, ("conversationalName", "url", "servicingMode")),
        )

    def to_wire(self) -> dict:
        return {
            "conversationalName": self.conversational_name,
            "url": self.url,
            "servicingMode": self.servicing_mode.value,
            **self.extensions,
        }


@dataclass
class ResponseCode:
    """HTTP-style protocol result riding inside the envelope.

    Parses from a bare integer or the object form; always serializes as the
    object form. An empty description is normalized to None so both wire
    forms compare equal.
    """

    code: int
    description: Optional[str] = None
    extensions: dict = field(default_factory=dict)

    @classmethod
    def from_wire(cls, data: Any, path: str) -> "ResponseCode":
        if isinstance(data, bool):
            raise SchemaViolationError(path, "responseCode must be an integer or object")
        if isinstance(data, int):
            return cls(code=data)
        if isinstance(data, dict):
            code = data.get("code")
            if not isinstance(code, int) or isinstance(code, bool):
                raise SchemaViolationError(f"{path}.code", "code must be an integer")
            description = data.get("description") or None
            return cls(code=code, description=description,
                       extensions=_take(data, ("code", "description")))
        raise SchemaViolationError(path, "responseCode must be an integer or object")

    def to_wire(self) -> dict:
        out: dict[str, Any] = {"code": self.code}
        if self.description is not None:
            out["description"] = self.description
        out.update(self.extensions)
        return out


# What each event type carries as its payload.
EventPayload = Union[None, InviteTarget, DialogEvent, AssistantManifest, list]


@dataclass
class EnvelopeEvent:
    """One event of an envelope: type, optional intended recipient, typed payload."""

    event_type: EventType
    payload: EventPayload = None
    to: Optional[str] = None
    parameters_extensions: dict = field(default_factory=dict)
    extensions: dict = field(default_factory=dict)

    def effective_recipient(self, env: Optional["ConversationEnvelope"] = None) -> Optional[str]:
        """Per-event `to` wins over the sender-level `to` when both are present."""
        if self.to is not None:
            return self.to
        return env.sender_to if env is not None else None

    @classmethod
    def from_wire(cls, data: Any, path: str) -> "EnvelopeEvent":
        data = _require_obj(data, path)
        raw_type = data.get("eventType")
        if raw_type is None:
            raise SchemaViolationError(f"{path}.eventType", "event is missing eventType")
        try:
            event_type = _EVENT_TYPE_ALIASES.get(raw_type) or EventType(raw_type)
        except ValueError:
            raise SchemaViolationError(
                f"{path}.eventType", f"unknown event type {raw_type!r}") from None

        params = data.get("parameters", {})
        params = _require_obj(params, f"{path}.parameters") if params else {}
        ppath = f"{path}.parameters"

        payload: EventPayload
        consumed: tuple[str, ...]
        if event_type is EventType.INVITE:
            payload = InviteTarget.from_wire(params, ppath)
            consumed = ("to",)
        elif event_type in DIALOG_EVENT_TYPES:
            if "dialogEvent" not in params:
                raise SchemaViolationError(
                    ppath, f"{event_type.value} parameters require a dialogEvent")
            payload = DialogEvent.from_wire(params["dialogEvent"], f"{ppath}.dialogEvent")
            consumed = ("dialogEvent",)
        elif event_type is EventType.BYE:
            if "dialogEvent" in params:
                payload = DialogEvent.from_wire(params["dialogEvent"], f"{ppath}.dialogEvent")
                consumed = ("dialogEvent",)
            else:
                payload = None
                consumed = ()
        elif event_type is EventType.REQUEST_MANIFEST:
            payload = None
            consumed = ()
        elif event_type is EventType.PUBLISH_MANIFEST:
            if "manifest" not in params:
                raise SchemaViolationError(ppath, "publishManifest parameters require a manifest")
            payload = AssistantManifest.from_wire(params["manifest"], f"{ppath}.manifest")
            consumed = ("manifest",)
        else:  # proposeAssistant
            if "candidates" not in params:
                raise SchemaViolationError(ppath, "proposeAssistant parameters require candidates")
            raw_candidates = params["candidates"]
            if not isinstance(raw_candidates, list):
                raise SchemaViolationError(f"{ppath}.candidates", "candidates must be a list")
            payload = [
                AssistantCandidate.from_wire(c, f"{ppath}.candidates[{i}]")
                for i, c in enumerate(raw_candidates)
            ]
            consumed = ("candidates",)

        return cls(
            event_type=event_type,
            payload=payload,
            to=data.get("to"),
            parameters_extensions=_take(params, consumed),
            extensions=_take(data, ("to", "eventType", "parameters")),
        )

    def to_wire(self) -> dict:
        out: dict[str, Any] = {}
        if self.to is not None:
            out["to"] = self.to
        out["eventType"] = self.event_type.value

        params: dict[str, Any] = {}
        if self.event_type is EventType.INVITE and isinstance(self.payload, InviteTarget):
            params.update(self.payload.to_wire())
        elif isinstance(self.payload, DialogEvent):
            params["dialogEvent"] = self.payload.to_wire()
        elif isinstance(self.payload, AssistantManifest):
            params["manifest"] = self.payload.to_wire()
        elif isinstance(self.payload, list):
            params["candidates"] = [c.to_wire() for c in self.payload]
        params.update(self.parameters_extensions)
        if params:
            out["parameters"] = params
        out.update(self.extensions)
        return out


@dataclass
class ConversationEnvelope:
    """The universal message: schema version, conversation id, sender, ordered events."""

    conversation_id: str
    sender_from: str
    events: list[EnvelopeEvent] = field(default_factory=list)
    schema_version: Optional[str] = SCHEMA_VERSION
    schema_url: Optional[str] = None
    sender_reply_to: Optional[str] = None
    sender_to: Optional[str] = None
    response_code: Optional[ResponseCode] = None
    schema_extensions: dict = field(default_factory=dict)
    conversation_extensions: dict = field(default_factory=dict)
    sender_extensions: dict = field(default_factory=dict)
    ovon_extensions: dict = field(default_factory=dict)
    top_extensions: dict = field(default_factory=dict)

    def events_of_type(self, *types: EventType) -> list[EnvelopeEvent]:
        return [e for e in self.events if e.event_type in types]

    def first_event(self, *types: EventType) -> Optional[EnvelopeEvent]:
        for e in self.events:
            if e.event_type in types:
                return e
        return None


def make_envelope(conversation_id: str, sender_from: str, events: list[EnvelopeEvent],
                  *, reply_to: Optional[str] = None, to: Optional[str] = None,
                  response_code: Optional[ResponseCode] = None,
                  schema_version: str = SCHEMA_VERSION,
                  schema_url: Optional[str] = None) -> ConversationEnvelope:
    return ConversationEnvelope(
        conversation_id=conversation_id,
        sender_from=sender_from,
        events=list(events),
        schema_version=schema_version,
        schema_url=schema_url,
        sender_reply_to=reply_to,
        sender_to=to,
        response_code=response_code,
    )


def build_event(kind: EventType, payload: EventPayload = None,
                to: Optional[str] = None, clock: Optional[Clock] = None) -> EnvelopeEvent:
    """Construct a well-typed event, rejecting payload/type mismatches.

    Dialog-event payloads get the current wall-clock stamped into an empty
    span start time.
    """
    kind = EventType(kind)
    if kind is EventType.INVITE:
        if isinstance(payload, str):
            payload = InviteTarget(url=payload)
        if not isinstance(payload, InviteTarget):
            raise PayloadMismatchError("invite requires a target URL")
    elif kind in DIALOG_EVENT_TYPES:
        if not isinstance(payload, DialogEvent):
            raise PayloadMismatchError(f"{kind.value} requires a DialogEvent payload")
        if not payload.span_start_time:
            payload.span_start_time = (clock or utc_now_iso)()
    elif kind is EventType.BYE:
        if payload is not None and not isinstance(payload, DialogEvent):
            raise PayloadMismatchError("bye accepts only an optional DialogEvent reason")
    elif kind is EventType.REQUEST_MANIFEST:
        if payload is not None:
            raise PayloadMismatchError("requestManifest carries no payload")
    elif kind is EventType.PUBLISH_MANIFEST:
        if not isinstance(payload, AssistantManifest):
            raise PayloadMismatchError("publishManifest requires an AssistantManifest payload")
    elif kind is EventType.PROPOSE_ASSISTANT:
        if not isinstance(payload, list) or not all(
                isinstance(c, AssistantCandidate) for c in payload):
            raise PayloadMismatchError("proposeAssistant requires a list of candidates")
    return EnvelopeEvent(event_type=kind, payload=payload, to=to)


def parse_envelope(raw: Union[str, bytes, dict]) -> ConversationEnvelope:
    """Parse UTF-8 envelope text (or an already-decoded object) into a typed value.

    Raises EnvelopeSyntaxError for malformed JSON and SchemaViolationError
    (with a document path) when the required structure is missing: the
    `ovon` wrapper, `conversation.id`, `sender.from`, a known eventType per
    event, and the payload shape that event type demands. Everything else is
    preserved; deeper invariants are the job of validate_envelope.
    """
    if isinstance(raw, dict):
        doc = raw
    else:
        try:
            doc = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise EnvelopeSyntaxError(f"malformed JSON: {exc}") from exc
    if not isinstance(doc, dict) or "ovon" not in doc:
        raise SchemaViolationError("ovon", "missing 'ovon' wrapper object")
    ovon = _require_obj(doc["ovon"], "ovon")

    if "conversation" not in ovon:
        raise SchemaViolationError("ovon.conversation", "missing conversation object")
    conversation = _require_obj(ovon["conversation"], "ovon.conversation")
    if "id" not in conversation:
        raise SchemaViolationError("ovon.conversation.id", "missing conversation id")

    if "sender" not in ovon:
        raise SchemaViolationError("ovon.sender", "missing sender object")
    sender = _require_obj(ovon["sender"], "ovon.sender")
    if "from" not in sender:
        raise SchemaViolationError("ovon.sender.from", "missing sender 'from'")

    schema = ovon.get("schema", {})
    schema = _require_obj(schema, "ovon.schema") if schema else {}

    response_code = None
    if "responseCode" in ovon:
        response_code = ResponseCode.from_wire(ovon["responseCode"], "ovon.responseCode")

    raw_events = ovon.get("events", [])
    if not isinstance(raw_events, list):
        raise SchemaViolationError("ovon.events", "events must be a list")
    events = [
        EnvelopeEvent.from_wire(e, f"ovon.events[{i}]") for i, e in enumerate(raw_events)
    ]

    return ConversationEnvelope(
        conversation_id=conversation["id"],
        sender_from=sender["from"],
        events=events,
        schema_version=schema.get("version") if schema else None,
        schema_url=schema.get("url"),
        sender_reply_to=sender.get("reply-to"),
        sender_to=sender.get("to"),
        response_code=response_code,
        schema_extensions=_take(schema, ("version", "url")),
        conversation_extensions=_take(conversation, ("id",)),
        sender_extensions=_take(sender, ("from", "reply-to", "to")),
        ovon_extensions=_take(ovon, ("schema", "conversation", "sender",
                                     "responseCode", "events")),
        top_extensions=_take(doc, ("ovon",)),
    )


def envelope_to_wire(env: ConversationEnvelope) -> dict:
    """The JSON object form of an envelope, keys in canonical order."""
    ovon: dict[str, Any] = {}
    schema: dict[str, Any] = {}
    if env.schema_version is not None:
        schema["version"] = env.schema_version
    if env.schema_url is not None:
        schema["url"] = env.schema_url
    schema.update(env.schema_extensions)
    if schema:
        ovon["schema"] = schema

    ovon["conversation"] = {"id": env.conversation_id, **env.conversation_extensions}

    sender: dict[str, Any] = {"from": env.sender_from}
    if env.sender_reply_to is not None:
        sender["reply-to"] = env.sender_reply_to
    if env.sender_to is not None:
        sender["to"] = env.sender_to
    sender.update(env.sender_extensions)
    ovon["sender"] = sender

    if env.response_code is not None:
        ovon["responseCode"] = env.response_code.to_wire()

    ovon["events"] = [e.to_wire() for e in env.events]
    ovon.update(env.ovon_extensions)
    return {"ovon": ovon, **env.top_extensions}


def serialize_envelope(env: ConversationEnvelope, indent: Optional[int] = None) -> str:
    """Serialize a valid envelope to JSON text.

    Refuses envelopes with validation violations. Default output is compact
    single-line JSON (transcript-file friendly); pass `indent` for pretty
    printing.
    """
    violations = validate_envelope(env)
    if violations:
        raise ValidationFailedError(violations)
    return json.dumps(envelope_to_wire(env), indent=indent, ensure_ascii=False,
                      separators=None if indent else (",", ":"))


def _validate_dialog_event(d: DialogEvent, path: str, require_text: bool) -> list[Violation]:
    violations = []
    if not d.speaker_id:
        violations.append(Violation(f"{path}.speakerId", "must be non-empty"))
    if require_text and "text" not in d.features:
        violations.append(Violation(f"{path}.features", "must include a 'text' feature"))
    for name, feature in d.features.items():
        if not feature.tokens:
            violations.append(Violation(f"{path}.features.{name}.tokens",
                                        "must contain at least one token"))
    return violations


def validate_envelope(env: ConversationEnvelope) -> list[Violation]:
    """All invariant violations of a typed envelope, in document order.

    Empty list means the envelope is well-formed and serializable.
    """
    violations: list[Violation] = []
    if not env.conversation_id:
        violations.append(Violation("ovon.conversation.id", "must be non-empty"))
    if not env.sender_from:
        violations.append(Violation("ovon.sender.from", "must be non-empty"))
    if not env.events:
        violations.append(Violation("ovon.events", "must contain at least one event"))

    for i, event in enumerate(env.events):
        path = f"ovon.events[{i}]"
        ppath = f"{path}.parameters"
        kind = event.event_type
        if kind is EventType.INVITE:
            if not isinstance(event.payload, InviteTarget):
                violations.append(Violation(ppath, "invite requires a target"))
            elif not event.payload.url:
                violations.append(Violation(f"{ppath}.to.url", "must be non-empty"))
        elif kind in DIALOG_EVENT_TYPES:
            if not isinstance(event.payload, DialogEvent):
                violations.append(Violation(ppath, f"{kind.value} requires a dialogEvent"))
            else:
                violations.extend(_validate_dialog_event(
                    event.payload, f"{ppath}.dialogEvent", require_text=True))
        elif kind is EventType.BYE:
            if event.payload is not None:
                if not isinstance(event.payload, DialogEvent):
                    violations.append(Violation(ppath, "bye accepts only a dialogEvent reason"))
                else:
                    violations.extend(_validate_dialog_event(
                        event.payload, f"{ppath}.dialogEvent", require_text=False))
        elif kind is EventType.REQUEST_MANIFEST:
            if event.payload is not None:
                violations.append(Violation(ppath, "requestManifest carries no payload"))
        elif kind is EventType.PUBLISH_MANIFEST:
            if not isinstance(event.payload, AssistantManifest):
                violations.append(Violation(ppath, "publishManifest requires a manifest"))
            else:
                violations.extend(validate_manifest(event.payload, f"{ppath}.manifest"))
        elif kind is EventType.PROPOSE_ASSISTANT:
            if not isinstance(event.payload, list) or not all(
                    isinstance(c, AssistantCandidate) for c in event.payload):
                violations.append(Violation(ppath, "proposeAssistant requires a candidate list"))
            else:
                for j, candidate in enumerate(event.payload):
                    if not candidate.url:
                        violations.append(Violation(f"{ppath}.candidates[{j}].url",
                                                    "must be non-empty"))
    return violations
