"""Interoperable conversational-agent mesh.

Agents exchange JSON conversation envelopes over plain HTTP POST. The
package provides the envelope codec, the conversation state machines, a
keyword-based discovery registry, a configurable assistant runtime with
floor management, transports (in-process loopback and HTTP), a scripted
scenario harness, and a command-line interface.
"""
from __future__ import annotations

from .envelope import (
    AssistantCandidate,
    AssistantManifest,
    Capability,
    ConversationEnvelope,
    DialogEvent,
    EnvelopeEvent,
    EnvelopeSyntaxError,
    EventType,
    Identification,
    InviteTarget,
    MissingTextFeatureError,
    PayloadMismatchError,
    ProtocolError,
    ResponseCode,
    SchemaViolationError,
    ServicingMode,
    ValidationFailedError,
    Violation,
    build_event,
    extract_text,
    make_dialog_event,
    make_envelope,
    parse_envelope,
    parse_manifest,
    serialize_envelope,
    serialize_manifest,
    validate_envelope,
    validate_manifest,
)

__version__ = "0.1.0"

__all__ = [
    "AssistantCandidate",
    "AssistantManifest",
    "Capability",
    "ConversationEnvelope",
    "DialogEvent",
    "EnvelopeEvent",
    "EnvelopeSyntaxError",
    "EventType",
    "Identification",
    "InviteTarget",
    "MissingTextFeatureError",
    "PayloadMismatchError",
    "ProtocolError",
    "ResponseCode",
    "SchemaViolationError",
    "ServicingMode",
    "ValidationFailedError",
    "Violation",
    "build_event",
    "extract_text",
    "make_dialog_event",
    "make_envelope",
    "parse_envelope",
    "parse_manifest",
    "serialize_envelope",
    "serialize_manifest",
    "validate_envelope",
    "validate_manifest",
    "__version__",
]
