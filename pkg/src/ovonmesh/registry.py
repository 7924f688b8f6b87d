"""Discovery registry.

A registry is a serving agent that holds assistant manifests and answers two
kinds of discovery traffic:

* requestManifest -> publishManifest carrying the registry's own manifest
* findAssistant   -> proposeAssistant carrying ranked candidates

Candidate ranking is deliberately plain bag-of-words keyword overlap, fully
deterministic and reproducible by hand. When nothing matches directly, known
peer registries are proposed as indirect candidates so the caller can widen
the search.
"""
from __future__ import annotations

import json
import re
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

from .envelope import (
    SCHEMA_VERSION,
    AssistantCandidate,
    AssistantManifest,
    ConversationEnvelope,
    EventType,
    ProtocolError,
    ServicingMode,
    build_event,
    extract_text,
    make_envelope,
    parse_manifest,
    utc_now_iso,
    validate_manifest,
)

# Words shorter than this never earn the descriptive-text bonus; stems like
# "and" or "the" would otherwise match almost any query.
DESCRIPTIVE_WORD_MIN_LEN = 4

_WORD_RE = re.compile(r"[a-z0-9']+")


class InvalidManifestError(ProtocolError):
    """Manifest failed validation on registration."""


class UnsupportedEventError(ProtocolError):
    """Envelope carries no event the registry can answer."""


class DiscoveryFailedError(ProtocolError):
    """Search exhausted: no capable agent found within the configured bounds."""


def words_of(text: str) -> set[str]:
    return set(_WORD_RE.findall(text.lower()))


@dataclass(frozen=True)
class MatchQuery:
    """A natural-language capability request, optionally pinned to a language."""

    text: str
    language: Optional[str] = None

    def __post_init__(self) -> None:
        if not self.text:
            raise ValueError("query text must be non-empty")


@dataclass
class RegistryEntry:
    manifest: AssistantManifest
    registered_at: str = field(default_factory=utc_now_iso)
    tags: frozenset[str] = frozenset()

    @classmethod
    def for_manifest(cls, manifest: AssistantManifest) -> "RegistryEntry":
        tags = frozenset(
            kw.lower() for cap in manifest.capabilities for kw in cap.keywords)
        return cls(manifest=manifest, tags=tags)

    @property
    def service_endpoint(self) -> str:
        return self.manifest.identification.service_endpoint

    @property
    def conversational_name(self) -> str:
        return self.manifest.identification.conversational_name


def _entry_score(query_words: set[str], entry: RegistryEntry) -> int:
    """Tag word-matches plus a single bonus for any long descriptive word."""
    score = 0
    for tag in entry.tags:
        tag_words = words_of(tag)
        if tag_words and tag_words <= query_words:
            score += 1
    for cap in entry.manifest.capabilities:
        for text in cap.descriptive_texts or ():
            hit = any(
                w in query_words
                for w in words_of(text) if len(w) >= DESCRIPTIVE_WORD_MIN_LEN)
            if hit:
                return score + 1
    return score


def _language_matches(query_language: str, entry: RegistryEntry) -> bool:
    # An entry that declares no languages is assumed usable in any of them.
    want = query_language.lower()
    for cap in entry.manifest.capabilities:
        if cap.languages is None:
            return True
        for lang in cap.languages:
            lang = lang.lower()
            if lang == want or lang.startswith(want + "-") or want.startswith(lang + "-"):
                return True
    return False


def score_candidates(query: MatchQuery,
                     entries: list[RegistryEntry]) -> list[AssistantCandidate]:
    """Rank entries against a query: scores descending, names ascending on ties.

    Zero-score entries are dropped. Returned candidates are all direct (they
    service the request themselves) and never point anywhere a registered
    manifest did not.
    """
    query_words = words_of(query.text)
    scored: list[tuple[int, str, RegistryEntry]] = []
    for entry in entries:
        if query.language and not _language_matches(query.language, entry):
            continue
        score = _entry_score(query_words, entry)
        if score > 0:
            scored.append((score, entry.conversational_name, entry))
    scored.sort(key=lambda item: (-item[0], item[1]))
    return [
        AssistantCandidate(
            conversational_name=entry.conversational_name,
            url=entry.service_endpoint,
            servicing_mode=ServicingMode.DIRECT,
            score=float(score),
        )
        for score, _, entry in scored
    ]


@dataclass(frozen=True)
class PeerRegistry:
    """Another registry this one can refer callers to."""

    name: str
    url: str


def load_manifests(path: Union[str, Path]) -> list[AssistantManifest]:
    """Read a bootstrap file: a JSON array of manifest objects."""
    raw = Path(path).read_text(encoding="utf-8")
    data = json.loads(raw)
    if not isinstance(data, list):
        raise InvalidManifestError(f"{path}: bootstrap file must be a JSON array")
    return [AssistantManifest.from_wire(m, f"manifests[{i}]") for i, m in enumerate(data)]


class DiscoveryRegistry:
    """Thread-safe manifest store plus the discovery request handlers.

    `endpoint` is the registry's own transport URL (what goes in
    `sender.from` of its responses); `manifest` is its own self-description
    returned on requestManifest.
    """

    def __init__(self, endpoint: str, manifest: AssistantManifest,
                 peers: Optional[list[PeerRegistry]] = None,
                 register_self: bool = True):
        self.endpoint = endpoint
        self.manifest = manifest
        self.peers = list(peers or [])
        self._entries: dict[str, RegistryEntry] = {}
        self._lock = threading.Lock()
        # A registry is findable through itself unless explicitly opted out.
        if register_self:
            self.register_manifest(manifest)

    def register_manifest(self, manifest: AssistantManifest) -> RegistryEntry:
        violations = validate_manifest(manifest)
        if violations:
            raise InvalidManifestError("; ".join(str(v) for v in violations))
        entry = RegistryEntry.for_manifest(manifest)
        with self._lock:
            self._entries[entry.service_endpoint] = entry
        return entry

    def entries(self) -> list[RegistryEntry]:
        with self._lock:
            return list(self._entries.values())

    def __len__(self) -> int:
        with self._lock:
            return len(self._entries)

    def find_candidates(self, query: MatchQuery,
                        requester: str = "") -> list[AssistantCandidate]:
        """Direct matches, or indirect peer referrals when there are none.

        The requester and the registry itself are never proposed as
        referrals; a registry referring a caller back to where the call came
        from would loop forever.
        """
        direct = score_candidates(query, self.entries())
        if direct:
            return direct
        return [
            AssistantCandidate(conversational_name=peer.name, url=peer.url,
                               servicing_mode=ServicingMode.INDIRECT)
            for peer in self.peers
            if peer.url not in (requester, self.endpoint)
        ]

    def handle_discovery_envelope(self, env: ConversationEnvelope) -> ConversationEnvelope:
        """Answer the first discovery event of an inbound envelope.

        The response reuses the request's conversation id and addresses the
        requester via `sender.to`.
        """
        event = env.first_event(EventType.REQUEST_MANIFEST, EventType.FIND_ASSISTANT)
        if event is None:
            kinds = ", ".join(e.event_type.value for e in env.events) or "none"
            raise UnsupportedEventError(
                f"registry answers requestManifest or findAssistant, got: {kinds}")

        if event.event_type is EventType.REQUEST_MANIFEST:
            reply = build_event(EventType.PUBLISH_MANIFEST, self.manifest)
        else:
            query = MatchQuery(text=extract_text(event.payload))
            candidates = self.find_candidates(query, requester=env.sender_from)
            reply = build_event(EventType.PROPOSE_ASSISTANT, candidates)

        return make_envelope(
            conversation_id=env.conversation_id,
            sender_from=self.endpoint,
            events=[reply],
            to=env.sender_from,
            schema_version=SCHEMA_VERSION,
        )


def referral_kind(candidates: list[AssistantCandidate]) -> Optional[ServicingMode]:
    """Classify a proposeAssistant payload for the discovery machine.

    Direct wins when modes are mixed; None means the list was empty and the
    search is over with no result.
    """
    if not candidates:
        return None
    if any(c.servicing_mode is ServicingMode.DIRECT for c in candidates):
        return ServicingMode.DIRECT
    return ServicingMode.INDIRECT
