"""Transport binding: HTTP service, in-process loopback, sessions, transcripts.

Every agent is a service accepting POSTed envelopes on a single path and
answering synchronously with an envelope. Protocol-level problems ride inside
the response's responseCode over HTTP 200; only a body that cannot be parsed
into an envelope at all earns HTTP 400.

AgentService is the transport-independent core. It can be bound to a real
HTTP server (one thread per request) or registered in a LoopbackNetwork for
in-process meshes; both paths share the session store, the state machines,
and the transcript writer.
"""
from __future__ import annotations

import itertools
import json
import os
import threading
import time
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Callable, Optional, Union

import requests

from .envelope import (
    Clock,
    ConversationEnvelope,
    DialogEvent,
    EnvelopeSyntaxError,
    EventType,
    InviteTarget,
    ProtocolError,
    ResponseCode,
    SchemaViolationError,
    build_event,
    envelope_to_wire,
    extract_text,
    make_dialog_event,
    make_envelope,
    new_conversation_id,
    parse_envelope,
    serialize_envelope,
    utc_now_iso,
    validate_envelope,
)
from .fsm import (
    DemandingState,
    DiscoveryState,
    FsmAction,
    FsmInput,
    InputKind,
    Referral,
    ServingState,
    demanding_step,
    discovery_step,
    fold_envelope,
    lookup_context,
    serving_step,
)
from .registry import (
    DiscoveryFailedError,
    DiscoveryRegistry,
    MatchQuery,
    load_manifests,
    referral_kind,
)
from .runtime import AgentConfig, Backend, BackendFailure, MediatorSession, error_response

DEFAULT_INACTIVITY_TIMEOUT_SECS = 60.0
TIMEOUT_ENV_VAR = "OVON_TIMEOUT_SECS"


class TransportError(ProtocolError):
    """Base class for failures between agents."""


class ConnectFailureError(TransportError):
    pass


class TransportTimeoutError(TransportError):
    pass


class InvalidResponseEnvelopeError(TransportError):
    """Peer answered, but not with a parseable envelope."""


class BindFailureError(TransportError):
    """Server socket could not be opened."""


SendFn = Callable[[str, ConversationEnvelope], ConversationEnvelope]


def inactivity_timeout_secs() -> float:
    raw = os.environ.get(TIMEOUT_ENV_VAR)
    if raw:
        try:
            return float(raw)
        except ValueError:
            pass
    return DEFAULT_INACTIVITY_TIMEOUT_SECS


class TranscriptWriter:
    """Append-only JSONL conversation logs under one directory.

    One file per conversation id; one line per envelope crossing an agent's
    boundary: {seq, ts, agent, direction, peer, envelope}. The sequence
    counter is shared by every agent using this writer, so merged ordering is
    a plain sort by seq regardless of wall-clock resolution.
    """

    def __init__(self, base_dir: Union[str, Path] = "transcripts",
                 clock: Optional[Clock] = None):
        self.base_dir = Path(base_dir)
        self.clock = clock or utc_now_iso
        self._counter = itertools.count()
        self._lock = threading.Lock()

    def path_for(self, conversation_id: str) -> Path:
        safe = "".join(c if c.isalnum() or c in "-_." else "_" for c in conversation_id)
        return self.base_dir / f"{safe}.jsonl"

    def record(self, agent: str, direction: str, peer: str,
               env: ConversationEnvelope) -> dict:
        entry = {
            "seq": None,  # assigned under the lock
            "ts": self.clock(),
            "agent": agent,
            "direction": direction,
            "peer": peer,
            "envelope": envelope_to_wire(env),
        }
        with self._lock:
            entry["seq"] = next(self._counter)
            self.base_dir.mkdir(parents=True, exist_ok=True)
            with self.path_for(env.conversation_id).open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(entry, ensure_ascii=False) + "\n")
        return entry


class NullTranscriptWriter(TranscriptWriter):
    """Discards records; for callers that do not want files on disk."""

    def __init__(self):
        super().__init__()

    def record(self, agent: str, direction: str, peer: str,
               env: ConversationEnvelope) -> dict:
        return {}


def read_transcript(path: Union[str, Path]) -> list[dict]:
    entries = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                entries.append(json.loads(line))
    entries.sort(key=lambda e: e.get("seq", 0))
    return entries


@dataclass
class Session:
    """Per-conversation state held by one agent."""

    conversation_id: str
    engine: MediatorSession
    serving: ServingState = ServingState.IDLE
    last_activity: float = field(default_factory=time.monotonic)
    lock: threading.RLock = field(default_factory=threading.RLock)


class SessionStore:
    """Conversation-id keyed sessions with lazy inactivity expiry.

    Expiry runs opportunistically on access: stale idle sessions get the
    InactivityTimeout input and are dropped. Sessions busy in another thread
    are skipped and picked up on a later sweep.
    """

    def __init__(self, timeout_secs: Optional[float] = None):
        self.timeout_secs = timeout_secs if timeout_secs is not None \
            else inactivity_timeout_secs()
        self._sessions: dict[str, Session] = {}
        self._lock = threading.Lock()

    def get(self, conversation_id: str,
            factory: Callable[[str], Session]) -> Session:
        self.sweep()
        with self._lock:
            session = self._sessions.get(conversation_id)
            if session is None:
                session = factory(conversation_id)
                self._sessions[conversation_id] = session
            return session

    def drop(self, conversation_id: str) -> None:
        with self._lock:
            self._sessions.pop(conversation_id, None)

    def __len__(self) -> int:
        with self._lock:
            return len(self._sessions)

    def sweep(self, now: Optional[float] = None) -> list[str]:
        now = time.monotonic() if now is None else now
        with self._lock:
            stale = [s for s in self._sessions.values()
                     if now - s.last_activity > self.timeout_secs]
        expired = []
        for session in stale:
            if not session.lock.acquire(blocking=False):
                continue
            try:
                if now - session.last_activity <= self.timeout_secs:
                    continue
                if session.serving is ServingState.READY:
                    session.serving, _ = serving_step(
                        session.serving, FsmInput(InputKind.INACTIVITY_TIMEOUT))
                expired.append(session.conversation_id)
            finally:
                session.lock.release()
        with self._lock:
            for conversation_id in expired:
                self._sessions.pop(conversation_id, None)
        return expired


class AgentService:
    """One agent's protocol engine, independent of how bytes arrive.

    Dispatch: discovery events (requestManifest, findAssistant) go straight
    to the registry with no conversational state; everything else drives the
    per-conversation serving machine, whose actions decide whether a backend
    lookup runs, a response envelope is emitted, or a failure bye ends the
    session.
    """

    def __init__(self, config: AgentConfig, send: Optional[SendFn] = None,
                 transcript: Optional[TranscriptWriter] = None,
                 clock: Optional[Clock] = None,
                 resolve_agent: Optional[Callable[[str], Optional[str]]] = None,
                 session_timeout_secs: Optional[float] = None,
                 manifests_path: Optional[Union[str, Path]] = None):
        self.config = config
        self.name = config.name
        self.send = send or http_send
        self.transcript = transcript or NullTranscriptWriter()
        self.clock = clock or utc_now_iso
        self.resolve_agent = resolve_agent or (lambda name: None)
        self.backend: Backend = config.build_backend()
        self.store = SessionStore(session_timeout_secs)
        self.registry = DiscoveryRegistry(
            endpoint=config.endpoint or f"loop://{config.name}",
            manifest=config.default_manifest(),
            peers=config.peers,
        )
        if manifests_path is not None:
            for manifest in load_manifests(manifests_path):
                self.registry.register_manifest(manifest)

    def register_peer_manifests(self, manifests) -> None:
        for manifest in manifests:
            self.registry.register_manifest(manifest)

    # -- transport-facing entry points ------------------------------------

    def handle_raw(self, body: Union[str, bytes]) -> tuple[int, bytes]:
        """(HTTP status, response body). 400 only when no envelope can be read."""
        try:
            env = parse_envelope(body)
        except (EnvelopeSyntaxError, SchemaViolationError) as exc:
            payload = json.dumps({"error": str(exc)}, ensure_ascii=False)
            return 400, payload.encode("utf-8")
        response = self.handle_envelope(env)
        return 200, serialize_envelope(response).encode("utf-8")

    def handle_envelope(self, env: ConversationEnvelope) -> ConversationEnvelope:
        self.transcript.record(self.name, "in", env.sender_from, env)
        response = self._dispatch(env)
        self.transcript.record(self.name, "out", env.sender_from, response)
        return response

    # -- dispatch ----------------------------------------------------------

    def _dispatch(self, env: ConversationEnvelope) -> ConversationEnvelope:
        violations = validate_envelope(env)
        if violations:
            return error_response(
                env, 422, f"invalid envelope: {violations[0]}", self.name, self.clock)

        if env.first_event(EventType.REQUEST_MANIFEST, EventType.FIND_ASSISTANT):
            return self.registry.handle_discovery_envelope(env)

        session = self.store.get(env.conversation_id, self._new_session)
        with session.lock:
            session.last_activity = time.monotonic()
            return self._converse(session, env)

    def _new_session(self, conversation_id: str) -> Session:
        engine = MediatorSession(
            config=self.config,
            conversation_id=conversation_id,
            send=self.send,
            backend=self.backend,
            clock=self.clock,
            resolve_agent=self.resolve_agent,
            discover=self._discover,
        )
        return Session(conversation_id=conversation_id, engine=engine)

    def _discover(self, via_url: str, query: str,
                  conversation_id: str) -> Optional[tuple[str, str]]:
        client = DiscoveryClient(send=self.send, requester=self.config.endpoint or self.name,
                                 clock=self.clock)
        url, name, _ = client.find_specialist(via_url, query, conversation_id)
        return url, name

    def _converse(self, session: Session,
                  env: ConversationEnvelope) -> ConversationEnvelope:
        had_bye = env.first_event(EventType.BYE) is not None
        state, actions = fold_envelope("serving", session.serving, env)
        session.serving = state

        if FsmAction.START_LOOKUP in actions:
            return self._lookup_and_respond(session, env)

        if had_bye and state is ServingState.IDLE:
            # Peer ended the conversation; release any specialists still on
            # the floor, then acknowledge.
            self._release_delegates(session)
            self.store.drop(session.conversation_id)
            return self._respond(env, [build_event(
                EventType.WHISPER,
                make_dialog_event(self.name, "bye acknowledged"),
                clock=self.clock)])

        if state is ServingState.READY and env.first_event(EventType.INVITE):
            events = session.engine.handle_invite_only()
            if not events:
                events = [build_event(
                    EventType.WHISPER,
                    make_dialog_event(self.name, f"{self.name} joined the conversation"),
                    clock=self.clock)]
            return self._respond(env, events)

        kinds = ", ".join(e.event_type.value for e in env.events)
        return error_response(
            env, 422, f"events not expected in this conversation state: {kinds}",
            self.name, self.clock)

    def _lookup_and_respond(self, session: Session,
                            env: ConversationEnvelope) -> ConversationEnvelope:
        primary, refinements = lookup_context(env)
        text = extract_text(primary)
        whisper_ctx = " ".join(
            extract_text(d) for d in refinements if "text" in d.features) or None
        try:
            events = session.engine.handle_turn(text, primary.speaker_id, whisper_ctx)
        except BackendFailure as exc:
            session.serving, _ = serving_step(
                session.serving, FsmInput(InputKind.LOOKUP_FAILED))
            self.store.drop(session.conversation_id)
            reason = make_dialog_event(self.name, f"ending conversation: {exc}")
            return self._respond(env, [
                build_event(EventType.WHISPER,
                            make_dialog_event(self.name, str(exc)), clock=self.clock),
                build_event(EventType.BYE, reason, clock=self.clock),
            ])

        session.serving, _ = serving_step(
            session.serving, FsmInput(InputKind.LOOKUP_SUCCEEDED))
        response = self._respond(env, events)
        session.serving, _ = serving_step(
            session.serving, FsmInput(InputKind.SENT_UTTERANCE_OR_WHISPER))
        if self._said_own_bye(events):
            # The agent itself left (scripted farewell); forget the session.
            self.store.drop(session.conversation_id)
        return response

    def _said_own_bye(self, events: list) -> bool:
        for event in events:
            if event.event_type is not EventType.BYE:
                continue
            payload = event.payload
            speaker = payload.speaker_id if isinstance(payload, DialogEvent) else ""
            if not speaker or speaker == self.name:
                return True
        return False

    def _release_delegates(self, session: Session) -> None:
        for leg in list(session.engine.delegates):
            farewell = make_envelope(
                conversation_id=session.conversation_id,
                sender_from=self.name,
                to=leg.name,
                events=[build_event(EventType.BYE, clock=self.clock)],
            )
            try:
                self.send(leg.url, farewell)
            except ProtocolError:
                pass
        session.engine.delegates.clear()

    def _respond(self, env: ConversationEnvelope,
                 events: list) -> ConversationEnvelope:
        return make_envelope(
            conversation_id=env.conversation_id,
            sender_from=self.name,
            to=env.sender_from,
            events=events,
            response_code=ResponseCode(200, "OK"),
        )


# -- HTTP binding ----------------------------------------------------------

def http_send(url: str, env: ConversationEnvelope,
              timeout: float = 10.0) -> ConversationEnvelope:
    """POST an envelope, return the parsed response envelope."""
    body = serialize_envelope(env).encode("utf-8")
    try:
        resp = requests.post(url, data=body,
                             headers={"Content-Type": "application/json"},
                             timeout=timeout)
    except requests.exceptions.Timeout as exc:
        raise TransportTimeoutError(f"no response from {url}") from exc
    except requests.exceptions.RequestException as exc:
        raise ConnectFailureError(f"cannot reach {url}: {exc}") from exc
    if resp.status_code != 200:
        raise InvalidResponseEnvelopeError(
            f"{url} answered HTTP {resp.status_code}: {resp.text[:200]}")
    try:
        return parse_envelope(resp.text)
    except (EnvelopeSyntaxError, SchemaViolationError) as exc:
        raise InvalidResponseEnvelopeError(f"{url} answered a non-envelope: {exc}") from exc


class _AgentRequestHandler(BaseHTTPRequestHandler):
    service: AgentService
    static_dir: Optional[Path] = None
    protocol_version = "HTTP/1.1"

    def do_POST(self):  # noqa: N802  (http.server naming)
        length = int(self.headers.get("Content-Length") or 0)
        body = self.rfile.read(length)
        status, payload = self.service.handle_raw(body)
        self._reply(status, payload, "application/json")

    def do_OPTIONS(self):  # noqa: N802
        # CORS preflight: browser consoles may target a gateway on another port
        self.send_response(204)
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Allow-Methods", "POST, GET, OPTIONS")
        self.send_header("Access-Control-Allow-Headers", "Content-Type")
        self.send_header("Content-Length", "0")
        self.end_headers()

    def do_GET(self):  # noqa: N802
        if self.static_dir is not None and self.path.startswith("/console"):
            rel = self.path[len("/console"):].lstrip("/") or "index.html"
            rel = rel.split("?", 1)[0]
            target = (self.static_dir / rel).resolve()
            if self.static_dir.resolve() in target.parents or \
                    target == self.static_dir.resolve():
                if target.is_file():
                    ctype = {
                        ".html": "text/html", ".js": "text/javascript",
                        ".css": "text/css", ".json": "application/json",
                    }.get(target.suffix, "application/octet-stream")
                    self._reply(200, target.read_bytes(), ctype)
                    return
            self._reply(404, b"not found", "text/plain")
            return
        self._reply(404, b"POST conversation envelopes to /", "text/plain")

    def _reply(self, status: int, payload: bytes, ctype: str) -> None:
        self.send_response(status)
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(payload)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, fmt, *args):
        pass  # request logging stays out of agent stdout


class AgentServer:
    """A running HTTP agent: thread-per-request, stoppable."""

    def __init__(self, service: AgentService, host: str = "127.0.0.1",
                 port: int = 0, static_dir: Optional[Union[str, Path]] = None):
        handler = type("BoundHandler", (_AgentRequestHandler,), {
            "service": service,
            "static_dir": Path(static_dir) if static_dir else None,
        })
        try:
            self._httpd = ThreadingHTTPServer((host, port), handler)
        except OSError as exc:
            raise BindFailureError(f"cannot bind {host}:{port}: {exc}") from exc
        self.service = service
        self.host = host
        self.port = self._httpd.server_address[1]
        self._thread: Optional[threading.Thread] = None
        self._accepting = False

    @property
    def url(self) -> str:
        return f"http://{self.host}:{self.port}/"

    def start(self) -> "AgentServer":
        self._accepting = True
        self._thread = threading.Thread(
            target=self._httpd.serve_forever, name=f"agent-{self.service.name}",
            daemon=True)
        self._thread.start()
        return self

    def serve_forever(self) -> None:
        self._accepting = True
        self._httpd.serve_forever()

    def stop(self) -> None:
        # shutdown() blocks forever unless serve_forever is actually running
        if self._accepting:
            self._accepting = False
            self._httpd.shutdown()
        self._httpd.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)


def serve(config: AgentConfig, host: str = "127.0.0.1", port: int = 0,
          static_dir: Optional[Union[str, Path]] = None,
          transcript_dir: Optional[Union[str, Path]] = None,
          manifests_path: Optional[Union[str, Path]] = None,
          clock: Optional[Clock] = None) -> AgentServer:
    transcript = TranscriptWriter(transcript_dir, clock=clock) if transcript_dir \
        else NullTranscriptWriter()
    service = AgentService(config, send=http_send, transcript=transcript,
                           clock=clock, manifests_path=manifests_path)
    return AgentServer(service, host=host, port=port, static_dir=static_dir).start()


# -- in-process binding ----------------------------------------------------

class LoopbackNetwork:
    """In-process mesh: services addressed by loop:// URLs, no sockets.

    Also doubles as the name resolver for routes that reference agents by
    name instead of URL.
    """

    def __init__(self, transcript: Optional[TranscriptWriter] = None,
                 clock: Optional[Clock] = None):
        self.transcript = transcript or NullTranscriptWriter()
        self.clock = clock or utc_now_iso
        self._services: dict[str, AgentService] = {}
        self._by_name: dict[str, str] = {}

    def add_agent(self, config: AgentConfig,
                  manifests_path: Optional[Union[str, Path]] = None) -> AgentService:
        url = config.endpoint or f"loop://{config.name.lower()}"
        config.endpoint = url
        service = AgentService(
            config, send=self.send, transcript=self.transcript, clock=self.clock,
            resolve_agent=self.resolve, manifests_path=manifests_path)
        self._services[url] = service
        self._by_name[config.name] = url
        return service

    def resolve(self, name: str) -> Optional[str]:
        return self._by_name.get(name)

    def service_for(self, name: str) -> Optional[AgentService]:
        url = self._by_name.get(name)
        return self._services.get(url) if url else None

    def send(self, url: str, env: ConversationEnvelope) -> ConversationEnvelope:
        service = self._services.get(url)
        if service is None:
            if url.startswith("http://") or url.startswith("https://"):
                return http_send(url, env)
            raise ConnectFailureError(f"no agent at {url}")
        return service.handle_envelope(env)


# -- demanding-side helpers ------------------------------------------------

class ClientSession:
    """The human user's proxy: a demanding agent driving one conversation.

    Tracks who holds the floor from the gateway's response events: an invite
    moves the floor to the invited specialist, a bye moves it back to the
    gateway, and a bye spoken by the gateway itself ends the session.
    """

    def __init__(self, send: SendFn, gateway_url: str, gateway_name: str,
                 user_name: str = "user", conversation_id: Optional[str] = None,
                 clock: Optional[Clock] = None,
                 transcript: Optional[TranscriptWriter] = None):
        self.send = send
        self.gateway_url = gateway_url
        self.gateway_name = gateway_name
        self.user_name = user_name
        self.conversation_id = conversation_id or new_conversation_id()
        self.clock = clock or utc_now_iso
        self.transcript = transcript or NullTranscriptWriter()
        self.state = DemandingState.IDLE
        self.floor = gateway_name
        self.closed = False

    def _post(self, env: ConversationEnvelope) -> ConversationEnvelope:
        self.transcript.record(self.user_name, "out", self.gateway_name, env)
        response = self.send(self.gateway_url, env)
        self.transcript.record(self.user_name, "in", self.gateway_name, response)
        return response

    def start(self) -> ConversationEnvelope:
        """Join the conversation with a bare invite (gateway may greet back)."""
        env = make_envelope(
            conversation_id=self.conversation_id,
            sender_from=self.user_name,
            to=self.gateway_name,
            events=[build_event(EventType.INVITE, self.gateway_url, clock=self.clock)],
        )
        self.state, _ = demanding_step(self.state, FsmInput(InputKind.SENT_INVITE))
        response = self._post(env)
        self._consume(response)
        return response

    def say(self, text: str, whisper: Optional[str] = None) -> ConversationEnvelope:
        events = []
        if self.state is DemandingState.IDLE:
            events.append(build_event(EventType.INVITE, self.gateway_url,
                                      clock=self.clock))
            self.state, _ = demanding_step(self.state, FsmInput(InputKind.SENT_INVITE))
        events.append(build_event(
            EventType.UTTERANCE, make_dialog_event(self.user_name, text),
            clock=self.clock))
        if whisper:
            events.append(build_event(
                EventType.WHISPER, make_dialog_event(self.user_name, whisper),
                clock=self.clock))
        env = make_envelope(
            conversation_id=self.conversation_id,
            sender_from=self.user_name,
            to=self.gateway_name,
            events=events,
        )
        self.state, _ = demanding_step(
            self.state, FsmInput(InputKind.SENT_UTTERANCE_OR_WHISPER))
        response = self._post(env)
        self._consume(response)
        return response

    def bye(self) -> ConversationEnvelope:
        env = make_envelope(
            conversation_id=self.conversation_id,
            sender_from=self.user_name,
            to=self.gateway_name,
            events=[build_event(EventType.BYE, clock=self.clock)],
        )
        self.closed = True
        self.state = DemandingState.IDLE
        return self._post(env)

    def _consume(self, response: ConversationEnvelope) -> None:
        saw_response = False
        gateway_left = False
        for event in response.events:
            if event.event_type is EventType.INVITE:
                name = event.to
                if not name and isinstance(event.payload, InviteTarget):
                    name = event.payload.url
                if name:
                    self.floor = name
            elif event.event_type in (EventType.UTTERANCE, EventType.WHISPER):
                saw_response = True
            elif event.event_type is EventType.BYE:
                speaker = ""
                if isinstance(event.payload, DialogEvent):
                    speaker = event.payload.speaker_id
                if speaker and speaker != self.gateway_name:
                    # A specialist left; the gateway holds the floor again.
                    self.floor = self.gateway_name
                else:
                    gateway_left = True
        if saw_response:
            self.state, _ = demanding_step(
                self.state, FsmInput(InputKind.RECEIVED_RESPONSE))
        if gateway_left:
            if self.state is DemandingState.CONSUMING_RESPONSE:
                self.state, _ = demanding_step(
                    self.state, FsmInput(InputKind.RECEIVED_BYE))
            else:
                self.state = DemandingState.IDLE
            self.floor = self.gateway_name
            self.closed = True

    def texts_of(self, response: ConversationEnvelope,
                 include_whispers: bool = False) -> list[tuple[str, str]]:
        """(speaker, text) pairs of a response, in order."""
        kinds = (EventType.UTTERANCE, EventType.WHISPER) if include_whispers \
            else (EventType.UTTERANCE,)
        out = []
        for event in response.events:
            if event.event_type in kinds and isinstance(event.payload, DialogEvent):
                out.append((event.payload.speaker_id, extract_text(event.payload)))
        return out


class DiscoveryClient:
    """Finds a specialist through registries, driving the discovery machine.

    Searches breadth-first across indirect referrals with a visited set and a
    depth cap, resending unanswered queries a bounded number of times; then
    confirms the winner by fetching its manifest.
    """

    def __init__(self, send: SendFn, requester: str,
                 clock: Optional[Clock] = None, max_depth: int = 3,
                 max_resends: int = 3):
        self.send = send
        self.requester = requester
        self.clock = clock or utc_now_iso
        self.max_depth = max_depth
        self.max_resends = max_resends

    def _exchange(self, url: str, env: ConversationEnvelope, state: DiscoveryState,
                  sent_input: InputKind, resend_action: FsmAction
                  ) -> tuple[ConversationEnvelope, DiscoveryState]:
        state, _ = discovery_step(state, FsmInput(sent_input))
        attempts = 0
        while True:
            try:
                return self.send(url, env), state
            except TransportTimeoutError:
                state, action = discovery_step(state, FsmInput(InputKind.RESEND_TICK))
                assert action is resend_action
                attempts += 1
                if attempts > self.max_resends:
                    raise DiscoveryFailedError(
                        f"{url} did not answer after {attempts} attempts")

    def find_assistants(self, registry_url: str, query: str,
                        conversation_id: str) -> tuple[list, DiscoveryState]:
        env = make_envelope(
            conversation_id=conversation_id,
            sender_from=self.requester,
            to=registry_url,
            events=[build_event(
                EventType.FIND_ASSISTANT,
                make_dialog_event(self.requester, query), clock=self.clock)],
        )
        response, state = self._exchange(
            registry_url, env, DiscoveryState.ASSISTANT_SEARCH,
            InputKind.SENT_FIND_ASSISTANT, FsmAction.RESEND_FIND_ASSISTANT)
        proposal = response.first_event(EventType.PROPOSE_ASSISTANT)
        if proposal is None:
            raise DiscoveryFailedError(
                f"{registry_url} answered without candidates")
        candidates = proposal.payload or []
        kind = referral_kind(candidates)
        if kind is None:
            return [], state
        referral = Referral.DIRECT if kind.value == "direct" else Referral.INDIRECT
        state, _ = discovery_step(
            state, FsmInput(InputKind.RECEIVED_PROPOSE_ASSISTANT, referral))
        return candidates, state

    def request_manifest(self, url: str, conversation_id: str):
        env = make_envelope(
            conversation_id=conversation_id,
            sender_from=self.requester,
            events=[build_event(EventType.REQUEST_MANIFEST, to=url, clock=self.clock)],
        )
        response, state = self._exchange(
            url, env, DiscoveryState.CAPABILITY_SEARCH,
            InputKind.SENT_REQUEST_MANIFEST, FsmAction.RESEND_REQUEST_MANIFEST)
        published = response.first_event(EventType.PUBLISH_MANIFEST)
        if published is None:
            raise DiscoveryFailedError(f"{url} did not publish a manifest")
        discovery_step(state, FsmInput(InputKind.RECEIVED_PUBLISH_MANIFEST))
        return published.payload

    def find_specialist(self, registry_url: str, query: str,
                        conversation_id: str) -> tuple[str, str, object]:
        """(url, conversational name, manifest) of the best direct candidate."""
        visited: set[str] = set()
        frontier = [registry_url]
        for _ in range(self.max_depth + 1):
            next_frontier: list[str] = []
            for url in frontier:
                if url in visited:
                    continue
                visited.add(url)
                try:
                    candidates, _ = self.find_assistants(url, query, conversation_id)
                except TransportError:
                    continue
                direct = [c for c in candidates
                          if c.servicing_mode.value == "direct"]
                if direct:
                    best = direct[0]
                    manifest = self.request_manifest(best.url, conversation_id)
                    return best.url, best.conversational_name, manifest
                next_frontier.extend(
                    c.url for c in candidates if c.url not in visited)
            if not next_frontier:
                break
            frontier = next_frontier
        raise DiscoveryFailedError(
            f"no agent found for {query!r} within depth {self.max_depth}")
