"""Operator command line.

One subcommand per job: check envelope files, run an agent service, fire
ad-hoc envelopes at a live agent, query a discovery registry, replay a
scenario file, or turn a transcript into a sequence diagram. Every
subcommand grows a `--json` switch for machine-readable output.

Exit codes: 0 success, 1 operational failure (network, bad file, failed
expectations), 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import yaml

from .envelope import (
    EventType,
    ProtocolError,
    Violation,
    build_event,
    envelope_to_wire,
    make_dialog_event,
    make_envelope,
    new_conversation_id,
    parse_envelope,
    parse_manifest,
    serialize_envelope,
    serialize_manifest,
    validate_envelope,
    validate_manifest,
)
from .harness import export_sequence_diagram, load_scenario, run_scenario
from .runtime import AgentConfig, ConfigError
from .transport import (
    TIMEOUT_ENV_VAR,
    DiscoveryClient,
    http_send,
    read_transcript,
    serve,
)

SEND_KINDS = ("utterance", "whisper", "bye")


def _http_timeout() -> float:
    raw = os.environ.get(TIMEOUT_ENV_VAR)
    if raw:
        try:
            return float(raw)
        except ValueError:
            pass
    return 10.0


def _send_over_http(url, env):
    return http_send(url, env, timeout=_http_timeout())


def _emit(args: argparse.Namespace, payload: dict, text_lines: list[str]) -> None:
    if args.json:
        print(json.dumps(payload, indent=2, ensure_ascii=False))
    else:
        for line in text_lines:
            print(line)


# -- validate ----------------------------------------------------------------

def _violations_for_document(doc: object) -> list[Violation]:
    # Envelope files and standalone manifest files both live in the corpus;
    # tell them apart by their top-level keys.
    if isinstance(doc, dict) and "ovon" not in doc and "identification" in doc:
        try:
            manifest = parse_manifest(json.dumps(doc))
        except ProtocolError as exc:
            return [Violation("manifest", str(exc))]
        return validate_manifest(manifest)
    try:
        env = parse_envelope(doc if isinstance(doc, dict) else json.dumps(doc))
    except ProtocolError as exc:
        return [Violation("envelope", str(exc))]
    return validate_envelope(env)


def _validate_jsonl(path: Path) -> list[tuple[int, Violation]]:
    found: list[tuple[int, Violation]] = []
    with path.open(encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                found.append((lineno, Violation("line", f"not JSON: {exc}")))
                continue
            # A transcript record wraps its envelope; a bare envelope is
            # accepted as-is so console exports and raw captures both work.
            doc = record.get("envelope", record) if isinstance(record, dict) else record
            found.extend((lineno, v) for v in _violations_for_document(doc))
    return found


def cmd_validate(args: argparse.Namespace) -> int:
    path = Path(args.path)
    if path.suffix == ".jsonl":
        found = _validate_jsonl(path)
    else:
        found = [(1, v) for v in _violations_for_document(
            json.loads(path.read_text(encoding="utf-8")))]
    lines = [f"{path}:{lineno}: {violation}" for lineno, violation in found]
    lines.append(f"{len(found)} violation(s) in {path}")
    _emit(args, {
        "file": str(path),
        "ok": not found,
        "violations": [
            {"line": lineno, "path": v.path, "message": v.message}
            for lineno, v in found
        ],
    }, lines)
    return 0 if not found else 1


# -- serve -------------------------------------------------------------------

def _load_agent_config(path: Path) -> AgentConfig:
    raw = path.read_text(encoding="utf-8")
    data = yaml.safe_load(raw) if path.suffix in (".yaml", ".yml") else json.loads(raw)
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: agent config must be a mapping")
    return AgentConfig.from_dict(data, base_dir=path.parent)


def cmd_serve(args: argparse.Namespace) -> int:
    config = _load_agent_config(Path(args.config))
    server = serve(
        config,
        host=args.host,
        port=args.port,
        static_dir=args.static_dir,
        transcript_dir=args.transcripts,
        manifests_path=args.manifests,
    )
    # Single-line announcement so a supervisor can readline() the address.
    if args.json:
        print(json.dumps({"url": server.url, "agent": config.name}))
    else:
        print(f"{config.name} listening on {server.url}")
    sys.stdout.flush()
    try:
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
    return 0


# -- send --------------------------------------------------------------------

def _build_probe(args: argparse.Namespace):
    conversation_id = args.conversation or new_conversation_id()
    kind = EventType(args.kind)
    events = []
    if not args.no_invite:
        events.append(build_event(EventType.INVITE, args.url))
    events.append(build_event(kind, make_dialog_event(args.speaker, args.text)))
    return make_envelope(conversation_id=conversation_id,
                         sender_from=args.speaker, events=events)


def cmd_send(args: argparse.Namespace) -> int:
    if args.file:
        env = parse_envelope(Path(args.file).read_text(encoding="utf-8"))
    else:
        env = _build_probe(args)
    response = _send_over_http(args.url, env)
    problems = validate_envelope(response)
    if problems:
        for violation in problems:
            print(f"response invalid: {violation}", file=sys.stderr)
        return 1
    _emit(args, {"response": envelope_to_wire(response)},
          [serialize_envelope(response, indent=2)])
    return 0


# -- discover / manifest -----------------------------------------------------

def cmd_discover(args: argparse.Namespace) -> int:
    client = DiscoveryClient(_send_over_http, requester="cli-user")
    conversation_id = args.conversation or new_conversation_id()
    candidates, _ = client.find_assistants(
        args.registry, " ".join(args.query), conversation_id)
    width = max([len(c.conversational_name) for c in candidates], default=4)
    lines = [f"{c.conversational_name:<{width}}  {c.servicing_mode.value:<8}  {c.url}"
             for c in candidates]
    lines.append(f"{len(candidates)} candidate(s)")
    _emit(args, {"candidates": [c.to_wire() for c in candidates]}, lines)
    return 0


def cmd_manifest(args: argparse.Namespace) -> int:
    client = DiscoveryClient(_send_over_http, requester="cli-user")
    conversation_id = args.conversation or new_conversation_id()
    manifest = client.request_manifest(args.url, conversation_id)
    ident = manifest.identification
    lines = [
        f"name:         {ident.conversational_name}",
        f"role:         {ident.role}",
        f"service:      {ident.service_name}",
        f"organization: {ident.organization}",
        f"endpoint:     {ident.service_endpoint}",
        f"synopsis:     {ident.synopsis}",
    ]
    for i, capability in enumerate(manifest.capabilities):
        lines.append(f"capability[{i}]:")
        lines.append(f"  keywords:   {', '.join(capability.keywords)}")
        if capability.languages:
            lines.append(f"  languages:  {', '.join(capability.languages)}")
        if capability.descriptive_texts:
            lines.append(f"  describes:  {'; '.join(capability.descriptive_texts)}")
    _emit(args, {"manifest": json.loads(serialize_manifest(manifest))}, lines)
    return 0


# -- scenario / diagram --------------------------------------------------------

def cmd_scenario(args: argparse.Namespace) -> int:
    spec = load_scenario(args.path)
    report = run_scenario(
        spec,
        freeze_time=args.freeze_time,
        transcript_dir=args.transcripts,
        reports_dir=args.reports,
    )
    _emit(args, report.to_json(), report.lines())
    return 0 if report.passed else 1


def cmd_diagram(args: argparse.Namespace) -> int:
    aliases = {}
    for mapping in args.alias:
        url, _, name = mapping.partition("=")
        if not url or not name:
            raise ConfigError(f"--alias wants URL=NAME, got {mapping!r}")
        aliases[url] = name
    entries = read_transcript(args.transcript)
    source = export_sequence_diagram(entries, aliases or None)
    participants = [line.split('"')[1] for line in source.splitlines()
                    if line.startswith('participant "')]
    _emit(args, {"participants": participants, "source": source},
          [source.rstrip("\n")])
    return 0


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ovonmesh",
        description="Work with conversation-envelope agents from the terminal.")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_json(p: argparse.ArgumentParser) -> argparse.ArgumentParser:
        p.add_argument("--json", action="store_true",
                       help="emit machine-readable JSON instead of text")
        return p

    p = with_json(sub.add_parser(
        "validate", help="check an envelope file or transcript JSONL"))
    p.add_argument("path", help=".json envelope or .jsonl transcript")
    p.set_defaults(handler=cmd_validate)

    p = with_json(sub.add_parser("serve", help="run one agent as an HTTP service"))
    p.add_argument("config", help="agent config file (YAML or JSON)")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=0,
                   help="listen port (0 picks a free one)")
    p.add_argument("--static-dir", default=None,
                   help="directory served under /console")
    p.add_argument("--transcripts", default="transcripts",
                   help="directory for conversation logs")
    p.add_argument("--manifests", default=None,
                   help="manifest store for a registry agent")
    p.set_defaults(handler=cmd_serve)

    p = with_json(sub.add_parser("send", help="send one envelope to an agent"))
    p.add_argument("url", help="agent endpoint")
    p.add_argument("file", nargs="?", default=None,
                   help="envelope JSON file to send as-is")
    p.add_argument("--text", default=None, help="inline message text")
    p.add_argument("--kind", choices=SEND_KINDS, default="utterance")
    p.add_argument("--speaker", default="cli-user")
    p.add_argument("--conversation", default=None,
                   help="conversation id (defaults to a fresh one)")
    p.add_argument("--no-invite", action="store_true",
                   help="skip the invite event on inline probes")
    p.set_defaults(handler=cmd_send)

    p = with_json(sub.add_parser("discover", help="ask a registry for assistants"))
    p.add_argument("registry", help="registry endpoint")
    p.add_argument("query", nargs="+", help="capability query text")
    p.add_argument("--conversation", default=None)
    p.set_defaults(handler=cmd_discover)

    p = with_json(sub.add_parser("manifest", help="fetch and print an agent manifest"))
    p.add_argument("url", help="agent endpoint")
    p.add_argument("--conversation", default=None)
    p.set_defaults(handler=cmd_manifest)

    p = with_json(sub.add_parser("scenario", help="replay a scenario file"))
    p.add_argument("path", help="scenario YAML or JSON")
    p.add_argument("--freeze-time", action="store_true",
                   help="pin timestamps for byte-stable transcripts")
    p.add_argument("--transcripts", default="transcripts")
    p.add_argument("--reports", default="reports")
    p.set_defaults(handler=cmd_scenario)

    p = with_json(sub.add_parser(
        "diagram", help="render a transcript as sequence-diagram source"))
    p.add_argument("transcript", help="transcript .jsonl file")
    p.add_argument("--alias", action="append", default=[], metavar="URL=NAME",
                   help="rewrite an endpoint URL to an agent name (repeatable)")
    p.set_defaults(handler=cmd_diagram)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "send" and not args.file and args.text is None:
        parser.error("send needs an envelope file or --text")
    try:
        return args.handler(args)
    except (ProtocolError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
