"""Command-line driver tests.

Everything runs `main(argv)` in-process so exit codes and output are easy to
assert; one test boots the real `serve` subcommand in a subprocess to prove
the operator path works end to end.
"""
from __future__ import annotations

import json
import signal
import subprocess
import sys
from pathlib import Path

import pytest
import yaml

from ovonmesh.cli import main
from ovonmesh.envelope import parse_envelope, validate_envelope
from ovonmesh.harness import load_scenario, run_scenario
from ovonmesh.transport import serve

REPO = Path(__file__).resolve().parent.parent
CORPUS = REPO / "corpus"
SCENARIOS = REPO / "scenarios"


def run_cli(capsys, *argv: str) -> tuple[int, str, str]:
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


@pytest.fixture(scope="module")
def library_host(tmp_path_factory):
    """One live HTTP agent: a registry that also publishes the book manifest."""
    config_data = {
        "name": "Libby",
        "role": "registry",
        "manifest": json.loads((CORPUS / "listing4.json").read_text()),
    }
    from ovonmesh.runtime import AgentConfig
    server = serve(
        AgentConfig.from_dict(config_data),
        host="127.0.0.1", port=0,
        transcript_dir=tmp_path_factory.mktemp("cli-transcripts"),
        manifests_path=SCENARIOS / "fixtures" / "library_manifests.json",
    )
    yield server.url
    server.stop()


class TestValidate:
    def test_corpus_envelope_passes(self, capsys):
        code, out, _ = run_cli(capsys, "validate", str(CORPUS / "listing2.json"))
        assert code == 0
        assert "0 violation(s)" in out

    def test_every_corpus_listing_passes(self, capsys):
        for path in sorted(CORPUS.glob("listing*.json")):
            assert run_cli(capsys, "validate", str(path))[0] == 0, path.name

    def test_empty_events_is_one_violation(self, capsys, tmp_path):
        bad = tmp_path / "empty_events.json"
        bad.write_text(json.dumps({"ovon": {
            "conversation": {"id": "conv_x"},
            "sender": {"from": "someone"},
            "events": [],
        }}))
        code, out, _ = run_cli(capsys, "validate", str(bad))
        assert code == 1
        assert "1 violation(s)" in out

    def test_unparseable_json_file_fails(self, capsys, tmp_path):
        bad = tmp_path / "broken.json"
        bad.write_text("{nope")
        code, _, err = run_cli(capsys, "validate", str(bad))
        assert code == 1
        assert "error:" in err

    def test_jsonl_reports_line_numbers(self, capsys, tmp_path):
        good = (CORPUS / "listing3.json").read_text().replace("\n", " ")
        log = tmp_path / "mixed.jsonl"
        log.write_text(good + "\n" + "not json at all\n")
        code, out, _ = run_cli(capsys, "validate", str(log))
        assert code == 1
        assert f"{log}:2:" in out

    def test_scenario_transcript_validates_clean(self, capsys, tmp_path):
        spec = load_scenario(SCENARIOS / "smart_library.yaml")
        report = run_scenario(spec, freeze_time=True,
                              transcript_dir=tmp_path / "transcripts")
        code, out, _ = run_cli(capsys, "validate", report.transcript_path)
        assert code == 0, out

    def test_json_output_shape(self, capsys):
        code, out, _ = run_cli(
            capsys, "validate", str(CORPUS / "listing3.json"), "--json")
        assert code == 0
        data = json.loads(out)
        assert data["ok"] is True and data["violations"] == []


class TestDiscover:
    def test_table_is_ranked(self, capsys, library_host):
        code, out, _ = run_cli(
            capsys, "discover", library_host, "books", "by", "Lydia", "Koidula")
        assert code == 0
        rows = [line.split()[0] for line in out.splitlines() if "http" in line]
        assert rows == ["Kaja", "Heli", "Kalev"]

    def test_json_output(self, capsys, library_host):
        code, out, _ = run_cli(
            capsys, "discover", library_host, "books", "--json")
        assert code == 0
        candidates = json.loads(out)["candidates"]
        assert candidates[0]["conversationalName"] == "Kaja"
        assert candidates[0]["servicingMode"] == "direct"

    def test_unreachable_registry_fails(self, capsys):
        code, _, err = run_cli(capsys, "discover", "http://127.0.0.1:9/", "books")
        assert code == 1
        assert "error:" in err


class TestManifest:
    def test_shows_role_from_host_manifest(self, capsys, library_host):
        code, out, _ = run_cli(capsys, "manifest", library_host)
        assert code == 0
        assert "Book Specialist" in out
        assert "Books and Authors AI agent" in out

    def test_json_output(self, capsys, library_host):
        code, out, _ = run_cli(capsys, "manifest", library_host, "--json")
        assert code == 0
        ident = json.loads(out)["manifest"]["identification"]
        assert ident["conversationalName"] == "smartlibrary"


class TestSend:
    def test_inline_probe_round_trip(self, capsys, library_host):
        code, out, _ = run_cli(
            capsys, "send", library_host, "--text", "hello over there",
            "--conversation", "conv_cli_probe")
        assert code == 0
        response = parse_envelope(out)
        assert validate_envelope(response) == []
        assert response.conversation_id == "conv_cli_probe"

    def test_envelope_file_sent_as_is(self, capsys, library_host):
        code, out, _ = run_cli(
            capsys, "send", library_host, str(CORPUS / "listing5.json"))
        assert code == 0
        assert "publishManifest" in out
        assert "smartlibrary" in out

    def test_json_flag_wraps_response(self, capsys, library_host):
        code, out, _ = run_cli(
            capsys, "send", library_host, "--text", "ping", "--json")
        assert code == 0
        assert "ovon" in json.loads(out)["response"]

    def test_inline_without_text_is_usage_error(self, capsys):
        with pytest.raises(SystemExit) as excinfo:
            main(["send", "http://127.0.0.1:9/"])
        assert excinfo.value.code == 2

    def test_unreachable_endpoint_fails(self, capsys):
        code, _, err = run_cli(
            capsys, "send", "http://127.0.0.1:9/", "--text", "hi")
        assert code == 1
        assert "error:" in err


class TestScenarioCommand:
    def test_passing_scenario_exits_zero(self, capsys, tmp_path):
        code, out, _ = run_cli(
            capsys, "scenario", str(SCENARIOS / "smart_library.yaml"),
            "--freeze-time",
            "--transcripts", str(tmp_path / "transcripts"),
            "--reports", str(tmp_path / "reports"))
        assert code == 0
        assert out.strip().endswith("passed")
        assert (tmp_path / "reports" / "smart_library.json").is_file()

    def test_failed_expectation_exits_nonzero(self, capsys, tmp_path):
        scenario = {
            "name": "never_said", "user": "U", "gateway": "G",
            "agents": [{"name": "G"}],
            "turns": [{"say": "echo this back"}],
            "expectations": [
                {"kind": "TextContains", "from": "G", "to": "U",
                 "substring": "something never said"},
            ],
        }
        path = tmp_path / "never_said.yaml"
        path.write_text(yaml.safe_dump(scenario))
        code, out, _ = run_cli(
            capsys, "scenario", str(path),
            "--transcripts", str(tmp_path / "transcripts"),
            "--reports", str(tmp_path / "reports"))
        assert code == 1
        assert "FAIL" in out

    def test_json_report(self, capsys, tmp_path):
        code, out, _ = run_cli(
            capsys, "scenario", str(SCENARIOS / "smart_errands.yaml"),
            "--freeze-time", "--json",
            "--transcripts", str(tmp_path / "transcripts"),
            "--reports", str(tmp_path / "reports"))
        assert code == 0
        data = json.loads(out)
        assert data["passed"] is True
        assert data["scenario"] == "smart_errands"


class TestDiagramCommand:
    @pytest.fixture()
    def errands_transcript(self, tmp_path) -> str:
        spec = load_scenario(SCENARIOS / "smart_errands.yaml")
        report = run_scenario(spec, freeze_time=True,
                              transcript_dir=tmp_path / "transcripts")
        return report.transcript_path

    def test_diagram_renders_all_parties(self, capsys, errands_transcript):
        code, out, _ = run_cli(capsys, "diagram", errands_transcript)
        assert code == 0
        assert out.startswith("@startuml")
        for name in ("Emmett", "Cassandra", "Pat", "Charles", "Sukanya", "Andrew"):
            assert f'participant "{name}"' in out
        assert '"Emmett" -> "Cassandra" : invite' in out

    def test_alias_rewrites_endpoints(self, capsys, tmp_path):
        spec = load_scenario(SCENARIOS / "smart_library.yaml")
        report = run_scenario(spec, freeze_time=True,
                              transcript_dir=tmp_path / "transcripts")
        code, out, _ = run_cli(
            capsys, "diagram", report.transcript_path,
            "--alias", "https://smartlibrary1.ee=Kaja",
            "--alias", "loop://juri=Juri",
            "--alias", "loop://andres=Andres")
        assert code == 0
        assert "loop://" not in out and "smartlibrary1.ee" not in out

    def test_bad_alias_is_an_error(self, capsys, errands_transcript):
        code, _, err = run_cli(
            capsys, "diagram", errands_transcript, "--alias", "nonsense")
        assert code == 1
        assert "URL=NAME" in err

    def test_json_output(self, capsys, errands_transcript):
        code, out, _ = run_cli(capsys, "diagram", errands_transcript, "--json")
        assert code == 0
        data = json.loads(out)
        assert "Cassandra" in data["participants"]
        assert data["source"].startswith("@startuml")


class TestServeSubcommand:
    def test_boot_probe_and_interrupt(self, tmp_path):
        config = tmp_path / "agent.yaml"
        config.write_text(yaml.safe_dump(
            {"name": "Gate", "greeting": "door is open"}))
        proc = subprocess.Popen(
            [sys.executable, "-m", "ovonmesh.cli", "serve", str(config),
             "--json", "--transcripts", str(tmp_path / "transcripts")],
            stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True)
        try:
            url = json.loads(proc.stdout.readline())["url"]
            code, out, _ = run_cli_noplugin(
                "send", url, "--text", "knock knock", "--speaker", "visitor")
            assert code == 0
            response = parse_envelope(out)
            assert validate_envelope(response) == []
        finally:
            proc.send_signal(signal.SIGINT)
            try:
                proc.wait(timeout=10)
            except subprocess.TimeoutExpired:
                proc.kill()
                raise
        assert proc.returncode == 0


def run_cli_noplugin(*argv: str) -> tuple[int, str, str]:
    """Run the CLI in a subprocess; for tests that already manage processes."""
    result = subprocess.run(
        [sys.executable, "-m", "ovonmesh.cli", *argv],
        capture_output=True, text=True, timeout=30)
    return result.returncode, result.stdout, result.stderr
