#!/usr/bin/env python3
"""Replay every scenario file and leave reports plus sequence diagrams behind.

Exit status is nonzero when any expectation fails, so this doubles as a
conformance check in automation.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO / "src"))

from ovonmesh.harness import (  # noqa: E402  (path bootstrap above)
    export_sequence_diagram,
    load_scenario,
    run_scenario,
)
from ovonmesh.transport import read_transcript  # noqa: E402


def scenario_files(directory: Path) -> list[Path]:
    return sorted(
        p for p in directory.iterdir()
        if p.suffix in (".yaml", ".yml", ".json") and p.is_file())


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--scenarios", default=str(REPO / "scenarios"),
                        help="directory of scenario files")
    parser.add_argument("--transcripts", default=str(REPO / "transcripts"))
    parser.add_argument("--reports", default=str(REPO / "reports"))
    parser.add_argument("--freeze-time", action="store_true",
                        help="pin timestamps for byte-stable transcripts")
    args = parser.parse_args(argv)

    files = scenario_files(Path(args.scenarios))
    if not files:
        print(f"no scenario files in {args.scenarios}", file=sys.stderr)
        return 1

    reports_dir = Path(args.reports)
    reports_dir.mkdir(parents=True, exist_ok=True)
    all_passed = True
    for path in files:
        spec = load_scenario(path)
        report = run_scenario(spec, freeze_time=args.freeze_time,
                              transcript_dir=args.transcripts,
                              reports_dir=reports_dir)
        for line in report.lines():
            print(line)
        entries = read_transcript(report.transcript_path)
        if entries:
            aliases = {a.config.endpoint: a.config.name for a in spec.agents}
            diagram = export_sequence_diagram(entries, aliases)
            diagram_path = reports_dir / f"{spec.name}.puml"
            diagram_path.write_text(diagram, encoding="utf-8")
            print(f"scenario {spec.name}: diagram written to {diagram_path}")
        print()
        all_passed = all_passed and report.passed
    return 0 if all_passed else 1


if __name__ == "__main__":
    sys.exit(main())
