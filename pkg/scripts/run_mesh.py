#!/usr/bin/env python3
"""Boot a scenario's agents as live HTTP services and keep them running.

The gateway (mediator) binds a stable port and serves the browser console
when a built bundle is available; specialists and registries take ephemeral
ports, and the mediator's name-based routes are rewritten to the bound URLs.
Stop everything with Ctrl-C.

Agents that peer with each other by name must be startable in one pass;
routes and peers referencing agents started in the same run are resolved,
anything else is left to the explicit URLs in the scenario file.
"""
from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO / "src"))

from ovonmesh.harness import load_scenario  # noqa: E402  (path bootstrap above)
from ovonmesh.registry import PeerRegistry  # noqa: E402
from ovonmesh.transport import AgentServer, serve  # noqa: E402


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--scenario",
                        default=str(REPO / "scenarios" / "smart_errands.yaml"),
                        help="scenario file naming the agents to boot")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8700,
                        help="port for the gateway agent")
    parser.add_argument("--console", default=str(REPO / "frontend" / "dist"),
                        help="static bundle directory served at /console")
    parser.add_argument("--transcripts", default=str(REPO / "transcripts"))
    args = parser.parse_args(argv)
    sys.stdout.reconfigure(line_buffering=True)  # announcements drive tooling

    spec = load_scenario(args.scenario)
    console_dir = Path(args.console)
    static_dir = console_dir if console_dir.is_dir() else None

    servers: list[AgentServer] = []
    urls: dict[str, str] = {}
    try:
        # Specialists and registries first so the gateway can point at them.
        for agent in spec.agents:
            if agent.config.name == spec.gateway:
                continue
            server = serve(agent.config, host=args.host, port=0,
                           transcript_dir=args.transcripts,
                           manifests_path=agent.manifests)
            servers.append(server)
            urls[agent.config.name] = server.url
            print(f"  {agent.config.name:<12} {server.url}")

        for agent in spec.agents:
            if agent.config.name != spec.gateway:
                continue
            config = agent.config
            for route in config.routes:
                if route.agent and route.agent in urls:
                    route.url = urls[route.agent]
                if route.via and route.via in urls:
                    route.via = urls[route.via]
            config.peers = [
                PeerRegistry(p.name, urls.get(p.name, p.url))
                for p in config.peers
            ]
            server = serve(config, host=args.host, port=args.port,
                           static_dir=static_dir,
                           transcript_dir=args.transcripts,
                           manifests_path=agent.manifests)
            servers.append(server)
            urls[config.name] = server.url
            print(f"  {config.name:<12} {server.url}  (gateway)")
            if static_dir is not None:
                print(f"\nconsole: {server.url}console")
            else:
                print(f"\nno console bundle at {console_dir}; "
                      "build one with: cd frontend && npm run build")

        print("\nCtrl-C to stop")
        while True:
            time.sleep(1)
    except KeyboardInterrupt:
        print("\nstopping")
    finally:
        for server in servers:
            server.stop()
    return 0


if __name__ == "__main__":
    sys.exit(main())
