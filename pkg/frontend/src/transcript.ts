/** Session export in the transcript format the diagram tooling reads:
 * one JSON object per line, sequence-numbered, both directions recorded
 * from the user's side.
 */

import { LogEntry } from "./state.js";

export function exportEnabled(log: readonly LogEntry[]): boolean {
  return log.length > 0;
}

export function transcriptLines(
  userName: string, gatewayName: string,
  log: readonly LogEntry[]): string[] {
  return log.map((entry, seq) =>
    JSON.stringify({
      seq,
      ts: entry.ts,
      agent: userName,
      direction: entry.direction,
      peer: gatewayName,
      envelope: entry.envelope,
    }));
}

export function transcriptBlob(
  userName: string, gatewayName: string,
  log: readonly LogEntry[]): string {
  return transcriptLines(userName, gatewayName, log).join("\n") + "\n";
}
