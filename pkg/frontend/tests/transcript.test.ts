import { expect, test } from "vitest";

import { makeEnvelope, utteranceEvent } from "../src/envelope.js";
import { LogEntry } from "../src/state.js";
import {
  exportEnabled,
  transcriptBlob,
  transcriptLines,
} from "../src/transcript.js";

function session(turns: number): LogEntry[] {
  const log: LogEntry[] = [];
  for (let i = 0; i < turns; i++) {
    log.push({
      direction: "out",
      ts: `t${2 * i}`,
      envelope: makeEnvelope("conv_9", "user",
        [utteranceEvent("user", `turn ${i}`, "t0")], "http://gw/"),
    });
    log.push({
      direction: "in",
      ts: `t${2 * i + 1}`,
      envelope: makeEnvelope("conv_9", "Cassandra",
        [utteranceEvent("Cassandra", `reply ${i}`, "t0")]),
    });
  }
  return log;
}

test("a three turn session exports six lines", () => {
  const lines = transcriptLines("user", "Cassandra", session(3));
  expect(lines).toHaveLength(6);
});

test("lines carry the transcript record shape in order", () => {
  const lines = transcriptLines("user", "Cassandra", session(2));
  const records = lines.map((l) => JSON.parse(l));
  expect(records.map((r) => r.seq)).toEqual([0, 1, 2, 3]);
  expect(records.map((r) => r.direction))
    .toEqual(["out", "in", "out", "in"]);
  for (const record of records) {
    expect(record.agent).toBe("user");
    expect(record.peer).toBe("Cassandra");
    expect(record.envelope.ovon.conversation.id).toBe("conv_9");
    expect(typeof record.ts).toBe("string");
  }
});

test("export is disabled until something was said", () => {
  expect(exportEnabled([])).toBe(false);
  expect(exportEnabled(session(1))).toBe(true);
});

test("the blob is newline-terminated JSONL", () => {
  const blob = transcriptBlob("user", "Cassandra", session(1));
  expect(blob.endsWith("\n")).toBe(true);
  expect(blob.trimEnd().split("\n")).toHaveLength(2);
});
