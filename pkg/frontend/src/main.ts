/** DOM wiring. All conversation logic lives in envelope.ts and state.ts;
 * this file only moves strings between the page and the log.
 */

import {
  makeEnvelope,
  newConversationId,
  inviteEvent,
  parseEnvelope,
  utteranceEvent,
} from "./envelope.js";
import {
  ConsoleState,
  LogEntry,
  chatMessages,
  floorHolder,
  replay,
  whisperMessages,
} from "./state.js";
import { exportEnabled, transcriptBlob } from "./transcript.js";

const params = new URLSearchParams(window.location.search);
const gatewayUrl = params.get("gateway") ?? `${window.location.origin}/`;
const userName = params.get("user") ?? "user";
const conversationId = newConversationId();

const log: LogEntry[] = [];
let inFlight = false;
let failedTurn: string | null = null;

const $ = (id: string): HTMLElement => {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el;
};

const messagesEl = $("messages");
const whispersEl = $("whispers");
const whisperCountEl = $("whisper-count");
const floorEl = $("floor");
const statusEl = $("status");
const noticeEl = $("notice");
const form = $("composer") as HTMLFormElement;
const input = $("say") as HTMLInputElement;
const sendBtn = $("send") as HTMLButtonElement;
const exportBtn = $("export") as HTMLButtonElement;
const retryBtn = $("retry") as HTMLButtonElement;

function messageNode(speaker: string, text: string, kind: string): HTMLElement {
  const li = document.createElement("li");
  li.className = `msg ${kind}${speaker === userName ? " mine" : ""}`;
  if (kind !== "system") {
    const who = document.createElement("span");
    who.className = "speaker";
    who.textContent = speaker || "?";
    li.appendChild(who);
  }
  const body = document.createElement("span");
  body.className = "text";
  body.textContent = text;
  li.appendChild(body);
  return li;
}

function render(): void {
  const state: ConsoleState = replay(gatewayUrl, conversationId, log);

  messagesEl.replaceChildren(
    ...chatMessages(state).map((m) => messageNode(m.speaker, m.text, m.kind)));
  const whispers = whisperMessages(state);
  whispersEl.replaceChildren(
    ...whispers.map((m) => messageNode(m.speaker, m.text, "whisper")));
  whisperCountEl.textContent = String(whispers.length);

  floorEl.textContent = floorHolder(state);
  statusEl.textContent = inFlight ? "awaiting reply" : "connected";
  statusEl.className = inFlight ? "busy" : "ok";

  sendBtn.disabled = inFlight;
  exportBtn.disabled = !exportEnabled(log);
  retryBtn.hidden = failedTurn === null;
  noticeEl.hidden = failedTurn === null;
  messagesEl.scrollTop = messagesEl.scrollHeight;
}

async function sendTurn(text: string): Promise<void> {
  if (inFlight || !text) return;
  inFlight = true;
  failedTurn = null;
  const now = new Date().toISOString();
  const events = log.length === 0
    ? [inviteEvent(gatewayUrl), utteranceEvent(userName, text, now)]
    : [utteranceEvent(userName, text, now)];
  const envelope = makeEnvelope(conversationId, userName, events, gatewayUrl);
  log.push({ direction: "out", ts: now, envelope });
  render();
  try {
    const resp = await fetch(gatewayUrl, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(envelope),
    });
    if (!resp.ok) throw new Error(`gateway answered HTTP ${resp.status}`);
    const reply = parseEnvelope(await resp.text());
    log.push({ direction: "in", ts: new Date().toISOString(), envelope: reply });
  } catch (err) {
    // keep the turn so one click can retry it
    log.pop();
    failedTurn = text;
    noticeEl.firstChild && (noticeEl.firstChild.textContent =
      `could not reach ${gatewayUrl}: ${(err as Error).message} `);
  } finally {
    inFlight = false;
    render();
  }
}

form.addEventListener("submit", (ev) => {
  ev.preventDefault();
  const text = input.value.trim();
  if (!text) return;
  input.value = "";
  void sendTurn(text);
});

retryBtn.addEventListener("click", () => {
  const text = failedTurn;
  failedTurn = null;
  if (text) void sendTurn(text);
});

exportBtn.addEventListener("click", () => {
  const state = replay(gatewayUrl, conversationId, log);
  const gateway = state.gatewayName || "gateway";
  const blob = new Blob([transcriptBlob(userName, gateway, log)],
                        { type: "application/jsonl" });
  const anchor = document.createElement("a");
  anchor.href = URL.createObjectURL(blob);
  anchor.download = `${conversationId}.jsonl`;
  anchor.click();
  URL.revokeObjectURL(anchor.href);
});

$("gateway-url").textContent = gatewayUrl;
render();
