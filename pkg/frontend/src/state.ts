/** Console state as a pure fold over the ordered envelope log.
 *
 * Rendering never mutates: the screen is `replay(log)` and nothing else, so
 * reloading a session from its log reproduces the exact same view.
 */

import {
  Envelope,
  eventsOf,
  inviteTargetOf,
  senderOf,
  speakerOf,
  textOf,
} from "./envelope.js";

export type MessageKind = "utterance" | "whisper" | "system";

export interface Message {
  speaker: string;
  text: string;
  kind: MessageKind;
}

export interface LogEntry {
  direction: "out" | "in";
  ts: string;
  envelope: Envelope;
}

export interface ConsoleState {
  conversationId: string;
  messages: Message[];
  /** Set only by observed invite and bye events. */
  delegatedTo: string | null;
  /** The gateway's self-declared name, learned from its first reply. */
  gatewayName: string;
  connection: { gatewayUrl: string; status: "idle" | "awaiting" | "error" };
}

export function initialState(
  gatewayUrl: string, conversationId: string): ConsoleState {
  return {
    conversationId,
    messages: [],
    delegatedTo: null,
    gatewayName: "",
    connection: { gatewayUrl, status: "idle" },
  };
}

export function floorHolder(state: ConsoleState): string {
  return state.delegatedTo ?? (state.gatewayName || "gateway");
}

export function applyEnvelope(
  state: ConsoleState, entry: LogEntry): ConsoleState {
  const next: ConsoleState = {
    ...state,
    messages: [...state.messages],
    connection: { ...state.connection },
  };
  const sender = senderOf(entry.envelope);
  if (entry.direction === "in" && !next.gatewayName && sender) {
    next.gatewayName = sender;
  }
  for (const event of eventsOf(entry.envelope)) {
    const speaker = speakerOf(event) || sender;
    switch (event.eventType) {
      case "utterance":
        next.messages.push({ speaker, text: textOf(event), kind: "utterance" });
        break;
      case "whisper":
        next.messages.push({ speaker, text: textOf(event), kind: "whisper" });
        break;
      case "invite":
        if (entry.direction === "in") {
          const target = inviteTargetOf(event);
          if (target) {
            next.delegatedTo = target;
            next.messages.push({
              speaker: "",
              text: `floor handed to ${target}`,
              kind: "system",
            });
          }
        }
        break;
      case "bye":
        if (entry.direction === "in") {
          next.delegatedTo = null;
          next.messages.push({
            speaker: "",
            text: `${speaker || "agent"} left; floor back with ${
              next.gatewayName || "gateway"}`,
            kind: "system",
          });
        }
        break;
      default:
        break; // unknown event types render nowhere but never break the fold
    }
  }
  return next;
}

export function replay(
  gatewayUrl: string, conversationId: string,
  log: readonly LogEntry[]): ConsoleState {
  let state = initialState(gatewayUrl, conversationId);
  for (const entry of log) {
    state = applyEnvelope(state, entry);
  }
  return state;
}

export function chatMessages(state: ConsoleState): Message[] {
  return state.messages.filter((m) => m.kind !== "whisper");
}

export function whisperMessages(state: ConsoleState): Message[] {
  return state.messages.filter((m) => m.kind === "whisper");
}
