/** Conversation envelope builders and readers for the browser console.
 *
 * Shapes mirror the Python codec exactly; anything the console sends must
 * pass the primary validator unchanged.
 */

export const SCHEMA_VERSION = "0.9.2";

export interface EnvelopeEvent {
  eventType: string;
  to?: string;
  parameters: Record<string, unknown>;
}

export interface Envelope {
  ovon: {
    schema: { version: string };
    conversation: { id: string };
    sender: { from: string; to?: string };
    responseCode?: unknown;
    events: EnvelopeEvent[];
  };
}

export function newConversationId(now: number = Date.now()): string {
  return `conv_${now}`;
}

function dialogEvent(speakerId: string, text: string, startTime: string) {
  return {
    speakerId,
    span: { startTime },
    features: {
      text: { mimeType: "text/plain", tokens: [{ value: text }] },
    },
  };
}

export function utteranceEvent(
  speakerId: string, text: string, startTime: string): EnvelopeEvent {
  return {
    eventType: "utterance",
    parameters: { dialogEvent: dialogEvent(speakerId, text, startTime) },
  };
}

export function whisperEvent(
  speakerId: string, text: string, startTime: string): EnvelopeEvent {
  return {
    eventType: "whisper",
    parameters: { dialogEvent: dialogEvent(speakerId, text, startTime) },
  };
}

export function inviteEvent(toUrl: string): EnvelopeEvent {
  return { eventType: "invite", parameters: { to: { url: toUrl } } };
}

export function byeEvent(): EnvelopeEvent {
  return { eventType: "bye", parameters: {} };
}

export function makeEnvelope(
  conversationId: string, from: string, events: EnvelopeEvent[],
  to?: string): Envelope {
  const sender: { from: string; to?: string } = { from };
  if (to !== undefined) sender.to = to;
  return {
    ovon: {
      schema: { version: SCHEMA_VERSION },
      conversation: { id: conversationId },
      sender,
      events,
    },
  };
}

// -- readers (tolerant: inbound envelopes may carry fields we don't know) --

function asRecord(value: unknown): Record<string, unknown> {
  return typeof value === "object" && value !== null
    ? (value as Record<string, unknown>)
    : {};
}

export function eventsOf(envelope: Envelope): EnvelopeEvent[] {
  const events = envelope.ovon?.events;
  return Array.isArray(events) ? events : [];
}

export function senderOf(envelope: Envelope): string {
  const from = envelope.ovon?.sender?.from;
  return typeof from === "string" ? from : "";
}

function dialogOf(event: EnvelopeEvent): Record<string, unknown> {
  return asRecord(asRecord(event.parameters).dialogEvent);
}

export function speakerOf(event: EnvelopeEvent): string {
  const speaker = dialogOf(event).speakerId;
  return typeof speaker === "string" ? speaker : "";
}

export function textOf(event: EnvelopeEvent): string {
  const features = asRecord(dialogOf(event).features);
  const text = asRecord(features.text);
  const tokens = text.tokens;
  if (!Array.isArray(tokens)) return "";
  return tokens
    .map((t) => {
      const value = asRecord(t).value;
      return typeof value === "string" ? value : "";
    })
    .join(" ");
}

/** Who an invite hands the floor to: a display name when the sender included
 * one, otherwise the invited endpoint. */
export function inviteTargetOf(event: EnvelopeEvent): string {
  if (typeof event.to === "string" && event.to) return event.to;
  const target = asRecord(asRecord(event.parameters).to);
  return typeof target.url === "string" ? target.url : "";
}

export function parseEnvelope(raw: string): Envelope {
  const doc: unknown = JSON.parse(raw);
  const ovon = asRecord(asRecord(doc).ovon);
  if (!("conversation" in ovon) || !("sender" in ovon)) {
    throw new Error("response is not a conversation envelope");
  }
  return doc as Envelope;
}
