/**
 * Bridge websocket protocol: message shapes and validation.
 *
 * Every frame the UI emits is validated before it goes on the wire, and
 * every inbound frame is validated before it is dispatched, so protocol
 * drift fails loudly instead of half-working.
 */

export type ClientMessage =
  | { type: "rdis" }
  | { type: "list" }
  | { type: "call"; id: string; interface: string; args: Record<string, number> }
  | { type: "subscribe"; id: string; concept: string; period_ms: number }
  | { type: "unsubscribe"; id: string };

export interface InterfaceInfo {
  name: string;
  inputs: string[];
  returns: string[];
}

export interface ConceptInfo {
  name: string;
  interface: string;
  kind: "command" | "telemetry";
  fields: string[];
  /** concept field -> interface input; null when not derivable */
  args: Record<string, string> | null;
}

export type ServerMessage =
  | { type: "rdis"; document: string }
  | { type: "list"; interfaces: InterfaceInfo[]; concepts: ConceptInfo[] }
  | { type: "result"; id: string; values: Record<string, number> }
  | { type: "state"; id: string; values: Record<string, number>; age_ms: number }
  | { type: "error"; id?: string; code: string; message: string };

function isRecord(value: unknown): value is Record<string, unknown> {
  return typeof value === "object" && value !== null && !Array.isArray(value);
}

function isNumberMap(value: unknown): value is Record<string, number> {
  return (
    isRecord(value) && Object.values(value).every((v) => typeof v === "number" && isFinite(v))
  );
}

function isStringArray(value: unknown): value is string[] {
  return Array.isArray(value) && value.every((v) => typeof v === "string");
}

export function isClientMessage(value: unknown): value is ClientMessage {
  if (!isRecord(value)) return false;
  switch (value.type) {
    case "rdis":
    case "list":
      return true;
    case "call":
      return (
        typeof value.id === "string" &&
        typeof value.interface === "string" &&
        isNumberMap(value.args)
      );
    case "subscribe":
      return (
        typeof value.id === "string" &&
        typeof value.concept === "string" &&
        typeof value.period_ms === "number" &&
        Number.isInteger(value.period_ms) &&
        value.period_ms > 0
      );
    case "unsubscribe":
      return typeof value.id === "string";
    default:
      return false;
  }
}

function isInterfaceInfo(value: unknown): value is InterfaceInfo {
  return (
    isRecord(value) &&
    typeof value.name === "string" &&
    isStringArray(value.inputs) &&
    isStringArray(value.returns)
  );
}

function isConceptInfo(value: unknown): value is ConceptInfo {
  if (!isRecord(value)) return false;
  if (typeof value.name !== "string" || typeof value.interface !== "string") return false;
  if (value.kind !== "command" && value.kind !== "telemetry") return false;
  if (!isStringArray(value.fields)) return false;
  if (value.args === null) return true;
  return isRecord(value.args) && Object.values(value.args).every((v) => typeof v === "string");
}

export function isServerMessage(value: unknown): value is ServerMessage {
  if (!isRecord(value)) return false;
  switch (value.type) {
    case "rdis":
      return typeof value.document === "string";
    case "list":
      return (
        Array.isArray(value.interfaces) &&
        value.interfaces.every(isInterfaceInfo) &&
        Array.isArray(value.concepts) &&
        value.concepts.every(isConceptInfo)
      );
    case "result":
      return typeof value.id === "string" && isNumberMap(value.values);
    case "state":
      return (
        typeof value.id === "string" &&
        isNumberMap(value.values) &&
        typeof value.age_ms === "number"
      );
    case "error":
      return (
        typeof value.code === "string" &&
        typeof value.message === "string" &&
        (value.id === undefined || typeof value.id === "string")
      );
    default:
      return false;
  }
}

export function encodeClientMessage(message: ClientMessage): string {
  if (!isClientMessage(message)) {
    throw new Error(`refusing to send a frame that violates the protocol: ${JSON.stringify(message)}`);
  }
  return JSON.stringify(message);
}

export function parseServerMessage(text: string): ServerMessage {
  let value: unknown;
  try {
    value = JSON.parse(text);
  } catch {
    throw new Error(`server sent invalid JSON: ${text.slice(0, 120)}`);
  }
  if (!isServerMessage(value)) {
    throw new Error(`server frame violates the protocol: ${text.slice(0, 120)}`);
  }
  return value;
}
