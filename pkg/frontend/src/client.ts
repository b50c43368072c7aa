/**
 * Request/reply and subscription bookkeeping over one bridge connection.
 *
 * The client is transport-agnostic: it gets a send function and is fed
 * inbound frames through handleFrame, which keeps it fully testable
 * without a real WebSocket.
 */

import {
  ClientMessage,
  ConceptInfo,
  InterfaceInfo,
  ServerMessage,
  encodeClientMessage,
  parseServerMessage,
} from "./protocol.js";

export interface Listing {
  interfaces: InterfaceInfo[];
  concepts: ConceptInfo[];
}

interface Pending {
  resolve: (value: never) => void;
  reject: (err: Error) => void;
}

export class BridgeClient {
  private seq = 0;
  private pendingCalls = new Map<string, { resolve: (v: Record<string, number>) => void; reject: (e: Error) => void }>();
  private docWaiters: Pending[] = [];
  private listWaiters: Pending[] = [];
  private stateHandlers = new Map<string, (values: Record<string, number>, ageMs: number) => void>();

  /** called for protocol errors and error frames nothing else claimed */
  onError: (message: string) => void = (m) => console.error(m);

  constructor(private sendText: (text: string) => void) {}

  private send(message: ClientMessage): void {
    this.sendText(encodeClientMessage(message));
  }

  handleFrame(text: string): void {
    let frame: ServerMessage;
    try {
      frame = parseServerMessage(text);
    } catch (err) {
      this.onError(String(err));
      return;
    }
    switch (frame.type) {
      case "rdis":
        for (const w of this.docWaiters.splice(0)) (w.resolve as (v: string) => void)(frame.document);
        break;
      case "list":
        for (const w of this.listWaiters.splice(0)) {
          (w.resolve as (v: Listing) => void)({ interfaces: frame.interfaces, concepts: frame.concepts });
        }
        break;
      case "result": {
        const pending = this.pendingCalls.get(frame.id);
        if (pending) {
          this.pendingCalls.delete(frame.id);
          pending.resolve(frame.values);
        }
        break;
      }
      case "state": {
        const handler = this.stateHandlers.get(frame.id);
        if (handler) handler(frame.values, frame.age_ms);
        break;
      }
      case "error": {
        const pending = frame.id === undefined ? undefined : this.pendingCalls.get(frame.id);
        if (pending && frame.id !== undefined) {
          this.pendingCalls.delete(frame.id);
          pending.reject(new Error(`${frame.code}: ${frame.message}`));
        } else {
          this.onError(`bridge error ${frame.code}: ${frame.message}`);
        }
        break;
      }
    }
  }

  /** reject all pending work, e.g. when the socket closes */
  abort(reason: string): void {
    const err = new Error(reason);
    for (const pending of this.pendingCalls.values()) pending.reject(err);
    this.pendingCalls.clear();
    for (const w of this.docWaiters.splice(0)) w.reject(err);
    for (const w of this.listWaiters.splice(0)) w.reject(err);
    this.stateHandlers.clear();
  }

  requestDocument(): Promise<string> {
    return new Promise((resolve, reject) => {
      this.docWaiters.push({ resolve: resolve as (v: never) => void, reject });
      this.send({ type: "rdis" });
    });
  }

  requestList(): Promise<Listing> {
    return new Promise((resolve, reject) => {
      this.listWaiters.push({ resolve: resolve as (v: never) => void, reject });
      this.send({ type: "list" });
    });
  }

  call(iface: string, args: Record<string, number>): Promise<Record<string, number>> {
    const id = `c${++this.seq}`;
    return new Promise((resolve, reject) => {
      this.pendingCalls.set(id, { resolve, reject });
      this.send({ type: "call", id, interface: iface, args });
    });
  }

  subscribe(
    concept: string,
    periodMs: number,
    onState: (values: Record<string, number>, ageMs: number) => void,
  ): { id: string; cancel: () => void } {
    const id = `s${++this.seq}`;
    this.stateHandlers.set(id, onState);
    this.send({ type: "subscribe", id, concept, period_ms: periodMs });
    return {
      id,
      cancel: () => {
        if (!this.stateHandlers.delete(id)) return;
        this.send({ type: "unsubscribe", id });
      },
    };
  }
}

/** The command-velocity concept of a listing, when the bridge marked it drivable. */
export function findDrivableConcept(listing: Listing): ConceptInfo | null {
  const concept = listing.concepts.find((c) => c.name === "position2d.command_velocity");
  if (!concept || concept.kind !== "command" || !concept.args) return null;
  if (!("linear_mps" in concept.args) || !("angular_radps" in concept.args)) return null;
  return concept;
}

/** Maps a twist onto the mapped interface's argument names and sends it. */
export function makeTwistSender(
  client: BridgeClient,
  concept: ConceptInfo,
): (linearMps: number, angularRadps: number) => void {
  const args = concept.args;
  if (!args) throw new Error(`concept ${concept.name} is not drivable`);
  return (linearMps, angularRadps) => {
    client
      .call(concept.interface, {
        [args.linear_mps]: linearMps,
        [args.angular_radps]: angularRadps,
      })
      .catch((err) => client.onError(`drive call failed: ${err.message ?? err}`));
  };
}
