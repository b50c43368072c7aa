import { describe, expect, it } from "vitest";

import {
  encodeClientMessage,
  isClientMessage,
  isServerMessage,
  parseServerMessage,
} from "../src/protocol.js";

describe("client frame validation", () => {
  it("accepts the documented shapes", () => {
    expect(isClientMessage({ type: "rdis" })).toBe(true);
    expect(isClientMessage({ type: "list" })).toBe(true);
    expect(
      isClientMessage({ type: "call", id: "1", interface: "drive", args: { linear: 0.2, angular: 0 } }),
    ).toBe(true);
    expect(
      isClientMessage({ type: "subscribe", id: "s1", concept: "position2d.odometry", period_ms: 100 }),
    ).toBe(true);
    expect(isClientMessage({ type: "unsubscribe", id: "s1" })).toBe(true);
  });

  it("rejects malformed frames", () => {
    expect(isClientMessage({ type: "warp" })).toBe(false);
    expect(isClientMessage({ type: "call", interface: "drive", args: {} })).toBe(false);
    expect(isClientMessage({ type: "call", id: "1", interface: "drive", args: { v: "fast" } })).toBe(false);
    expect(isClientMessage({ type: "subscribe", id: "s", concept: "c", period_ms: 0 })).toBe(false);
    expect(isClientMessage({ type: "subscribe", id: "s", concept: "c", period_ms: 99.5 })).toBe(false);
    expect(isClientMessage(null)).toBe(false);
    expect(isClientMessage([])).toBe(false);
  });

  it("encodeClientMessage throws instead of emitting junk", () => {
    expect(() => encodeClientMessage({ type: "call" } as never)).toThrow(/protocol/);
  });
});

describe("server frame validation", () => {
  it("accepts the documented shapes", () => {
    expect(isServerMessage({ type: "rdis", document: "{}" })).toBe(true);
    expect(
      isServerMessage({
        type: "list",
        interfaces: [{ name: "drive", inputs: ["linear"], returns: [] }],
        concepts: [
          {
            name: "position2d.command_velocity",
            interface: "drive",
            kind: "command",
            fields: ["linear_mps", "angular_radps"],
            args: { linear_mps: "linear" },
          },
          {
            name: "position2d.odometry",
            interface: "odometry",
            kind: "telemetry",
            fields: ["x_m", "y_m", "theta_rad"],
            args: null,
          },
        ],
      }),
    ).toBe(true);
    expect(isServerMessage({ type: "result", id: "1", values: { left: 1 } })).toBe(true);
    expect(isServerMessage({ type: "state", id: "s", values: { x_m: 0 }, age_ms: 3 })).toBe(true);
    expect(isServerMessage({ type: "error", code: "bad-type", message: "nope" })).toBe(true);
    expect(isServerMessage({ type: "error", id: "1", code: "bad-args", message: "nope" })).toBe(true);
  });

  it("rejects malformed frames", () => {
    expect(isServerMessage({ type: "state", id: "s", values: { x: "far" }, age_ms: 1 })).toBe(false);
    expect(isServerMessage({ type: "list", interfaces: [{}], concepts: [] })).toBe(false);
    expect(isServerMessage({ type: "result", values: {} })).toBe(false);
    expect(isServerMessage({ type: "boom" })).toBe(false);
  });

  it("parseServerMessage throws on garbage", () => {
    expect(() => parseServerMessage("not json")).toThrow(/invalid JSON/);
    expect(() => parseServerMessage('{"type":"???"}')).toThrow(/violates/);
    expect(parseServerMessage('{"type":"rdis","document":"{}"}')).toEqual({
      type: "rdis",
      document: "{}",
    });
  });
});
