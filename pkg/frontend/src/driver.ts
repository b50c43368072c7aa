/**
 * Keyboard/button driving: held keys become a twist command stream.
 *
 * While any drive key is held, a command goes out immediately and then once
 * per period (10 Hz by default). When the last key is released the next
 * tick sends a single zero twist, the dead-man stop, and the stream goes
 * quiet until the next press.
 */

export interface DrivePresets {
  linearMps: number;
  angularRadps: number;
}

export const DEFAULT_PRESETS: DrivePresets = { linearMps: 0.2, angularRadps: 1.0 };

export const COMMAND_PERIOD_MS = 100;

export type DriveKey = "w" | "a" | "s" | "d";

const DRIVE_KEYS: readonly DriveKey[] = ["w", "a", "s", "d"];

export function isDriveKey(key: string): key is DriveKey {
  return (DRIVE_KEYS as readonly string[]).includes(key);
}

export class DriveController {
  presets: DrivePresets;
  private held = new Set<DriveKey>();
  private streaming = false;
  private timer: ReturnType<typeof setInterval> | null = null;

  constructor(
    private sendTwist: (linearMps: number, angularRadps: number) => void,
    presets: DrivePresets = DEFAULT_PRESETS,
    private periodMs: number = COMMAND_PERIOD_MS,
  ) {
    this.presets = { ...presets };
  }

  /** W/S drive forward/back, A/D turn left/right; opposite keys cancel. */
  currentTwist(): { linear: number; angular: number } {
    const has = (k: DriveKey) => (this.held.has(k) ? 1 : 0);
    return {
      linear: (has("w") - has("s")) * this.presets.linearMps,
      angular: (has("a") - has("d")) * this.presets.angularRadps,
    };
  }

  get active(): boolean {
    return this.timer !== null;
  }

  press(key: string): void {
    const k = key.toLowerCase();
    if (!isDriveKey(k) || this.held.has(k)) return;
    this.held.add(k);
    if (!this.streaming) {
      this.streaming = true;
      this.emit();
    }
    if (this.timer === null) {
      this.timer = setInterval(() => this.tick(), this.periodMs);
    }
  }

  release(key: string): void {
    const k = key.toLowerCase();
    if (isDriveKey(k)) this.held.delete(k);
  }

  releaseAll(): void {
    this.held.clear();
  }

  /** Stop the ticker; sends a final zero twist if a stream was live. */
  dispose(): void {
    if (this.timer !== null) {
      clearInterval(this.timer);
      this.timer = null;
    }
    if (this.streaming) {
      this.streaming = false;
      this.sendTwist(0, 0);
    }
    this.held.clear();
  }

  private emit(): void {
    const { linear, angular } = this.currentTwist();
    this.sendTwist(linear, angular);
  }

  private tick(): void {
    if (this.held.size > 0) {
      this.emit();
      return;
    }
    if (this.streaming) {
      // dead-man: no key input for a whole period ends the stream at zero
      this.streaming = false;
      this.sendTwist(0, 0);
    }
    if (this.timer !== null) {
      clearInterval(this.timer);
      this.timer = null;
    }
  }
}
