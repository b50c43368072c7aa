/**
 * Single-page teleoperation client: connect to a bridge, discover the
 * device, drive it with WASD or on-screen buttons, watch live odometry.
 */

import { BridgeClient, findDrivableConcept, makeTwistSender } from "./client.js";
import { COMMAND_PERIOD_MS, DEFAULT_PRESETS, DriveController, isDriveKey } from "./driver.js";
import { TrailPlot } from "./trail.js";

const $ = <T extends HTMLElement>(id: string): T => {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
};

const urlInput = $<HTMLInputElement>("bridge-url");
const connectBtn = $<HTMLButtonElement>("connect");
const banner = $<HTMLDivElement>("banner");
const devicePanel = $<HTMLDivElement>("device");
const interfacesList = $<HTMLUListElement>("interfaces");
const conceptsList = $<HTMLUListElement>("concepts");
const poseOut = $<HTMLDivElement>("pose");
const canvas = $<HTMLCanvasElement>("trail");
const linearInput = $<HTMLInputElement>("preset-linear");
const angularInput = $<HTMLInputElement>("preset-angular");
const subToggle = $<HTMLButtonElement>("sub-toggle");
const clearBtn = $<HTMLButtonElement>("clear-trail");

let socket: WebSocket | null = null;
let client: BridgeClient | null = null;
let controller: DriveController | null = null;
let subscription: { cancel: () => void } | null = null;

const trail = new TrailPlot();
const ctx = canvas.getContext("2d");

linearInput.value = String(DEFAULT_PRESETS.linearMps);
angularInput.value = String(DEFAULT_PRESETS.angularRadps);
urlInput.value = `ws://${location.host || "127.0.0.1:8080"}/ws`;

function note(text: string, kind: "ok" | "err" | "info" = "info"): void {
  banner.textContent = text;
  banner.className = kind;
}

function redraw(): void {
  if (ctx) trail.render(ctx, canvas.width, canvas.height);
}

function teardown(reason: string): void {
  subscription = null;
  controller?.dispose();
  controller = null;
  client?.abort(reason);
  client = null;
  if (socket && socket.readyState === WebSocket.OPEN) socket.close();
  socket = null;
  devicePanel.classList.add("offline");
  note(reason, "err");
}

function renderDiscovery(documentText: string, listing: Awaited<ReturnType<BridgeClient["requestList"]>>): void {
  const doc = JSON.parse(documentText) as { name: string; version: string };
  $("device-name").textContent = `${doc.name} v${doc.version}`;
  interfacesList.replaceChildren(
    ...listing.interfaces.map((iface) => {
      const li = document.createElement("li");
      const rets = iface.returns.length ? ` -> ${iface.returns.join(", ")}` : "";
      li.textContent = `${iface.name}(${iface.inputs.join(", ")})${rets}`;
      return li;
    }),
  );
  conceptsList.replaceChildren(
    ...listing.concepts.map((concept) => {
      const li = document.createElement("li");
      li.textContent = `${concept.name} [${concept.kind}] via ${concept.interface}`;
      return li;
    }),
  );
  devicePanel.classList.remove("offline");
}

function startOdometry(c: BridgeClient): void {
  subscription = c.subscribe("position2d.odometry", COMMAND_PERIOD_MS, (values) => {
    const { x_m = 0, y_m = 0, theta_rad = 0 } = values;
    poseOut.textContent =
      `x ${x_m.toFixed(3)} m   y ${y_m.toFixed(3)} m   heading ${theta_rad.toFixed(3)} rad`;
    trail.add({ x: x_m, y: y_m, theta: theta_rad });
    redraw();
  });
  subToggle.textContent = "unsubscribe";
}

async function connect(): Promise<void> {
  teardown("reconnecting");
  note("connecting...");
  const ws = new WebSocket(urlInput.value);
  socket = ws;
  const c = new BridgeClient((text) => ws.send(text));
  c.onError = (message) => note(message, "err");
  client = c;

  ws.onmessage = (event) => c.handleFrame(String(event.data));
  ws.onclose = () => teardown("disconnected");
  ws.onerror = () => note("websocket error", "err");
  ws.onopen = async () => {
    try {
      const [documentText, listing] = await Promise.all([c.requestDocument(), c.requestList()]);
      renderDiscovery(documentText, listing);
      const drivable = findDrivableConcept(listing);
      if (drivable) {
        const send = makeTwistSender(c, drivable);
        controller = new DriveController(send, {
          linearMps: Number(linearInput.value) || DEFAULT_PRESETS.linearMps,
          angularRadps: Number(angularInput.value) || DEFAULT_PRESETS.angularRadps,
        });
        note(`connected; driving via ${drivable.interface}`, "ok");
      } else {
        note("connected; device is not drivable (no command_velocity mapping)", "ok");
      }
      if (listing.concepts.some((x) => x.name === "position2d.odometry")) {
        startOdometry(c);
      }
    } catch (err) {
      note(String(err), "err");
    }
  };
}

connectBtn.onclick = () => void connect();

document.addEventListener("keydown", (event) => {
  if (event.target instanceof HTMLInputElement) return;
  if (isDriveKey(event.key.toLowerCase())) {
    event.preventDefault();
    controller?.press(event.key);
  }
});
document.addEventListener("keyup", (event) => {
  controller?.release(event.key);
});
window.addEventListener("blur", () => controller?.releaseAll());

for (const key of ["w", "a", "s", "d"] as const) {
  const button = $(`key-${key}`);
  button.addEventListener("pointerdown", (event) => {
    event.preventDefault();
    controller?.press(key);
  });
  for (const kind of ["pointerup", "pointerleave", "pointercancel"]) {
    button.addEventListener(kind, () => controller?.release(key));
  }
}

for (const input of [linearInput, angularInput]) {
  input.addEventListener("change", () => {
    if (!controller) return;
    controller.presets.linearMps = Number(linearInput.value) || 0;
    controller.presets.angularRadps = Number(angularInput.value) || 0;
  });
}

subToggle.onclick = () => {
  if (subscription) {
    subscription.cancel();
    subscription = null;
    subToggle.textContent = "subscribe";
    note("odometry stream frozen", "info");
  } else if (client) {
    startOdometry(client);
    note("odometry streaming", "ok");
  }
};

clearBtn.onclick = () => {
  trail.clear();
  redraw();
};

redraw();
