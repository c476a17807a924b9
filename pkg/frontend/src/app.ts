/**
 * Socket wiring and controls. The view only changes when the bridge
 * replies; a click never edits local state directly.
 */

import { ClientRequest, decodeServer, encodeRequest, SchemaError } from "./protocol.js";
import { render } from "./render.js";
import { SessionView } from "./state.js";

const view = new SessionView();
let socket: WebSocket | null = null;

function paint(): void {
  render(document, view.snapshot());
}

function send(req: ClientRequest): boolean {
  if (!socket || socket.readyState !== WebSocket.OPEN) {
    view.lastError = "not connected; request not sent";
    paint();
    return false;
  }
  view.noteSent(performance.now());
  socket.send(encodeRequest(req));
  return true;
}

function connect(url: string): void {
  socket?.close();
  socket = new WebSocket(url);
  socket.onopen = () => {
    view.setConnected(true);
    paint();
  };
  socket.onclose = () => {
    view.setConnected(false);
    paint();
  };
  socket.onmessage = (ev) => {
    try {
      view.apply(decodeServer(String(ev.data)), performance.now());
    } catch (e) {
      if (e instanceof SchemaError) view.schemaFailure(e.message);
      else throw e;
    }
    paint();
  };
}

/** none -> forced 1 -> forced 0 -> cleared; clearing one concept means
 * wiping the mask and re-forcing the others. */
function cycleConcept(k: number): void {
  const current = view.snapshot().mask[String(k)];
  if (current === undefined) {
    send({ type: "intervene", mask: { [k]: 1 } });
  } else if (current === 1) {
    send({ type: "intervene", mask: { [k]: 0 } });
  } else {
    const rest = { ...view.snapshot().mask };
    delete rest[String(k)];
    if (send({ type: "clear_interventions" }) && Object.keys(rest).length > 0) {
      send({ type: "intervene", mask: rest });
    }
  }
}

function num(id: string, fallback: number): number {
  const raw = (document.getElementById(id) as HTMLInputElement).value;
  const parsed = Number(raw);
  return Number.isFinite(parsed) ? parsed : fallback;
}

function main(): void {
  document.getElementById("connect")!.addEventListener("click", () => {
    connect((document.getElementById("url") as HTMLInputElement).value);
  });
  document.getElementById("reset")!.addEventListener("click", () => {
    send({ type: "reset", seed: Math.max(0, Math.floor(num("seed", 0))) });
  });
  document.getElementById("step")!.addEventListener("click", () => {
    send({ type: "step" });
  });
  document.getElementById("auto")!.addEventListener("click", () => {
    send({ type: "auto", ms_per_step: Math.max(0, num("ms", 250)) });
  });
  document.getElementById("pause")!.addEventListener("click", () => {
    send({ type: "pause" });
  });
  document.getElementById("clear")!.addEventListener("click", () => {
    send({ type: "clear_interventions" });
  });
  document.getElementById("concepts")!.addEventListener("click", (ev) => {
    const gauge = (ev.target as HTMLElement).closest(".gauge") as HTMLElement | null;
    if (gauge?.dataset.k !== undefined) cycleConcept(Number(gauge.dataset.k));
  });
  paint();
}

main();
