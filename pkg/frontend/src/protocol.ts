/**
 * Message types for the live-session socket, plus strict decoding.
 * The console never fabricates model quantities; everything rendered
 * comes out of these messages.
 */

export const SCHEMA = "cmq-bridge-1";

export interface GridAgent {
  x: number;
  y: number;
  level: number;
}

export interface GridFood {
  x: number;
  y: number;
  level: number;
  alive: boolean;
}

export interface GridSnapshot {
  width: number;
  height: number;
  agents: GridAgent[];
  foods: GridFood[];
}

export interface HelloMsg {
  schema: string;
  type: "hello";
  mixer: "cmq" | "vdn";
  n_agents: number;
  n_actions: number;
  action_names: string[];
  concepts: number;
  supervised: number;
  concept_names: string[];
}

export interface FrameMsg {
  schema: string;
  type: "frame";
  t: number;
  seed: number;
  mode: "paused" | "auto";
  grid: GridSnapshot | null;
  q: number[][];
  actions: number[];
  forced: Record<string, number>;
  concepts: number[];
  reward: number;
  episode_return: number;
  done: boolean;
  p_hat: number[];
  p_used: number[];
  alpha: number[];
  q_hat: number[];
  q_tot: number;
}

export interface AckMsg {
  schema: string;
  type: "ack";
  of: string;
  mask: Record<string, number>;
  mode: "paused" | "auto";
}

export interface ErrorMsg {
  schema: string;
  type: "error";
  error: string;
}

export type ServerMessage = HelloMsg | FrameMsg | AckMsg | ErrorMsg;

export type ClientRequest =
  | { type: "reset"; seed: number }
  | { type: "step" }
  | { type: "get_state" }
  | { type: "intervene"; mask: Record<string, number> }
  | { type: "clear_interventions" }
  | { type: "auto"; ms_per_step: number }
  | { type: "pause" };

/** Raised when a message cannot be trusted; the view must not render it. */
export class SchemaError extends Error {}

const SERVER_TYPES = new Set(["hello", "frame", "ack", "error"]);

export function decodeServer(raw: string): ServerMessage {
  let parsed: unknown;
  try {
    parsed = JSON.parse(raw);
  } catch {
    throw new SchemaError("not valid JSON");
  }
  if (typeof parsed !== "object" || parsed === null || Array.isArray(parsed)) {
    throw new SchemaError("message is not an object");
  }
  const msg = parsed as Record<string, unknown>;
  if (msg.schema !== SCHEMA) {
    throw new SchemaError(
      `schema ${JSON.stringify(msg.schema)} does not match ${SCHEMA}`,
    );
  }
  if (typeof msg.type !== "string" || !SERVER_TYPES.has(msg.type)) {
    throw new SchemaError(`unknown server message type ${JSON.stringify(msg.type)}`);
  }
  return msg as unknown as ServerMessage;
}

export function encodeRequest(req: ClientRequest): string {
  return JSON.stringify(req);
}
