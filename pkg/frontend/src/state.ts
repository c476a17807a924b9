/**
 * Session view state. Every transition is driven by a decoded server
 * message in arrival order; nothing here is optimistic. The snapshot is a
 * plain serializable view model, so replaying a transcript must reproduce
 * it exactly.
 */

import {
  AckMsg,
  FrameMsg,
  HelloMsg,
  ServerMessage,
} from "./protocol.js";

export interface TimelinePoint {
  t: number;
  qTot: number;
  episodeReturn: number;
}

export interface Snapshot {
  connected: boolean;
  banner: string | null;
  hello: HelloMsg | null;
  frame: FrameMsg | null;
  mask: Record<string, number>;
  mode: "paused" | "auto";
  timeline: TimelinePoint[];
  lastError: string | null;
  lastLatencyMs: number | null;
}

export class SessionView {
  connected = false;
  banner: string | null = null;
  hello: HelloMsg | null = null;
  frame: FrameMsg | null = null;
  mask: Record<string, number> = {};
  mode: "paused" | "auto" = "paused";
  timeline: TimelinePoint[] = [];
  lastError: string | null = null;
  lastLatencyMs: number | null = null;
  private pendingSentAt: number | null = null;

  /** Record the send time of the single in-flight request. */
  noteSent(now: number): void {
    this.pendingSentAt = now;
  }

  setConnected(connected: boolean): void {
    this.connected = connected;
  }

  /** A message failed schema validation: block rendering entirely. */
  schemaFailure(detail: string): void {
    this.banner = detail;
  }

  apply(msg: ServerMessage, now = 0): void {
    if (this.pendingSentAt !== null) {
      this.lastLatencyMs = now - this.pendingSentAt;
      this.pendingSentAt = null;
    }
    switch (msg.type) {
      case "hello":
        this.hello = msg;
        break;
      case "frame":
        this.applyFrame(msg);
        break;
      case "ack":
        this.applyAck(msg);
        break;
      case "error":
        this.lastError = msg.error;
        break;
    }
  }

  private applyFrame(frame: FrameMsg): void {
    this.frame = frame;
    this.mask = frame.forced;
    this.mode = frame.mode;
    this.lastError = null;
    if (frame.t === 0) {
      this.timeline = [];
      return;
    }
    const last = this.timeline[this.timeline.length - 1];
    if (last === undefined || frame.t > last.t) {
      this.timeline.push({
        t: frame.t,
        qTot: frame.q_tot,
        episodeReturn: frame.episode_return,
      });
    }
  }

  private applyAck(ack: AckMsg): void {
    this.mask = ack.mask;
    this.mode = ack.mode;
    this.lastError = null;
  }

  snapshot(): Snapshot {
    return {
      connected: this.connected,
      banner: this.banner,
      hello: this.hello,
      frame: this.frame,
      mask: { ...this.mask },
      mode: this.mode,
      timeline: this.timeline.map((p) => ({ ...p })),
      lastError: this.lastError,
      lastLatencyMs: this.lastLatencyMs,
    };
  }
}
