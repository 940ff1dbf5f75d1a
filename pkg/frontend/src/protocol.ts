// Wire types and a small client for the gateway's JSON protocol.
//
// The gateway speaks plain HTTP plus one WebSocket: POST /api/handshake
// hands out a session token, POST /api/command forwards a command to the
// reduction server and returns its reply verbatim, GET /api/status reports
// bridge health, and /ws/stream?token=... pushes result and state events.

export interface QueueSnapshot {
  active: boolean;
  pending: number;
  processed: number;
  failed: number;
  enqueued: number;
  rate_fps: number;
  workers: number;
}

export interface ClassifierRecord {
  total_intensity: number;
  invariant: number;
  correlation_length: number | null;
  source_path: string;
  dataset: string;
  acquired_at: number;
  timestamp_source: string;
}

export interface ProfileData {
  q: number[];
  I: number[];
  E: number[];
}

export interface ResultOkEvent {
  type: "result";
  status: "ok";
  path: string;
  outputs: string[];
  record: ClassifierRecord;
  profile?: ProfileData;
}

export interface ResultFailedEvent {
  type: "result";
  status: "failed";
  path: string;
  error: string;
}

export interface StateEvent {
  type: "state";
  state: string;
}

export type StreamEvent = ResultOkEvent | ResultFailedEvent | StateEvent;

/** Daemon lifecycle tokens as they appear on the wire. */
export type ServerStateToken = "IDLE" | "CONFIGURED" | "RUNNING";

export interface CommandReply {
  status: "ok" | "error";
  state: string;
  error?: string;
  [extra: string]: unknown;
}

export interface StatusReply extends CommandReply {
  queue: QueueSnapshot | null;
  dropped_events: number;
  calibration: string | null;
}

export interface HistoryReply extends CommandReply {
  records: ClassifierRecord[];
  datasets: string[];
}

export interface GatewayStatus {
  connected: boolean;
  state: string | null;
  clients: number;
}

export interface CommandPayload {
  command: string;
  argument?: unknown;
}

// The sliver of the browser WebSocket surface the console uses.  Tests and
// non-browser hosts inject their own factory; browsers fall back to the
// global constructor.
export interface SocketLike {
  onmessage: ((ev: { data: unknown }) => void) | null;
  onclose: (() => void) | null;
  onerror: ((err: unknown) => void) | null;
  close(): void;
}

export type SocketFactory = (url: string) => SocketLike;

export class GatewayError extends Error {}

function defaultSocketFactory(url: string): SocketLike {
  const ctor = (globalThis as { WebSocket?: new (url: string) => SocketLike }).WebSocket;
  if (ctor === undefined) {
    throw new GatewayError("no WebSocket constructor available; inject a socket factory");
  }
  return new ctor(url);
}

export class GatewayClient {
  private token: string | null = null;

  constructor(
    private readonly base: string,
    private readonly socketFactory: SocketFactory = defaultSocketFactory,
  ) {}

  get sessionToken(): string | null {
    return this.token;
  }

  async handshake(client: string): Promise<string> {
    const res = await fetch(`${this.base}/api/handshake`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ client }),
    });
    if (!res.ok) {
      throw new GatewayError(`handshake failed: HTTP ${res.status}`);
    }
    const body = (await res.json()) as { token: string };
    this.token = body.token;
    return body.token;
  }

  async command<T extends CommandReply = CommandReply>(payload: CommandPayload): Promise<T> {
    if (this.token === null) {
      throw new GatewayError("not connected: handshake first");
    }
    const res = await fetch(`${this.base}/api/command`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ token: this.token, payload }),
    });
    if (!res.ok) {
      throw new GatewayError(`command rejected: HTTP ${res.status}`);
    }
    return (await res.json()) as T;
  }

  async gatewayStatus(): Promise<GatewayStatus> {
    const res = await fetch(`${this.base}/api/status`);
    if (!res.ok) {
      throw new GatewayError(`status failed: HTTP ${res.status}`);
    }
    return (await res.json()) as GatewayStatus;
  }

  /** Open the event stream; onGap fires when the stream drops for any reason. */
  openStream(onEvent: (ev: StreamEvent) => void, onGap: () => void): SocketLike {
    if (this.token === null) {
      throw new GatewayError("not connected: handshake first");
    }
    const wsBase = this.base.replace(/^http/, "ws");
    const socket = this.socketFactory(
      `${wsBase}/ws/stream?token=${encodeURIComponent(this.token)}`,
    );
    socket.onmessage = (ev) => {
      let parsed: StreamEvent;
      try {
        parsed = JSON.parse(String(ev.data)) as StreamEvent;
      } catch {
        return;
      }
      onEvent(parsed);
    };
    socket.onclose = onGap;
    socket.onerror = onGap;
    return socket;
  }
}
