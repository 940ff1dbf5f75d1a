// Console session state.
//
// The rendered state is a pure function of what the server has said plus the
// operator's local edits.  Nothing in here talks to the server on its own:
// every command goes out because an operator action called one of the
// explicit methods below.  History records are only ever appended or
// replaced wholesale by a server reply, never dropped; the bounded live
// profile buffer is the one place old entries fall off.

import type {
  ClassifierRecord,
  CommandPayload,
  CommandReply,
  HistoryReply,
  ProfileData,
  SocketLike,
  StatusReply,
  StreamEvent,
  QueueSnapshot,
} from "./protocol.js";

/** What the store needs from a gateway client; GatewayClient satisfies it. */
export interface ConsoleClient {
  handshake(client: string): Promise<string>;
  command<T extends CommandReply = CommandReply>(payload: CommandPayload): Promise<T>;
  openStream(onEvent: (ev: StreamEvent) => void, onGap: () => void): SocketLike;
}

export type ConnectionPhase = "idle" | "connected" | "degraded";

export interface SessionState {
  connection: ConnectionPhase;
  serverState: string;
  queue: QueueSnapshot | null;
  droppedEvents: number;
  history: ClassifierRecord[];
  datasets: string[];
  datasetFilter: string | null;
  failures: { path: string; error: string }[];
  latestProfile: ProfileData | null;
  calibrationText: string | null;
  lastError: string | null;
}

export interface Controls {
  canConfigure: boolean;
  canStart: boolean;
  canAbort: boolean;
  canReintegrate: boolean;
}

function initialState(): SessionState {
  return {
    connection: "idle",
    serverState: "unknown",
    queue: null,
    droppedEvents: 0,
    history: [],
    datasets: [],
    datasetFilter: null,
    failures: [],
    latestProfile: null,
    calibrationText: null,
    lastError: null,
  };
}

function byAcquisition(a: ClassifierRecord, b: ClassifierRecord): number {
  if (a.acquired_at !== b.acquired_at) {
    return a.acquired_at - b.acquired_at;
  }
  return a.source_path < b.source_path ? -1 : a.source_path > b.source_path ? 1 : 0;
}

export class SessionStore {
  private state: SessionState = initialState();
  private listeners = new Set<(s: SessionState) => void>();
  private profiles: ProfileData[] = [];
  private socket: SocketLike | null = null;

  constructor(
    private readonly client: ConsoleClient,
    private readonly profileBufferSize = 32,
  ) {}

  getState(): SessionState {
    return this.state;
  }

  subscribe(listener: (s: SessionState) => void): () => void {
    this.listeners.add(listener);
    return () => this.listeners.delete(listener);
  }

  private update(patch: Partial<SessionState>): void {
    this.state = { ...this.state, ...patch };
    for (const listener of this.listeners) {
      listener(this.state);
    }
  }

  /** Live profile traces, oldest first; bounded, oldest dropped on overflow. */
  recentProfiles(): ProfileData[] {
    return this.profiles.slice();
  }

  /** History restricted to the selected dataset, in acquisition order. */
  visibleHistory(): ClassifierRecord[] {
    const filter = this.state.datasetFilter;
    const records =
      filter === null
        ? this.state.history.slice()
        : this.state.history.filter((r) => r.dataset === filter);
    return records.sort(byAcquisition);
  }

  controls(): Controls {
    const s = this.state.serverState;
    const connected = this.state.connection !== "idle";
    return {
      canConfigure: connected && s !== "RUNNING",
      canStart: connected && s === "CONFIGURED",
      canAbort: connected && s === "RUNNING",
      canReintegrate: connected && s === "RUNNING",
    };
  }

  // -- operator actions -----------------------------------------------------

  /** Handshake, open the event stream, then pull status and history. */
  async connect(clientName: string): Promise<void> {
    await this.client.handshake(clientName);
    this.socket = this.client.openStream(
      (ev) => this.ingest(ev),
      () => this.markStreamGap(),
    );
    this.update({ connection: "connected", lastError: null });
    await this.refresh();
  }

  /**
   * Re-sync with the server: full status plus full history.  Called by the
   * operator, and again after a stream gap so nothing stays stale.
   */
  async refresh(): Promise<void> {
    const status = await this.client.command<StatusReply>({ command: "query_status" });
    if (status.status === "ok") {
      this.update({
        serverState: status.state,
        queue: status.queue,
        droppedEvents: status.dropped_events,
        calibrationText: status.calibration,
      });
    } else {
      this.noteRejection(status);
    }
    const history = await this.client.command<HistoryReply>({ command: "query_history" });
    if (history.status === "ok") {
      this.update({
        history: history.records.slice().sort(byAcquisition),
        datasets: history.datasets,
        connection: "connected",
      });
    } else {
      this.noteRejection(history);
    }
  }

  async sendCalibration(text: string): Promise<CommandReply> {
    const reply = await this.client.command({ command: "set_calibration", argument: text });
    if (reply.status === "ok") {
      this.update({ serverState: reply.state, calibrationText: text, lastError: null });
    } else {
      this.noteRejection(reply);
    }
    return reply;
  }

  async startQueue(options: { walk?: boolean } = {}): Promise<CommandReply> {
    const reply = await this.client.command({
      command: "new_queue",
      argument: options.walk === true ? { walk: true } : undefined,
    });
    if (reply.status === "ok") {
      this.update({ serverState: reply.state, lastError: null });
    } else {
      this.noteRejection(reply);
    }
    return reply;
  }

  async abort(): Promise<CommandReply> {
    const reply = await this.client.command({ command: "abort" });
    if (reply.status === "ok") {
      this.update({ serverState: reply.state, lastError: null });
    } else {
      this.noteRejection(reply);
    }
    return reply;
  }

  async reintegrate(): Promise<CommandReply> {
    const reply = await this.client.command({ command: "reintegrate" });
    if (reply.status === "ok") {
      this.update({ serverState: reply.state, lastError: null });
    } else {
      this.noteRejection(reply);
    }
    return reply;
  }

  async pollStatus(): Promise<void> {
    const status = await this.client.command<StatusReply>({ command: "query_status" });
    if (status.status === "ok") {
      this.update({
        serverState: status.state,
        queue: status.queue,
        droppedEvents: status.dropped_events,
      });
    }
  }

  setDatasetFilter(stem: string | null): void {
    this.update({ datasetFilter: stem });
  }

  /**
   * After a stream gap: reopen the event stream, then replay a full status
   * and history query so anything missed during the gap is recovered.
   */
  async reconnect(): Promise<void> {
    const stale = this.socket;
    this.socket = null;
    if (stale !== null) {
      stale.onclose = null;
      stale.onerror = null;
      try {
        stale.close();
      } catch {
        // already gone
      }
    }
    this.socket = this.client.openStream(
      (ev) => this.ingest(ev),
      () => this.markStreamGap(),
    );
    await this.refresh();
  }

  close(): void {
    const socket = this.socket;
    this.socket = null;
    if (socket !== null) {
      socket.onclose = null;
      socket.onerror = null;
      socket.close();
    }
    this.update({ connection: "idle" });
  }

  // -- server-driven transitions ---------------------------------------------

  ingest(event: StreamEvent): void {
    if (event.type === "state") {
      this.update({ serverState: event.state });
      return;
    }
    if (event.type !== "result") {
      return;
    }
    if (event.status === "failed") {
      this.update({ failures: [...this.state.failures, { path: event.path, error: event.error }] });
      return;
    }
    const record = event.record;
    const history = [...this.state.history, record];
    const datasets = this.state.datasets.includes(record.dataset)
      ? this.state.datasets
      : [...this.state.datasets, record.dataset].sort();
    let latestProfile = this.state.latestProfile;
    if (event.profile !== undefined) {
      this.profiles.push(event.profile);
      while (this.profiles.length > this.profileBufferSize) {
        this.profiles.shift();
      }
      latestProfile = event.profile;
    }
    this.update({ history, datasets, latestProfile });
  }

  markStreamGap(): void {
    if (this.socket === null) {
      return;
    }
    this.update({ connection: "degraded" });
  }

  private noteRejection(reply: CommandReply): void {
    this.update({
      serverState: reply.state,
      lastError: reply.error ?? "command rejected",
    });
  }
}
