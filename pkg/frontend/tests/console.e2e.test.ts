// Drives the real service stack: a reduction daemon and a gateway spawned as
// child processes, twenty small frames on disk, and this console talking to
// the gateway exactly the way the browser build does.

import { afterAll, beforeAll, describe, expect, it } from "vitest";
import { spawn, spawnSync, type ChildProcess } from "node:child_process";
import { mkdtempSync, rmSync } from "node:fs";
import { createServer } from "node:net";
import { tmpdir } from "node:os";
import * as path from "node:path";
import { fileURLToPath } from "node:url";

import { GatewayClient, type HistoryReply, type SocketLike } from "../src/protocol.js";
import { SessionStore } from "../src/state.js";
import { exportDocument, parseDocument, setField, type JsonObject } from "../src/calibration.js";
import { classifierPanels, progressHistogram } from "../src/views.js";
import { svgHistogram, svgSeries } from "../src/svg.js";

const repoRoot = path.resolve(path.dirname(fileURLToPath(import.meta.url)), "..", "..");

function freePort(): Promise<number> {
  return new Promise((resolve, reject) => {
    const probe = createServer();
    probe.once("error", reject);
    probe.listen(0, "127.0.0.1", () => {
      const address = probe.address();
      if (address === null || typeof address === "string") {
        probe.close();
        reject(new Error("could not allocate a port"));
        return;
      }
      const port = address.port;
      probe.close(() => resolve(port));
    });
  });
}

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}

// The store wants an event stream; node has no WebSocket, and this test
// checks the query path, so it injects a socket that never speaks.
function inertSocket(): SocketLike {
  return { onmessage: null, onclose: null, onerror: null, close: () => undefined };
}

function runPython(code: string): void {
  const result = spawnSync("python3", ["-c", code], {
    cwd: repoRoot,
    env: { ...process.env, PYTHONPATH: path.join(repoRoot, "tests") },
    encoding: "utf8",
  });
  if (result.status !== 0) {
    throw new Error(`python helper failed:\n${result.stdout}\n${result.stderr}`);
  }
}

interface Stack {
  work: string;
  frames: string;
  gatewayBase: string;
  serve: ChildProcess;
  gateway: ChildProcess;
  logs: string[];
}

async function startStack(): Promise<Stack> {
  const work = mkdtempSync(path.join(tmpdir(), "console-e2e-"));
  const frames = path.join(work, "frames");
  runPython(
    [
      "from helpers import write_frame_series",
      `write_frame_series(${JSON.stringify(frames)}, 10, (64, 64), seed=11, prefix="alpha")`,
      `write_frame_series(${JSON.stringify(frames)}, 10, (64, 64), seed=22, prefix="beta")`,
    ].join("\n"),
  );

  const [feederPort, serverPort, resultsPort, gatewayPort] = await Promise.all([
    freePort(),
    freePort(),
    freePort(),
    freePort(),
  ]);
  const config = path.join(work, "net.json");
  const netconf = spawnSync(
    "python3",
    [
      "-m",
      "radpipe.cli",
      "netconf",
      "--config",
      config,
      "--feeder",
      `127.0.0.1:${feederPort}`,
      "--server",
      `127.0.0.1:${serverPort}`,
      "--results",
      `127.0.0.1:${resultsPort}`,
      "--gateway",
      `127.0.0.1:${gatewayPort}`,
      "--secret",
      "console-e2e-secret",
    ],
    { cwd: work, encoding: "utf8" },
  );
  if (netconf.status !== 0) {
    throw new Error(`netconf failed:\n${netconf.stdout}\n${netconf.stderr}`);
  }

  const logs: string[] = [];
  const child = (args: string[]): ChildProcess => {
    const proc = spawn("python3", ["-m", "radpipe.cli", ...args], { cwd: work });
    proc.stdout?.on("data", (chunk: Buffer) => logs.push(String(chunk)));
    proc.stderr?.on("data", (chunk: Buffer) => logs.push(String(chunk)));
    return proc;
  };
  const serve = child(["serve", "--config", config, "--cache-dir", path.join(work, "cache")]);
  const gateway = child(["gateway", "--config", config]);

  const gatewayBase = `http://127.0.0.1:${gatewayPort}`;
  const deadline = Date.now() + 90_000;
  for (;;) {
    if (Date.now() > deadline) {
      throw new Error(`gateway never linked to the daemon:\n${logs.join("")}`);
    }
    try {
      const res = await fetch(`${gatewayBase}/api/status`);
      if (res.ok) {
        const body = (await res.json()) as { connected: boolean };
        if (body.connected) {
          break;
        }
      }
    } catch {
      // not listening yet
    }
    await sleep(250);
  }
  return { work, frames, gatewayBase, serve, gateway, logs };
}

function consoleCalibration(frames: string): JsonObject {
  return {
    geometry: {
      beamcenter: [32.2, 31.7],
      detector_distance: 1053.0,
      image_size: [64, 64],
      pixel_size: [172.0, 172.0],
      tilt: { tilt_rotation: 0.0, tilt_angle: 0.0 },
    },
    masks: [],
    oversampling: 1,
    pixels_per_radial_element: 1.5,
    q_start: 0.05,
    q_stop: 4.0,
    wavelength: 1.54,
    directory: frames,
    threads: 1,
  };
}

let stack: Stack;

beforeAll(async () => {
  stack = await startStack();
}, 120_000);

afterAll(async () => {
  stack.gateway.kill("SIGTERM");
  stack.serve.kill("SIGTERM");
  await sleep(500);
  stack.gateway.kill("SIGKILL");
  stack.serve.kill("SIGKILL");
  rmSync(stack.work, { recursive: true, force: true });
});

describe("console against a live gateway", () => {
  it(
    "configures, reduces twenty frames, and mirrors the server history exactly",
    async () => {
      const client = new GatewayClient(stack.gatewayBase, inertSocket);
      const store = new SessionStore(client);
      await store.connect("vitest-console");
      expect(store.getState().connection).toBe("connected");
      expect(store.getState().serverState).toBe("IDLE");

      // The calibration leaves the editor: parsed, edited, validated, sent.
      const template = exportDocument(consoleCalibration("/data/elsewhere"));
      const { doc, errors } = parseDocument(template);
      expect(errors).toEqual([]);
      const edited = setField(doc as JsonObject, "directory", stack.frames);
      const sendReply = await store.sendCalibration(exportDocument(edited));
      expect(sendReply.status).toBe("ok");
      expect(store.getState().serverState).toBe("CONFIGURED");
      expect(store.controls().canStart).toBe(true);

      const startReply = await store.startQueue({ walk: true });
      expect(startReply.status).toBe("ok");
      expect(startReply["enqueued"]).toBe(20);
      expect(store.getState().serverState).toBe("RUNNING");

      const deadline = Date.now() + 90_000;
      for (;;) {
        await store.pollStatus();
        const queue = store.getState().queue;
        if (queue !== null && queue.processed + queue.failed >= 20) {
          break;
        }
        if (Date.now() > deadline) {
          throw new Error(`queue never finished:\n${stack.logs.join("")}`);
        }
        await sleep(200);
      }
      expect(store.getState().queue?.processed).toBe(20);
      expect(store.getState().queue?.failed).toBe(0);

      // No live stream in this runner, so the console re-syncs explicitly.
      await store.refresh();
      const state = store.getState();
      expect(state.history.length).toBe(20);
      expect(state.datasets).toEqual(["alpha", "beta"]);

      // The server's own record of the run is the reference.
      const reference = await client.command<HistoryReply>({ command: "query_history" });
      expect(reference.status).toBe("ok");
      expect(reference.records.length).toBe(20);

      // Progress histogram: every processed frame lands in a bucket.
      const visible = store.visibleHistory();
      const bars = progressHistogram(visible);
      expect(bars.reduce((acc, b) => acc + b.count, 0)).toBe(20);
      const histogramSvg = svgHistogram(bars, { width: 420, height: 180 }, "progress");
      expect(histogramSvg).toContain('class="bar"');

      // Classifier panels: the rendered series equals the server history
      // point for point, and the final points match exactly.
      const panels = classifierPanels(visible);
      const serverOrder = reference.records;
      expect(panels.total_intensity.v).toEqual(serverOrder.map((r) => r.total_intensity));
      expect(panels.invariant.v).toEqual(serverOrder.map((r) => r.invariant));
      expect(panels.correlation_length.v).toEqual(
        serverOrder.filter((r) => r.correlation_length !== null).map((r) => r.correlation_length),
      );
      expect(panels.total_intensity.t).toEqual(serverOrder.map((r) => r.acquired_at));

      const last = serverOrder[serverOrder.length - 1];
      expect(panels.total_intensity.v[panels.total_intensity.v.length - 1]).toBe(
        last?.total_intensity,
      );
      expect(panels.invariant.v[panels.invariant.v.length - 1]).toBe(last?.invariant);

      for (const name of ["total_intensity", "invariant", "correlation_length"] as const) {
        const svg = svgSeries(panels[name], { width: 420, height: 180 }, name);
        expect(svg).toContain("polyline");
      }

      // Dataset filter: only the selected stem remains visible.
      store.setDatasetFilter("alpha");
      const alphaVisible = store.visibleHistory();
      expect(alphaVisible.length).toBe(10);
      expect(alphaVisible.every((r) => r.dataset === "alpha")).toBe(true);

      const alphaReference = await client.command<HistoryReply>({
        command: "query_history",
        argument: { dataset: "alpha" },
      });
      expect(alphaVisible.map((r) => r.source_path)).toEqual(
        alphaReference.records.map((r) => r.source_path),
      );
      expect(classifierPanels(alphaVisible).total_intensity.v).toEqual(
        alphaReference.records.map((r) => r.total_intensity),
      );

      store.setDatasetFilter(null);
      expect(store.visibleHistory().length).toBe(20);

      // Wind the run down the way the operator would.
      const abortReply = await store.abort();
      expect(abortReply.status).toBe("ok");
      expect(store.getState().serverState).toBe("CONFIGURED");
    },
    120_000,
  );

  it(
    "rejects a forged session token",
    async () => {
      const res = await fetch(`${stack.gatewayBase}/api/command`, {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify({ token: "forged", payload: { command: "query_status" } }),
      });
      expect(res.status).toBe(401);
    },
    30_000,
  );

  it(
    "surfaces a server rejection verbatim",
    async () => {
      const client = new GatewayClient(stack.gatewayBase, inertSocket);
      const store = new SessionStore(client);
      await store.connect("vitest-console-2");
      const reply = await store.reintegrate();
      expect(reply.status).toBe("error");
      expect(store.getState().lastError).toBe("no queue is running");
    },
    30_000,
  );
});
