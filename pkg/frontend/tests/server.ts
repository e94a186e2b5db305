// Spawns the real Python session service for round-trip tests.

import { spawn, spawnSync, type ChildProcess } from "node:child_process";
import { mkdtempSync } from "node:fs";
import { createServer } from "node:net";
import { tmpdir } from "node:os";
import { join } from "node:path";

export interface RunningServer {
  baseUrl: string;
  stop(): void;
}

function freePort(): Promise<number> {
  return new Promise((resolve, reject) => {
    const probe = createServer();
    probe.listen(0, "127.0.0.1", () => {
      const address = probe.address();
      if (address && typeof address === "object") {
        const port = address.port;
        probe.close(() => resolve(port));
      } else {
        reject(new Error("no port"));
      }
    });
  });
}

export async function startServer(): Promise<RunningServer> {
  const dataRoot = mkdtempSync(join(tmpdir(), "handloop-ui-"));
  const seeded = spawnSync(
    "python3",
    ["-m", "handloop.cli", "make-demo-data", "--data-root", dataRoot, "--events", "4", "--seed", "30"],
    { stdio: "pipe" },
  );
  if (seeded.status !== 0) {
    throw new Error(`make-demo-data failed: ${seeded.stderr}`);
  }

  const port = await freePort();
  const child: ChildProcess = spawn(
    "python3",
    ["-m", "handloop.cli", "serve", "--data-root", dataRoot, "--port", String(port)],
    { stdio: "pipe" },
  );
  const baseUrl = `http://127.0.0.1:${port}`;

  const deadline = Date.now() + 20_000;
  for (;;) {
    try {
      const response = await fetch(`${baseUrl}/clips`);
      if (response.ok) break;
    } catch {
      // not up yet
    }
    if (Date.now() > deadline) {
      child.kill();
      throw new Error("service did not come up in time");
    }
    await new Promise((r) => setTimeout(r, 100));
  }

  return {
    baseUrl,
    stop: () => {
      child.kill("SIGTERM");
    },
  };
}

export async function waitFor(
  predicate: () => boolean,
  timeoutMs = 10_000,
  stepMs = 20,
): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (!predicate()) {
    if (Date.now() > deadline) {
      throw new Error("condition not reached in time");
    }
    await new Promise((r) => setTimeout(r, stepMs));
  }
}
