// Spawns the Python inference service for end-to-end tests: trains a tiny
// fixture checkpoint once (cached in /tmp), starts `ldla serve`, and offers
// raw node:http helpers so requests bypass any DOM fetch emulation.

import { type ChildProcess, execFileSync, spawn } from "node:child_process";
import { existsSync, mkdirSync, readFileSync, writeFileSync } from "node:fs";
import http from "node:http";
import path from "node:path";

const FIXTURE_ROOT = "/tmp/ldla-e2e";
const CORPUS_DIR = path.join(FIXTURE_ROOT, "corpus");
const RUN_DIR = path.join(FIXTURE_ROOT, "run");
const CHECKPOINT = path.join(RUN_DIR, "checkpoint_final.pt");

export function ensureFixtureCheckpoint(): string {
  if (existsSync(CHECKPOINT)) {
    return CHECKPOINT;
  }
  mkdirSync(FIXTURE_ROOT, { recursive: true });
  execFileSync("ldla", [
    "gen-corpus",
    "--out",
    CORPUS_DIR,
    "--n-per-zone",
    "24",
    "--crop-size",
    "64",
    "--seed",
    "1",
    "--zones",
    "forehead,under_eye",
  ]);
  const config = {
    manifest: path.join(CORPUS_DIR, "manifest.jsonl"),
    out_dir: RUN_DIR,
    steps: 3,
    batch_size: 4,
    lr: 1e-3,
    seed: 0,
    codec: "toy",
    codec_pretrain_steps: 25,
    codec_hidden: 16,
    scorenet_warmup_steps: 50,
    crop_size: 64,
    checkpoint_every: 0,
  };
  const configPath = path.join(FIXTURE_ROOT, "train.json");
  writeFileSync(configPath, JSON.stringify(config));
  execFileSync("ldla", ["train", "--config", configPath], { stdio: "ignore" });
  if (!existsSync(CHECKPOINT)) {
    throw new Error(`training did not produce ${CHECKPOINT}`);
  }
  return CHECKPOINT;
}

export function fixturePng(): Buffer {
  // any corpus crop doubles as a valid square face upload
  return readFileSync(path.join(CORPUS_DIR, "images", "forehead_00000.png"));
}

export type RunningService = { baseUrl: string; stop: () => void };

export async function startService(
  checkpoint: string,
  port: number,
): Promise<RunningService> {
  const proc: ChildProcess = spawn(
    "ldla",
    [
      "serve",
      "--checkpoint",
      checkpoint,
      "--port",
      String(port),
      "--refiner",
      "identity",
    ],
    { stdio: "ignore" },
  );
  const baseUrl = `http://127.0.0.1:${port}`;
  const deadline = Date.now() + 60_000;
  for (;;) {
    try {
      const res = await getJson(`${baseUrl}/healthz`);
      if (res.status === 200) break;
    } catch {
      // not accepting connections yet
    }
    if (proc.exitCode !== null) {
      throw new Error(`service exited early with code ${proc.exitCode}`);
    }
    if (Date.now() > deadline) {
      proc.kill();
      throw new Error("service did not become healthy within 60s");
    }
    await sleep(250);
  }
  return { baseUrl, stop: () => proc.kill() };
}

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}

export type RawResponse = {
  status: number;
  headers: http.IncomingHttpHeaders;
  body: Buffer;
};

export function getRaw(url: string): Promise<RawResponse> {
  return new Promise((resolve, reject) => {
    http
      .get(url, (res) => {
        const chunks: Buffer[] = [];
        res.on("data", (c) => chunks.push(c));
        res.on("end", () =>
          resolve({
            status: res.statusCode ?? 0,
            headers: res.headers,
            body: Buffer.concat(chunks),
          }),
        );
      })
      .on("error", reject);
  });
}

export async function getJson(
  url: string,
): Promise<{ status: number; payload: any }> {
  const res = await getRaw(url);
  return { status: res.status, payload: JSON.parse(res.body.toString("utf8")) };
}

/** POST /infer with a hand-built multipart body (image file + request field). */
export function postInferRaw(
  baseUrl: string,
  imageBytes: Buffer,
  wireRequest: string,
): Promise<RawResponse> {
  const boundary = `ldla${Date.now().toString(16)}`;
  const body = Buffer.concat([
    Buffer.from(
      `--${boundary}\r\n` +
        `Content-Disposition: form-data; name="image"; filename="face.png"\r\n` +
        `Content-Type: image/png\r\n\r\n`,
    ),
    imageBytes,
    Buffer.from(
      `\r\n--${boundary}\r\n` +
        `Content-Disposition: form-data; name="request"\r\n\r\n` +
        `${wireRequest}\r\n--${boundary}--\r\n`,
    ),
  ]);
  const url = new URL(`${baseUrl}/infer`);
  return new Promise((resolve, reject) => {
    const req = http.request(
      {
        hostname: url.hostname,
        port: url.port,
        path: url.pathname,
        method: "POST",
        headers: {
          "Content-Type": `multipart/form-data; boundary=${boundary}`,
          "Content-Length": body.length,
        },
      },
      (res) => {
        const chunks: Buffer[] = [];
        res.on("data", (c) => chunks.push(c));
        res.on("end", () =>
          resolve({
            status: res.statusCode ?? 0,
            headers: res.headers,
            body: Buffer.concat(chunks),
          }),
        );
      },
    );
    req.on("error", reject);
    req.end(body);
  });
}
