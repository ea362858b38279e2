/** External-model adapter: serve a scripting-side callback to the engine.
 *
 * The engine is spawned with `--model-cmd -`, which makes it speak the
 * line-delimited JSON model protocol on its own stdin/stdout: it writes
 * `{"prefix": [ids...]}` requests (pipelined, one batch per decoding
 * step) and expects `{"logprobs": [...]}` replies covering every
 * vocabulary token plus end-of-sequence.
 */

import { spawn } from "node:child_process";
import { writeFileSync } from "node:fs";
import { join } from "node:path";
import { createInterface } from "node:readline";

import { engineArgs, pythonCommand, tempDir } from "./engine.js";
import type { ExternalModelHandle, ModelCallback } from "./types.js";

/** Probability 0 as a serializable log value: exp(-1e9) underflows to 0,
 * and JSON has no -Infinity literal. */
const LOG_ZERO = -1e9;

export function registerModel(callback: ModelCallback, vocab: string[]): ExternalModelHandle {
  if (vocab.length === 0) {
    throw new Error("external model vocabulary must be non-empty");
  }
  return { kind: "external", vocab: [...vocab], callback, busy: false };
}

export function toLogprobs(probs: number[]): number[] {
  return probs.map((p) => (p > 0 ? Math.log(p) : LOG_ZERO));
}

export function writeVocabFile(dir: string, vocab: string[]): string {
  const path = join(dir, "vocab.json");
  writeFileSync(path, JSON.stringify({ tokens: vocab }) + "\n", "utf-8");
  return path;
}

/**
 * Run one engine decode while answering its model queries from the
 * handle's callback. Resolves with the engine's exit, after which the
 * caller reads the output file.
 */
export async function serveDecode(
  handle: ExternalModelHandle,
  cliArgs: string[],
): Promise<void> {
  if (handle.busy) {
    throw new Error("external model handle is busy; decodes are not re-entrant");
  }
  handle.busy = true;
  try {
    await new Promise<void>((resolve, reject) => {
      const child = spawn(pythonCommand(), engineArgs("decode", cliArgs), {
        stdio: ["pipe", "pipe", "pipe"],
      });
      const stderr: Buffer[] = [];
      child.stderr.on("data", (chunk) => stderr.push(chunk));
      // The engine exits on its own once decoding ends; late writes after
      // that are harmless races.
      child.stdin.on("error", () => undefined);

      const lines = createInterface({ input: child.stdout });
      lines.on("line", (line) => {
        let prefix: number[];
        try {
          prefix = JSON.parse(line).prefix as number[];
        } catch (exc) {
          child.kill();
          reject(new Error(`unparseable model request: ${line}`));
          return;
        }
        const logprobs = toLogprobs(handle.callback(prefix));
        child.stdin.write(JSON.stringify({ logprobs }) + "\n");
      });

      child.on("error", reject);
      child.on("close", (code) => {
        if (code === 0) {
          resolve();
        } else {
          reject(new Error(
            `dmmcs decode exited ${code}: ${Buffer.concat(stderr).toString("utf-8").trim()}`,
          ));
        }
      });
    });
  } finally {
    handle.busy = false;
  }
}

export function prepareExternalModel(handle: ExternalModelHandle): {
  vocabPath: string;
  dir: string;
} {
  const dir = tempDir();
  return { dir, vocabPath: writeVocabFile(dir, handle.vocab) };
}
