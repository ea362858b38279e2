/** Process-level plumbing for driving the engine CLI. */

import { spawn } from "node:child_process";
import { mkdtempSync, readFileSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

/** Interpreter running the engine; override with DMMCS_PYTHON. */
export function pythonCommand(): string {
  return process.env.DMMCS_PYTHON ?? "python3";
}

export function engineArgs(subcommand: string, args: string[]): string[] {
  return ["-m", "dmmcs", subcommand, ...args];
}

export interface RunResult {
  stdout: string;
  stderr: string;
}

/** Run an engine command to completion; reject on nonzero exit. */
export function runEngine(subcommand: string, args: string[]): Promise<RunResult> {
  return new Promise((resolve, reject) => {
    const child = spawn(pythonCommand(), engineArgs(subcommand, args), {
      stdio: ["ignore", "pipe", "pipe"],
    });
    const out: Buffer[] = [];
    const err: Buffer[] = [];
    child.stdout.on("data", (chunk) => out.push(chunk));
    child.stderr.on("data", (chunk) => err.push(chunk));
    child.on("error", reject);
    child.on("close", (code) => {
      const stdout = Buffer.concat(out).toString("utf-8");
      const stderr = Buffer.concat(err).toString("utf-8");
      if (code === 0) {
        resolve({ stdout, stderr });
      } else {
        reject(new Error(`dmmcs ${subcommand} exited ${code}: ${stderr.trim()}`));
      }
    });
  });
}

export function tempDir(): string {
  return mkdtempSync(join(tmpdir(), "dmmcs-bindings-"));
}

export function writeJsonLines(path: string, rows: unknown[]): void {
  writeFileSync(path, rows.map((r) => JSON.stringify(r)).join("\n") + "\n", "utf-8");
}

export function readJsonLines<T>(path: string): T[] {
  return readFileSync(path, "utf-8")
    .split("\n")
    .filter((line) => line.trim().length > 0)
    .map((line) => JSON.parse(line) as T);
}

export function readJson<T>(path: string): T {
  return JSON.parse(readFileSync(path, "utf-8")) as T;
}
