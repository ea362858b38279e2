/** Scripting-side surface of the guided-decoding engine.
 *
 * Every call shells out to the engine CLI and exchanges data through its
 * documented file formats, so binding results are byte-identical to CLI
 * results on identical inputs. External sequence models register a
 * callback and are served to the engine over its JSON pipe protocol.
 */

import { join } from "node:path";

import {
  readJson,
  readJsonLines,
  runEngine,
  tempDir,
  writeJsonLines,
} from "./engine.js";
import { prepareExternalModel, registerModel, serveDecode } from "./model.js";
import type {
  DecodeConfig,
  DecodeRecord,
  DecodeRequest,
  EvalMetric,
  EvalReportFile,
  EvaluateOptions,
  ExternalModelHandle,
  ModelRef,
  NGramModelRef,
  StatsFile,
} from "./types.js";

export { registerModel };
export * from "./types.js";

export function ngramModel(path: string): NGramModelRef {
  return { kind: "ngram", path };
}

export interface BuildStatsResult {
  path: string;
  stats: StatsFile;
}

/** Phase-1 statistics from a corpus + embeddings pair. */
export async function buildStats(
  corpusPath: string,
  embeddingsPath: string,
  opts: { out?: string; seed?: number } = {},
): Promise<BuildStatsResult> {
  const out = opts.out ?? join(tempDir(), "stats.json");
  const args = [
    "--corpus", corpusPath,
    "--embeddings", embeddingsPath,
    "--out", out,
  ];
  if (opts.seed !== undefined) {
    args.push("--seed", String(opts.seed));
  }
  await runEngine("build-stats", args);
  return { path: out, stats: readJson<StatsFile>(out) };
}

export interface DecodeResult {
  path: string;
  records: DecodeRecord[];
}

function decodeArgs(requestsPath: string, out: string, config: DecodeConfig): string[] {
  const args = [
    "--requests", requestsPath,
    "--method", config.method ?? "standard",
    "--alpha", String(config.alpha ?? 0),
    "--beam", String(config.beam ?? 4),
    "--max-len", String(config.maxLen ?? 20),
    "--out", out,
  ];
  if (config.stats) {
    args.push("--stats", config.stats);
  }
  if (config.embeddings) {
    args.push("--embeddings", config.embeddings);
  }
  if (config.seed !== undefined) {
    args.push("--seed", String(config.seed));
  }
  if (config.timing) {
    args.push("--timing");
  }
  return args;
}

function requestsFile(requests: DecodeRequest[] | string): string {
  if (typeof requests === "string") {
    return requests;
  }
  const path = join(tempDir(), "requests.jsonl");
  writeJsonLines(path, requests);
  return path;
}

/**
 * Decode a batch of tag requests with either a trained n-gram model
 * (by file path) or a registered external model handle.
 */
export async function decode(
  model: ModelRef,
  requests: DecodeRequest[] | string,
  config: DecodeConfig = {},
  opts: { out?: string } = {},
): Promise<DecodeResult> {
  const out = opts.out ?? join(tempDir(), "decoded.jsonl");
  const requestsPath = requestsFile(requests);
  const args = decodeArgs(requestsPath, out, config);
  if (model.kind === "ngram") {
    await runEngine("decode", ["--model", model.path, ...args]);
  } else {
    const { vocabPath } = prepareExternalModel(model);
    await serveDecode(model, ["--model-cmd", "-", "--model-vocab", vocabPath, ...args]);
  }
  return { path: out, records: readJsonLines<DecodeRecord>(out) };
}

export interface EvaluateResult {
  path: string;
  report: EvalReportFile;
}

/** Score decoded captions against a gold corpus. */
export async function evaluate(
  corpusPath: string,
  hypsPath: string,
  metric: EvalMetric,
  options: EvaluateOptions = {},
): Promise<EvaluateResult> {
  const out = options.out ?? join(tempDir(), "report.json");
  const args = [
    "--corpus", corpusPath,
    "--hyps", hypsPath,
    "--metric", metric,
    "--out", out,
  ];
  if (options.groups) {
    args.push("--groups");
  }
  if (options.sentenceOrder) {
    args.push("--sentence-order");
  }
  if (options.subsets) {
    args.push("--subsets", String(options.subsets));
  }
  if (options.seed !== undefined) {
    args.push("--seed", String(options.seed));
  }
  if (options.rules) {
    args.push("--rules", options.rules);
  }
  if (options.stats) {
    args.push("--stats", options.stats);
  }
  if (options.embeddings) {
    args.push("--embeddings", options.embeddings);
  }
  if (options.model) {
    args.push("--model", options.model);
  }
  await runEngine("evaluate", args);
  return { path: out, report: readJson<EvalReportFile>(out) };
}

/** Convenience: the synthetic-corpus generator, for tests and demos. */
export async function generateSynthetic(opts: {
  out: string;
  tags?: number;
  examples?: number;
  valExamples?: number;
  testExamples?: number;
  seed?: number;
  tagDrop?: number;
  tagAdd?: number;
}): Promise<string> {
  const args = ["--out", opts.out];
  if (opts.tags !== undefined) args.push("--tags", String(opts.tags));
  if (opts.examples !== undefined) args.push("--examples", String(opts.examples));
  if (opts.valExamples !== undefined) args.push("--val-examples", String(opts.valExamples));
  if (opts.testExamples !== undefined) args.push("--test-examples", String(opts.testExamples));
  if (opts.seed !== undefined) args.push("--seed", String(opts.seed));
  if (opts.tagDrop !== undefined) args.push("--tag-drop", String(opts.tagDrop));
  if (opts.tagAdd !== undefined) args.push("--tag-add", String(opts.tagAdd));
  await runEngine("gen-synth", args);
  return opts.out;
}

/** Convenience: train the bundled add-k n-gram toy model. */
export async function trainNgram(
  corpusPath: string,
  opts: { out?: string; n?: number; k?: number } = {},
): Promise<NGramModelRef> {
  const out = opts.out ?? join(tempDir(), "model.json");
  const args = ["--corpus", corpusPath, "--out", out];
  if (opts.n !== undefined) {
    args.push("--n", String(opts.n));
  }
  if (opts.k !== undefined) {
    args.push("--k", String(opts.k));
  }
  await runEngine("train-lm", args);
  return ngramModel(out);
}
