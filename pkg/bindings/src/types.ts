/** Shared wire types mirroring the engine's file schemas. */

export type DecodingMethod =
  | "standard"
  | "dmmcs"
  | "dmmcs-hd"
  | "constrained-all"
  | "constrained-any";

export interface DecodeConfig {
  method?: DecodingMethod;
  alpha?: number;
  beam?: number;
  maxLen?: number;
  /** Stats file path; required for the dmmcs methods. */
  stats?: string;
  /** Embeddings file path; required for the dmmcs methods. */
  embeddings?: string;
  seed?: number;
  timing?: boolean;
}

export interface DecodeRequest {
  id: string;
  tags: string[];
  gold_caption?: string;
}

/** One line of the engine's decode output. */
export interface DecodeRecord {
  id: string;
  tokens: string[];
  text: string;
  raw_nll: number;
  combined_score: number;
  method: string;
  alpha: number;
  constraints_satisfied: boolean;
}

export interface TagStatsRow {
  tag: string;
  mmcs: number;
  support: number;
  samples: number[];
}

export interface StatsFile {
  embedding_dim: number;
  default_mmcs: number | null;
  tags: TagStatsRow[];
}

export type EvalMetric = "bleu" | "ca" | "gap" | "perplexity";

export interface EvaluateOptions {
  groups?: boolean;
  sentenceOrder?: boolean;
  subsets?: number;
  seed?: number;
  rules?: string;
  stats?: string;
  embeddings?: string;
  model?: string;
  out?: string;
}

export interface EvalReportFile {
  per_example: Record<string, Record<string, number>>;
  aggregate: Record<string, { mean: number; std: number }>;
  corpus: Record<string, number>;
  groups?: Record<string, Record<string, { mean: number; std: number; count: number }>>;
  subsets?: { count: number; seed: number; values: number[]; mean: number; std: number };
}

/**
 * A scripting-side sequence model: given the generated prefix (token ids),
 * return a probability vector over the engine vocabulary — one entry per
 * vocabulary token plus a final entry for end-of-sequence. The engine
 * re-validates every vector and aborts on contract violations.
 */
export type ModelCallback = (prefix: number[]) => number[];

export interface ExternalModelHandle {
  readonly kind: "external";
  readonly vocab: string[];
  readonly callback: ModelCallback;
  /** Handles are not re-entrant; one decode at a time. */
  busy: boolean;
}

export interface NGramModelRef {
  readonly kind: "ngram";
  /** Path to a trained n-gram model JSON. */
  readonly path: string;
}

export type ModelRef = NGramModelRef | ExternalModelHandle;
