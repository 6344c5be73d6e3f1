/** Extraction job configuration and validation. */

export type Pooling = 'cls' | 'mean';

export interface ExtractionConfig {
  /** Model identifier on the hub or a local checkpoint path. */
  model: string;
  /** Task name; also the output subdirectory (e.g. "xnli"). */
  task: string;
  /** Target languages to export. */
  languages: string[];
  /** Splits to export for each language. */
  splits: string[];
  /** Root directory holding <task>/<language>/<split>.jsonl corpora. */
  dataRoot: string;
  /** Output dataset directory (the task directory). */
  outDir: string;
  /** Number of classification labels. */
  numClasses: number;
  /** Source language whose train+dev define the mean vector. */
  sourceLanguage: string;
  maxSeqLen: number;
  batchSize: number;
  pooling: Pooling;
  /** Compute the mean over source dev only (flagged mode). */
  devOnlyMean: boolean;
  backend: 'transformers' | 'mock';
}

export class ConfigError extends Error {}

export const TASK_CLASS_COUNTS: Record<string, number> = {
  xnli: 3,
  pawsx: 2,
  'paws-x': 2,
};

export const DEFAULTS = {
  maxSeqLen: 128,
  batchSize: 8,
  pooling: 'cls' as Pooling,
  sourceLanguage: 'en',
};

export function validateConfig(config: ExtractionConfig): ExtractionConfig {
  if (!config.model) throw new ConfigError('model is required');
  if (!config.task) throw new ConfigError('task is required');
  if (!config.languages.length) throw new ConfigError('languages must be non-empty');
  if (!config.splits.length) throw new ConfigError('splits must be non-empty');
  if (!Number.isInteger(config.maxSeqLen) || config.maxSeqLen < 8) {
    throw new ConfigError(`max sequence length must be >= 8, got ${config.maxSeqLen}`);
  }
  if (!Number.isInteger(config.batchSize) || config.batchSize < 1) {
    throw new ConfigError(`batch size must be >= 1, got ${config.batchSize}`);
  }
  if (!Number.isInteger(config.numClasses) || config.numClasses < 2) {
    throw new ConfigError(`num classes must be >= 2, got ${config.numClasses}`);
  }
  if (config.pooling !== 'cls' && config.pooling !== 'mean') {
    throw new ConfigError(`pooling must be cls or mean, got '${config.pooling}'`);
  }
  return config;
}
