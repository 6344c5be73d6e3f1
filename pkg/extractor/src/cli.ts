#!/usr/bin/env node
/**
 * nnfs-extract: export embeddings, labels, logits and the source mean
 * vector from a sequence-classification checkpoint into an EMB1 dataset
 * directory that the evaluation package consumes directly.
 *
 *   nnfs-extract --model xlm-roberta-large-xnli --task xnli \
 *     --languages de,fr --splits dev,test \
 *     --data-root corpora/ --out datasets/xnli
 *
 * Corpora are JSONL files at <data-root>/<task>/<language>/<split>.jsonl
 * with {"text": ..., "text_pair": ..., "label": ...} rows.
 */
import { realpathSync } from 'node:fs';
import { fileURLToPath } from 'node:url';

import { createBackend } from './backend.js';
import { ConfigError, DEFAULTS, ExtractionConfig, TASK_CLASS_COUNTS, validateConfig } from './config.js';
import { runExtraction } from './extract.js';

function parseArgs(argv: string[]): ExtractionConfig {
  const flags = new Map<string, string>();
  for (let i = 0; i < argv.length; i++) {
    const arg = argv[i];
    if (!arg.startsWith('--')) throw new ConfigError(`unexpected argument '${arg}'`);
    const key = arg.slice(2);
    if (key === 'dev-only-mean') {
      flags.set(key, 'true');
      continue;
    }
    const value = argv[++i];
    if (value === undefined) throw new ConfigError(`flag --${key} needs a value`);
    flags.set(key, value);
  }
  const get = (key: string, fallback?: string): string => {
    const v = flags.get(key) ?? fallback;
    if (v === undefined) throw new ConfigError(`missing required flag --${key}`);
    return v;
  };
  const task = get('task');
  const numClasses = flags.has('num-classes')
    ? Number(get('num-classes'))
    : TASK_CLASS_COUNTS[task];
  if (!numClasses) {
    throw new ConfigError(
      `unknown task '${task}': pass --num-classes explicitly`
    );
  }
  return validateConfig({
    model: get('model'),
    task,
    languages: get('languages').split(',').map((s) => s.trim()).filter(Boolean),
    splits: get('splits', 'dev,test').split(',').map((s) => s.trim()).filter(Boolean),
    dataRoot: get('data-root'),
    outDir: get('out'),
    numClasses,
    sourceLanguage: get('source-language', DEFAULTS.sourceLanguage),
    maxSeqLen: Number(get('max-seq-len', String(DEFAULTS.maxSeqLen))),
    batchSize: Number(get('batch-size', String(DEFAULTS.batchSize))),
    pooling: get('pooling', DEFAULTS.pooling) as ExtractionConfig['pooling'],
    devOnlyMean: flags.get('dev-only-mean') === 'true',
    backend: get('backend', 'transformers') as ExtractionConfig['backend'],
  });
}

export async function main(argv: string[]): Promise<number> {
  let config: ExtractionConfig;
  try {
    config = parseArgs(argv);
  } catch (err) {
    console.error(`error: ${(err as Error).message}`);
    return 2;
  }
  // the mock backend needs a fixed dim; real backends discover it
  const backend = createBackend(
    config.backend,
    config.model,
    Number(process.env.NNFS_MOCK_DIM ?? 64),
    config.numClasses,
    config.pooling,
    config.maxSeqLen
  );
  try {
    const written = await runExtraction(config, backend);
    for (const file of written) console.log(`wrote ${file}`);
    return 0;
  } catch (err) {
    console.error(`error: ${(err as Error).message}`);
    return 1;
  }
}

// run when executed directly or through the bin symlink, not when imported
let invokedDirectly = false;
if (process.argv[1]) {
  try {
    invokedDirectly = fileURLToPath(import.meta.url) === realpathSync(process.argv[1]);
  } catch {
    invokedDirectly = false;
  }
}
if (invokedDirectly) {
  main(process.argv.slice(2)).then((code) => {
    process.exitCode = code;
  });
}
