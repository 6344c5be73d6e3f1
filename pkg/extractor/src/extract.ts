/**
 * Extraction jobs: one EMB1 file per (language, split), plus the source
 * mean vector and the classifier-head sidecar.
 */
import fs from 'node:fs';
import path from 'node:path';

import { EmbeddingBackend } from './backend.js';
import { ExtractionConfig } from './config.js';
import { corpusPath, loadJsonl } from './data.js';
import {
  EmbeddingDataset,
  meanVectorDataset,
  readEmb1,
  writeEmb1,
} from './emb1.js';

export function datasetPath(config: ExtractionConfig, language: string, split: string): string {
  return path.join(config.outDir, language, `${split}.emb1`);
}

export function meanPath(config: ExtractionConfig): string {
  return path.join(config.outDir, 'mean_src.emb1');
}

function provenance(config: ExtractionConfig, backend: EmbeddingBackend): string {
  return (
    `extractor model=${config.model} identity=${backend.identity()} ` +
    `pooling=${config.pooling} max_seq_len=${config.maxSeqLen} overflow=truncate`
  );
}

/** Run inference over one corpus split and write its EMB1 file. */
export async function extractSplit(
  config: ExtractionConfig,
  backend: EmbeddingBackend,
  language: string,
  split: string
): Promise<EmbeddingDataset> {
  const examples = loadJsonl(
    corpusPath(config.dataRoot, config.task, language, split),
    config.numClasses
  );
  const features: Float32Array[] = [];
  const logits: Float32Array[] = [];
  for (let start = 0; start < examples.length; start += config.batchSize) {
    const batch = examples.slice(start, start + config.batchSize);
    const out = await backend.embedBatch(
      batch.map((e) => e.text),
      batch.map((e) => e.textPair)
    );
    features.push(...out.features);
    logits.push(...out.logits);
  }
  const dim = features[0].length;
  const flatFeatures = new Float32Array(examples.length * dim);
  features.forEach((f, i) => flatFeatures.set(f, i * dim));
  const flatLogits = new Float32Array(examples.length * config.numClasses);
  logits.forEach((z, i) => flatLogits.set(z, i * config.numClasses));

  const dataset: EmbeddingDataset = {
    task: config.task,
    language,
    split,
    dim,
    numClasses: config.numClasses,
    features: flatFeatures,
    labels: Uint32Array.from(examples.map((e) => e.label)),
    logits: flatLogits,
    provenance: provenance(config, backend),
  };
  writeEmb1(dataset, datasetPath(config, language, split));
  return dataset;
}

function accumulate(sum: Float64Array, ds: EmbeddingDataset): number {
  const n = ds.labels.length;
  for (let i = 0; i < n; i++) {
    const base = i * ds.dim;
    for (let j = 0; j < ds.dim; j++) sum[j] += ds.features[base + j];
  }
  return n;
}

/**
 * Mean representation over the source train+dev exports (dev only when
 * flagged). Splits already on disk are reused; missing ones are extracted.
 */
export async function extractMean(
  config: ExtractionConfig,
  backend: EmbeddingBackend
): Promise<string> {
  const splits = config.devOnlyMean ? ['dev'] : ['train', 'dev'];
  let sum: Float64Array | null = null;
  let total = 0;
  const used: string[] = [];
  for (const split of splits) {
    const file = datasetPath(config, config.sourceLanguage, split);
    const ds = fs.existsSync(file)
      ? readEmb1(file)
      : await extractSplit(config, backend, config.sourceLanguage, split);
    if (!sum) sum = new Float64Array(ds.dim);
    if (sum.length !== ds.dim) {
      throw new Error(`dim mismatch across source splits: ${ds.dim} != ${sum.length}`);
    }
    total += accumulate(sum, ds);
    used.push(`${config.task}/${config.sourceLanguage}/${split}[${ds.labels.length}]`);
  }
  if (!sum || !total) throw new Error('no source samples to average');
  for (let j = 0; j < sum.length; j++) sum[j] /= total;
  const note = config.devOnlyMean ? ' (dev-only mode)' : '';
  const mean = meanVectorDataset(
    config.task,
    sum,
    `mean of ${used.join(', ')}${note}; ${provenance(config, backend)}`
  );
  const file = meanPath(config);
  writeEmb1(mean, file);
  return file;
}

/** Dump the classification head to a JSON sidecar when the backend has it. */
export function writeHeadSidecar(
  config: ExtractionConfig,
  backend: EmbeddingBackend
): string | null {
  const head = backend.headWeights();
  if (!head) return null;
  const file = path.join(config.outDir, 'head_src.json');
  fs.mkdirSync(config.outDir, { recursive: true });
  fs.writeFileSync(
    file,
    JSON.stringify({ source: backend.identity(), ...head }, null, 2) + '\n'
  );
  return file;
}

/** Full job: every (language, split), the mean vector, and the sidecar. */
export async function runExtraction(
  config: ExtractionConfig,
  backend: EmbeddingBackend
): Promise<string[]> {
  await backend.init();
  const written: string[] = [];
  for (const language of config.languages) {
    for (const split of config.splits) {
      await extractSplit(config, backend, language, split);
      written.push(datasetPath(config, language, split));
    }
  }
  written.push(await extractMean(config, backend));
  const sidecar = writeHeadSidecar(config, backend);
  if (sidecar) written.push(sidecar);
  return written;
}
