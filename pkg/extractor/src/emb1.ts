/**
 * EMB1 container codec.
 *
 * Byte layout (integers little-endian):
 *   magic      4 bytes ASCII "EMB1"
 *   header_len u32
 *   header     UTF-8 JSON: task, language, split, dim, num_classes,
 *              num_samples, has_logits, provenance
 *   features   num_samples x dim float32, row-major
 *   labels     num_samples x u32
 *   logits     num_samples x num_classes float32 (iff has_logits)
 *
 * Every write validates the full invariant set first, so any file this
 * module emits loads cleanly in the evaluation package.
 */
import fs from 'node:fs';
import path from 'node:path';

export const MAGIC = 'EMB1';
export const SPLITS = ['train', 'dev', 'test', 'mean'] as const;
export type Split = (typeof SPLITS)[number];

export interface EmbeddingDataset {
  task: string;
  language: string;
  split: string;
  dim: number;
  numClasses: number;
  features: Float32Array; // numSamples x dim, row-major
  labels: Uint32Array;
  logits?: Float32Array; // numSamples x numClasses, row-major
  provenance: string;
}

export class Emb1Error extends Error {}

export function numSamples(ds: EmbeddingDataset): number {
  return ds.labels.length;
}

export function validateDataset(ds: EmbeddingDataset): void {
  if (!SPLITS.includes(ds.split as Split)) {
    throw new Emb1Error(`split must be one of ${SPLITS.join(', ')}, got '${ds.split}'`);
  }
  if (!Number.isInteger(ds.dim) || ds.dim < 1) {
    throw new Emb1Error(`dim must be a positive integer, got ${ds.dim}`);
  }
  if (!Number.isInteger(ds.numClasses) || ds.numClasses < 1) {
    throw new Emb1Error(`num_classes must be a positive integer, got ${ds.numClasses}`);
  }
  const n = ds.labels.length;
  if (ds.features.length !== n * ds.dim) {
    throw new Emb1Error(
      `features length ${ds.features.length} != num_samples ${n} x dim ${ds.dim}`
    );
  }
  for (let i = 0; i < ds.features.length; i++) {
    if (!Number.isFinite(ds.features[i])) {
      throw new Emb1Error(`features contain a non-finite value at index ${i}`);
    }
  }
  const seen = new Array<boolean>(ds.numClasses).fill(false);
  for (let i = 0; i < n; i++) {
    const label = ds.labels[i];
    if (label >= ds.numClasses) {
      throw new Emb1Error(`label ${label} out of range [0, ${ds.numClasses})`);
    }
    seen[label] = true;
  }
  if (ds.split !== 'mean') {
    const missing = seen.indexOf(false);
    if (missing >= 0) {
      throw new Emb1Error(`class ${missing} has no samples`);
    }
  }
  if (ds.logits) {
    if (ds.logits.length !== n * ds.numClasses) {
      throw new Emb1Error(
        `logits length ${ds.logits.length} != num_samples ${n} x num_classes ${ds.numClasses}`
      );
    }
    for (let i = 0; i < ds.logits.length; i++) {
      if (!Number.isFinite(ds.logits[i])) {
        throw new Emb1Error(`logits contain a non-finite value at index ${i}`);
      }
    }
  }
}

const HOST_LITTLE_ENDIAN =
  new Uint8Array(new Uint32Array([1]).buffer)[0] === 1;

function float32Bytes(arr: Float32Array): Buffer {
  if (HOST_LITTLE_ENDIAN) {
    return Buffer.from(arr.buffer, arr.byteOffset, arr.byteLength);
  }
  const buf = Buffer.allocUnsafe(arr.length * 4);
  for (let i = 0; i < arr.length; i++) buf.writeFloatLE(arr[i], i * 4);
  return buf;
}

function uint32Bytes(arr: Uint32Array): Buffer {
  if (HOST_LITTLE_ENDIAN) {
    return Buffer.from(arr.buffer, arr.byteOffset, arr.byteLength);
  }
  const buf = Buffer.allocUnsafe(arr.length * 4);
  for (let i = 0; i < arr.length; i++) buf.writeUInt32LE(arr[i], i * 4);
  return buf;
}

export function encodeEmb1(ds: EmbeddingDataset): Buffer {
  validateDataset(ds);
  const header = {
    task: ds.task,
    language: ds.language,
    split: ds.split,
    dim: ds.dim,
    num_classes: ds.numClasses,
    num_samples: numSamples(ds),
    has_logits: Boolean(ds.logits),
    provenance: ds.provenance,
  };
  const headerBytes = Buffer.from(JSON.stringify(header), 'utf-8');
  const lenBytes = Buffer.allocUnsafe(4);
  lenBytes.writeUInt32LE(headerBytes.length, 0);
  const parts = [
    Buffer.from(MAGIC, 'ascii'),
    lenBytes,
    headerBytes,
    float32Bytes(ds.features),
    uint32Bytes(ds.labels),
  ];
  if (ds.logits) parts.push(float32Bytes(ds.logits));
  return Buffer.concat(parts);
}

export function writeEmb1(ds: EmbeddingDataset, filePath: string): void {
  const encoded = encodeEmb1(ds);
  fs.mkdirSync(path.dirname(filePath), { recursive: true });
  fs.writeFileSync(filePath, encoded);
}

function readFloat32(buf: Buffer, offset: number, count: number): Float32Array {
  const out = new Float32Array(count);
  for (let i = 0; i < count; i++) out[i] = buf.readFloatLE(offset + i * 4);
  return out;
}

export function decodeEmb1(buf: Buffer): EmbeddingDataset {
  if (buf.length < 8 || buf.toString('ascii', 0, 4) !== MAGIC) {
    throw new Emb1Error(`bad magic: expected '${MAGIC}'`);
  }
  const headerLen = buf.readUInt32LE(4);
  if (buf.length < 8 + headerLen) {
    throw new Emb1Error(`truncated header: expected ${headerLen} bytes`);
  }
  const header = JSON.parse(buf.toString('utf-8', 8, 8 + headerLen));
  const n = header.num_samples as number;
  const dim = header.dim as number;
  const numClasses = header.num_classes as number;
  const featBytes = n * dim * 4;
  const labelBytes = n * 4;
  const logitBytes = header.has_logits ? n * numClasses * 4 : 0;
  const expected = 8 + headerLen + featBytes + labelBytes + logitBytes;
  if (buf.length !== expected) {
    throw new Emb1Error(
      `payload size mismatch: expected ${expected} bytes total, got ${buf.length}; ` +
      'truncated stream or header/payload dimension mismatch'
    );
  }
  let offset = 8 + headerLen;
  const features = readFloat32(buf, offset, n * dim);
  offset += featBytes;
  const labels = new Uint32Array(n);
  for (let i = 0; i < n; i++) labels[i] = buf.readUInt32LE(offset + i * 4);
  offset += labelBytes;
  let logits: Float32Array | undefined;
  if (header.has_logits) {
    logits = readFloat32(buf, offset, n * numClasses);
  }
  const ds: EmbeddingDataset = {
    task: header.task,
    language: header.language,
    split: header.split,
    dim,
    numClasses,
    features,
    labels,
    logits,
    provenance: header.provenance,
  };
  validateDataset(ds);
  return ds;
}

export function readEmb1(filePath: string): EmbeddingDataset {
  return decodeEmb1(fs.readFileSync(filePath));
}

/** Wrap a mean vector in the container convention: one row, split "mean". */
export function meanVectorDataset(
  task: string,
  values: Float64Array,
  provenance: string
): EmbeddingDataset {
  return {
    task,
    language: '',
    split: 'mean',
    dim: values.length,
    numClasses: 1,
    features: Float32Array.from(values),
    labels: new Uint32Array([0]),
    provenance,
  };
}
