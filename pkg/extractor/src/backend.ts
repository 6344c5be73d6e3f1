/**
 * Embedding backends.
 *
 * A backend turns a batch of (text, text_pair) examples into pooled
 * feature vectors plus classifier logits. The transformers.js backend runs
 * a real sequence-classification checkpoint; the mock backend is a fully
 * deterministic featurizer used by tests and offline pipeline runs.
 */
import { Pooling } from './config.js';

export interface BatchOutput {
  /** Pooled representations, one Float32Array of length dim per example. */
  features: Float32Array[];
  /** Classifier logits, one Float32Array of length numClasses per example. */
  logits: Float32Array[];
}

export interface HeadWeights {
  dim: number;
  numClasses: number;
  /** Row-major numClasses x dim. */
  weights: number[][];
  bias: number[];
}

export interface EmbeddingBackend {
  readonly name: string;
  readonly dim: number;
  init(): Promise<void>;
  embedBatch(texts: string[], textPairs: (string | undefined)[]): Promise<BatchOutput>;
  /** Classification-head parameters, when the backend can expose them. */
  headWeights(): HeadWeights | undefined;
  /** Identity string recorded in provenance (model id / checkpoint hash). */
  identity(): string;
}

/* ------------------------------------------------------------------ mock */

function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a |= 0;
    a = (a + 0x6d2b79f5) | 0;
    let t = Math.imul(a ^ (a >>> 15), 1 | a);
    t = (t + Math.imul(t ^ (t >>> 7), 61 | t)) ^ t;
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

function fnv1a(text: string): number {
  let h = 0x811c9dc5;
  for (let i = 0; i < text.length; i++) {
    h ^= text.charCodeAt(i);
    h = Math.imul(h, 0x01000193);
  }
  return h >>> 0;
}

/**
 * Deterministic stand-in for a real encoder: character trigrams hashed
 * into `dim` buckets, L2-scaled, with a fixed random linear head producing
 * logits. Identical inputs always produce identical bytes.
 */
export class MockBackend implements EmbeddingBackend {
  readonly name = 'mock';
  readonly dim: number;
  private readonly numClasses: number;
  private readonly pooling: Pooling;
  private readonly maxSeqLen: number;
  private readonly head: { weights: number[][]; bias: number[] };

  constructor(dim: number, numClasses: number, pooling: Pooling, maxSeqLen: number, seed = 1234) {
    this.dim = dim;
    this.numClasses = numClasses;
    this.pooling = pooling;
    this.maxSeqLen = maxSeqLen;
    const rand = mulberry32(seed);
    this.head = {
      weights: Array.from({ length: numClasses }, () =>
        Array.from({ length: dim }, () => (rand() - 0.5) * 2)
      ),
      bias: Array.from({ length: numClasses }, () => (rand() - 0.5) * 0.1),
    };
  }

  async init(): Promise<void> {}

  private embedOne(text: string): Float32Array {
    // truncation mirrors the tokenizer policy: cap the character budget
    const clipped = text.slice(0, this.maxSeqLen * 8);
    const vec = new Float64Array(this.dim);
    const padded = `^^${clipped}$$`;
    for (let i = 0; i + 3 <= padded.length; i++) {
      const h = fnv1a(padded.slice(i, i + 3) + this.pooling);
      vec[h % this.dim] += h & 1 ? 1 : -1;
    }
    let norm = 0;
    for (let j = 0; j < this.dim; j++) norm += vec[j] * vec[j];
    norm = Math.sqrt(norm) || 1;
    const out = new Float32Array(this.dim);
    for (let j = 0; j < this.dim; j++) out[j] = vec[j] / norm;
    return out;
  }

  async embedBatch(texts: string[], textPairs: (string | undefined)[]): Promise<BatchOutput> {
    const features: Float32Array[] = [];
    const logits: Float32Array[] = [];
    for (let i = 0; i < texts.length; i++) {
      const joined = textPairs[i] ? `${texts[i]} </s> ${textPairs[i]}` : texts[i];
      const feat = this.embedOne(joined);
      features.push(feat);
      const z = new Float32Array(this.numClasses);
      for (let c = 0; c < this.numClasses; c++) {
        let acc = this.head.bias[c];
        const row = this.head.weights[c];
        for (let j = 0; j < this.dim; j++) acc += row[j] * feat[j];
        z[c] = acc;
      }
      logits.push(z);
    }
    return { features, logits };
  }

  headWeights(): HeadWeights {
    return {
      dim: this.dim,
      numClasses: this.numClasses,
      weights: this.head.weights,
      bias: this.head.bias,
    };
  }

  identity(): string {
    return `mock(dim=${this.dim},seed-fixed)`;
  }
}

/* --------------------------------------------------------- transformers */

/**
 * Real inference through transformers.js. Loaded lazily so the package
 * works (and its tests run) without the optional dependency installed.
 *
 * Features are the final-layer representation pooled per `pooling`: 'cls'
 * takes the first token (the representation the classification head
 * consumes), 'mean' averages over non-padding tokens. Logits come from the
 * sequence-classification graph of the same checkpoint. Sequences longer
 * than maxSeqLen are truncated, and that policy is recorded upstream in
 * the dataset provenance.
 */
export class TransformersBackend implements EmbeddingBackend {
  readonly name = 'transformers';
  dim = 0;
  private readonly model: string;
  private readonly pooling: Pooling;
  private readonly maxSeqLen: number;
  private tokenizer: any;
  private encoder: any;
  private classifier: any;

  constructor(model: string, pooling: Pooling, maxSeqLen: number) {
    this.model = model;
    this.pooling = pooling;
    this.maxSeqLen = maxSeqLen;
  }

  async init(): Promise<void> {
    let hub: any;
    // optional dependency: resolve at runtime only
    const moduleName = '@huggingface/transformers';
    try {
      hub = await import(moduleName);
    } catch {
      throw new Error(
        'the transformers backend needs the optional dependency ' +
        '@huggingface/transformers; install it or use --backend mock'
      );
    }
    this.tokenizer = await hub.AutoTokenizer.from_pretrained(this.model);
    this.encoder = await hub.AutoModel.from_pretrained(this.model);
    this.classifier = await hub.AutoModelForSequenceClassification.from_pretrained(this.model);
  }

  async embedBatch(texts: string[], textPairs: (string | undefined)[]): Promise<BatchOutput> {
    const pairs = textPairs.map((p) => p ?? null);
    const usePairs = pairs.some((p) => p !== null);
    const inputs = await this.tokenizer(texts, {
      text_pair: usePairs ? pairs : undefined,
      padding: true,
      truncation: true,
      max_length: this.maxSeqLen,
    });
    const encoded = await this.encoder(inputs);
    const hidden = encoded.last_hidden_state; // [batch, tokens, dim]
    const [batch, tokens, dim] = hidden.dims;
    this.dim = dim;
    const hiddenData: Float32Array = hidden.data;
    const mask: BigInt64Array | Float32Array = inputs.attention_mask.data;

    const features: Float32Array[] = [];
    for (let b = 0; b < batch; b++) {
      const vec = new Float32Array(dim);
      if (this.pooling === 'cls') {
        vec.set(hiddenData.subarray(b * tokens * dim, b * tokens * dim + dim));
      } else {
        let count = 0;
        const acc = new Float64Array(dim);
        for (let t = 0; t < tokens; t++) {
          if (Number(mask[b * tokens + t]) === 0) continue;
          count++;
          const base = (b * tokens + t) * dim;
          for (let j = 0; j < dim; j++) acc[j] += hiddenData[base + j];
        }
        for (let j = 0; j < dim; j++) vec[j] = acc[j] / (count || 1);
      }
      features.push(vec);
    }

    const classified = await this.classifier(inputs);
    const logitsTensor = classified.logits; // [batch, numClasses]
    const numClasses = logitsTensor.dims[1];
    const logitsData: Float32Array = logitsTensor.data;
    const logits: Float32Array[] = [];
    for (let b = 0; b < batch; b++) {
      logits.push(Float32Array.from(logitsData.subarray(b * numClasses, (b + 1) * numClasses)));
    }
    return { features, logits };
  }

  headWeights(): HeadWeights | undefined {
    return undefined; // not exposed portably by the ONNX graphs
  }

  identity(): string {
    return `transformers(model=${this.model})`;
  }
}

export function createBackend(
  kind: 'transformers' | 'mock',
  model: string,
  dim: number,
  numClasses: number,
  pooling: Pooling,
  maxSeqLen: number
): EmbeddingBackend {
  if (kind === 'mock') return new MockBackend(dim, numClasses, pooling, maxSeqLen);
  return new TransformersBackend(model, pooling, maxSeqLen);
}
