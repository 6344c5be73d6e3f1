import assert from 'node:assert/strict';
import { test } from 'node:test';

import { ConfigError, ExtractionConfig, validateConfig } from '../src/config.js';

function base(overrides: Partial<ExtractionConfig> = {}): ExtractionConfig {
  return {
    model: 'some-checkpoint',
    task: 'xnli',
    languages: ['de', 'fr'],
    splits: ['dev', 'test'],
    dataRoot: '/tmp/corpora',
    outDir: '/tmp/out',
    numClasses: 3,
    sourceLanguage: 'en',
    maxSeqLen: 128,
    batchSize: 8,
    pooling: 'cls',
    devOnlyMean: false,
    backend: 'mock',
    ...overrides,
  };
}

test('valid config passes', () => {
  assert.equal(validateConfig(base()).maxSeqLen, 128);
});

test('empty language list rejected', () => {
  assert.throws(() => validateConfig(base({ languages: [] })), ConfigError);
});

test('max sequence length below 8 rejected', () => {
  assert.throws(() => validateConfig(base({ maxSeqLen: 4 })), /must be >= 8/);
});

test('bad pooling rejected', () => {
  assert.throws(
    () => validateConfig(base({ pooling: 'max' as never })),
    /pooling/
  );
});

test('batch size must be positive', () => {
  assert.throws(() => validateConfig(base({ batchSize: 0 })), /batch size/);
});
