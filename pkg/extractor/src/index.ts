export {
  EmbeddingDataset,
  Emb1Error,
  MAGIC,
  SPLITS,
  decodeEmb1,
  encodeEmb1,
  meanVectorDataset,
  numSamples,
  readEmb1,
  validateDataset,
  writeEmb1,
} from './emb1.js';
export {
  ConfigError,
  DEFAULTS,
  ExtractionConfig,
  Pooling,
  TASK_CLASS_COUNTS,
  validateConfig,
} from './config.js';
export { DataError, Example, corpusPath, loadJsonl } from './data.js';
export {
  BatchOutput,
  EmbeddingBackend,
  HeadWeights,
  MockBackend,
  TransformersBackend,
  createBackend,
} from './backend.js';
export {
  datasetPath,
  extractMean,
  extractSplit,
  meanPath,
  runExtraction,
  writeHeadSidecar,
} from './extract.js';
