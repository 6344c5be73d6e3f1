/** JSONL corpus loading: one `{text, text_pair?, label}` object per line. */
import fs from 'node:fs';
import path from 'node:path';

export interface Example {
  text: string;
  textPair?: string;
  label: number;
}

export class DataError extends Error {}

export function corpusPath(dataRoot: string, task: string, language: string, split: string): string {
  return path.join(dataRoot, task, language, `${split}.jsonl`);
}

export function loadJsonl(filePath: string, numClasses: number): Example[] {
  if (!fs.existsSync(filePath)) {
    throw new DataError(`corpus file not found: ${filePath}`);
  }
  const out: Example[] = [];
  const lines = fs.readFileSync(filePath, 'utf-8').split('\n');
  for (let i = 0; i < lines.length; i++) {
    const line = lines[i].trim();
    if (!line) continue;
    let row: any;
    try {
      row = JSON.parse(line);
    } catch (err) {
      throw new DataError(`${filePath}:${i + 1}: invalid JSON (${err})`);
    }
    if (typeof row.text !== 'string' || !Number.isInteger(row.label)) {
      throw new DataError(`${filePath}:${i + 1}: expected {text, label} fields`);
    }
    if (row.label < 0 || row.label >= numClasses) {
      throw new DataError(
        `${filePath}:${i + 1}: label ${row.label} out of range [0, ${numClasses})`
      );
    }
    out.push({
      text: row.text,
      textPair: typeof row.text_pair === 'string' ? row.text_pair : undefined,
      label: row.label,
    });
  }
  if (!out.length) throw new DataError(`corpus file is empty: ${filePath}`);
  return out;
}
