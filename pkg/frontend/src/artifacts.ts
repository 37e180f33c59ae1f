/**
 * Loaders for tokenlab result artifacts: '#'-prefixed metadata CSVs and run
 * summary JSON. Figures are pure views: these loaders keep the source row
 * index on every parsed record so every rendered mark can point back at it.
 */

export const SUPPORTED_SCHEMA_VERSION = "1";

export interface CsvDocument {
  meta: Record<string, string>;
  columns: string[];
  rows: Record<string, string>[];
}

export function parseArtifactCsv(text: string): CsvDocument {
  const meta: Record<string, string> = {};
  const lines = text.split(/\r?\n/);
  let i = 0;
  for (; i < lines.length; i++) {
    const line = lines[i];
    if (!line.startsWith("# ")) break;
    const eq = line.indexOf("=");
    if (eq > 2) meta[line.slice(2, eq)] = line.slice(eq + 1);
  }
  const version = meta["schema_version"];
  if (version !== undefined && version !== SUPPORTED_SCHEMA_VERSION) {
    throw new Error(`unsupported artifact schema_version ${version}`);
  }
  while (i < lines.length && lines[i].trim() === "") i++;
  if (i >= lines.length) return { meta, columns: [], rows: [] };
  const columns = lines[i].split(",");
  const rows: Record<string, string>[] = [];
  for (i += 1; i < lines.length; i++) {
    const line = lines[i];
    if (line.trim() === "") continue;
    const cells = line.split(",");
    const row: Record<string, string> = {};
    columns.forEach((col, k) => (row[col] = cells[k] ?? ""));
    rows.push(row);
  }
  return { meta, columns, rows };
}

function num(value: string, field: string, rowIndex: number): number {
  if (value === "inf") return Infinity;
  const parsed = Number(value);
  if (!Number.isFinite(parsed)) {
    throw new Error(`row ${rowIndex}: ${field} is not a finite number: ${value}`);
  }
  return parsed;
}

export interface FrontierRow {
  policy: string;
  estimator: string;
  blockSize: number;
  tau: number;
  granularity: number;
  realtimeRatio: number;
  regretMean: number | null;
  regretCi: number;
  seeds: number;
  sourceRow: number;
}

const FRONTIER_COLUMNS = [
  "policy", "estimator", "block_size", "tau", "G", "R", "O_mean", "O_ci95", "seeds",
];

export function frontierRows(doc: CsvDocument): FrontierRow[] {
  if (doc.rows.length > 0) {
    for (const col of FRONTIER_COLUMNS) {
      if (!doc.columns.includes(col)) throw new Error(`frontier CSV missing column ${col}`);
    }
  }
  return doc.rows.map((row, k) => ({
    policy: row["policy"],
    estimator: row["estimator"],
    blockSize: num(row["block_size"], "block_size", k),
    tau: row["tau"] === "inf" ? Infinity : num(row["tau"], "tau", k),
    granularity: num(row["G"], "G", k),
    realtimeRatio: num(row["R"], "R", k),
    regretMean: row["O_mean"] === "" ? null : num(row["O_mean"], "O_mean", k),
    regretCi: num(row["O_ci95"], "O_ci95", k),
    seeds: num(row["seeds"], "seeds", k),
    sourceRow: k,
  }));
}

export interface RegimeRow {
  cv: number;
  pressure: number;
  policy: string;
  goodputMean: number;
  goodputCi: number;
  label: string;
  sourceRow: number;
}

export function regimeRows(doc: CsvDocument): RegimeRow[] {
  return doc.rows.map((row, k) => ({
    cv: num(row["cv"], "cv", k),
    pressure: num(row["pressure"], "pressure", k),
    policy: row["policy"],
    goodputMean: num(row["goodput_mean"], "goodput_mean", k),
    goodputCi: num(row["goodput_ci"], "goodput_ci", k),
    label: row["label"],
    sourceRow: k,
  }));
}

export interface BiasRow {
  proxy: string;
  tokenClass: string;
  bias: number;
  stderr: number;
  count: number;
  sourceRow: number;
}

export function biasRows(doc: CsvDocument): BiasRow[] {
  return doc.rows.map((row, k) => ({
    proxy: row["proxy"],
    tokenClass: row["class"],
    bias: num(row["bias"], "bias", k),
    stderr: num(row["stderr"], "stderr", k),
    count: num(row["count"], "count", k),
    sourceRow: k,
  }));
}

export interface RunSummary {
  schemaVersion: number;
  seed: number;
  metrics: Record<string, unknown>;
}

export function parseRunSummary(text: string): RunSummary {
  const doc = JSON.parse(text) as Record<string, unknown>;
  const version = doc["schema_version"];
  if (version !== 1) throw new Error(`unsupported summary schema_version ${version}`);
  return {
    schemaVersion: 1,
    seed: doc["seed"] as number,
    metrics: doc["metrics"] as Record<string, unknown>,
  };
}
