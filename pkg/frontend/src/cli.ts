/**
 * Batch figure renderer. Usage:
 *   node dist/cli.js frontier <frontier.csv> [--out fig.svg]
 *   node dist/cli.js regime   <regime.csv>   [--out fig.svg]
 *   node dist/cli.js bias     <bias.csv>     [--out fig.svg]
 * By default the figure is written beside its input as <kind>.svg.
 */

import { readFileSync, writeFileSync } from "node:fs";
import { dirname, join } from "node:path";

import { parseArtifactCsv } from "./artifacts.js";
import { plotBiasProfile } from "./bias.js";
import { plotFrontier } from "./frontier.js";
import { plotRegimeMap } from "./regime.js";

const RENDERERS: Record<string, (doc: ReturnType<typeof parseArtifactCsv>) => string> = {
  frontier: plotFrontier,
  regime: plotRegimeMap,
  bias: plotBiasProfile,
};

export function renderFile(kind: string, inputPath: string, outPath?: string): string {
  const renderer = RENDERERS[kind];
  if (!renderer) {
    throw new Error(`unknown figure kind ${kind}; expected frontier|regime|bias`);
  }
  const doc = parseArtifactCsv(readFileSync(inputPath, "utf-8"));
  if (doc.rows.length === 0) {
    console.warn(`warning: ${inputPath} has no data rows; rendering empty axes`);
  }
  const svg = renderer(doc);
  const target = outPath ?? join(dirname(inputPath), `${kind}.svg`);
  writeFileSync(target, svg, "utf-8");
  return target;
}

function main(argv: string[]): number {
  const args = argv.slice(2);
  if (args.length < 2) {
    console.error("usage: cli.js <frontier|regime|bias> <input.csv> [--out file.svg]");
    return 1;
  }
  const [kind, input] = args;
  let out: string | undefined;
  const outIdx = args.indexOf("--out");
  if (outIdx >= 0) out = args[outIdx + 1];
  try {
    const target = renderFile(kind, input, out);
    console.log(`figure: ${target}`);
    return 0;
  } catch (err) {
    console.error(`error: ${(err as Error).message}`);
    return 1;
  }
}

if (import.meta.url === `file://${process.argv[1]}`) {
  process.exit(main(process.argv));
}
