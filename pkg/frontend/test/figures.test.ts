import { mkdtempSync, readFileSync, statSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

import { describe, expect, it } from "vitest";

import {
  biasRows,
  frontierRows,
  parseArtifactCsv,
  parseRunSummary,
  regimeRows,
} from "../dist/artifacts.js";
import { plotBiasProfile } from "../dist/bias.js";
import { renderFile } from "../dist/cli.js";
import { plotFrontier } from "../dist/frontier.js";
import { plotRegimeMap } from "../dist/regime.js";

const FIXTURES = join(__dirname, "..", "fixtures");

function fixture(name: string): string {
  return readFileSync(join(FIXTURES, name), "utf-8");
}

function countMatches(text: string, pattern: RegExp): number {
  return (text.match(pattern) ?? []).length;
}

const META = "# schema_version=1\n# seed=0\n# scenario={}\n";

describe("artifact loading", () => {
  it("parses metadata and rows from real artifacts", () => {
    const doc = parseArtifactCsv(fixture("frontier.csv"));
    expect(doc.meta["schema_version"]).toBe("1");
    expect(doc.rows.length).toBe(4);
  });

  it("rejects unknown schema versions", () => {
    const text = "# schema_version=2\npolicy,estimator\n";
    expect(() => parseArtifactCsv(text)).toThrow(/schema_version 2/);
  });

  it("loads run summaries and rejects unknown versions", () => {
    const summary = parseRunSummary(fixture("summary.json"));
    expect(summary.schemaVersion).toBe(1);
    expect(summary.metrics["goodput"]).toBeTypeOf("number");
    expect(() => parseRunSummary('{"schema_version": 9}')).toThrow(/schema_version/);
  });
});

describe("frontier figure", () => {
  it("renders one mark per row with the four preset annotations", () => {
    const doc = parseArtifactCsv(fixture("frontier.csv"));
    const svg = plotFrontier(doc);
    expect(countMatches(svg, /data-row="/g)).toBe(4);
    for (const name of [
      "request heuristic",
      "token-level offline",
      "token-level naive online",
      "block-level amortized",
    ]) {
      expect(svg).toContain(`data-annotation="${name}"`);
    }
  });

  it("renders empty axes with a warning on an empty CSV", () => {
    const svg = plotFrontier(parseArtifactCsv(META + "policy,estimator,block_size,tau,G,R,O_mean,O_ci95,seeds\n"));
    expect(svg).toContain("no data rows");
    expect(svg).toContain("<svg");
  });

  it("scales to a 100-cell sweep with a legend per policy", () => {
    const rows = [];
    for (let k = 0; k < 100; k++) {
      const policy = ["greedy", "recency"][k % 2];
      rows.push(`${policy},oracle,${1 + (k % 8)},1.0,${4 + k},${0.05 * (k + 1)},${k * 0.1},0.01,4`);
    }
    const csv =
      META + "policy,estimator,block_size,tau,G,R,O_mean,O_ci95,seeds\n" + rows.join("\n") + "\n";
    const svg = plotFrontier(parseArtifactCsv(csv));
    expect(countMatches(svg, /data-row="/g)).toBe(100);
    expect(svg).toContain('data-legend="greedy"');
    expect(svg).toContain('data-legend="recency"');
  });

  it("every rendered mark points back to a source row", () => {
    const doc = parseArtifactCsv(fixture("frontier.csv"));
    const svg = plotFrontier(doc);
    const refs = [...svg.matchAll(/data-row="(\d+)"/g)].map((m) => Number(m[1]));
    expect(refs.length).toBeGreaterThan(0);
    for (const ref of refs) {
      expect(ref).toBeGreaterThanOrEqual(0);
      expect(ref).toBeLessThan(doc.rows.length);
    }
  });

  it("is deterministic", () => {
    const doc = parseArtifactCsv(fixture("frontier.csv"));
    expect(plotFrontier(doc)).toBe(plotFrontier(doc));
  });
});

describe("regime map figure", () => {
  it("renders a labeled cell per grid point", () => {
    const doc = parseArtifactCsv(fixture("regime.csv"));
    const rows = regimeRows(doc);
    const cellCount = new Set(rows.map((r) => `${r.cv}|${r.pressure}`)).size;
    const svg = plotRegimeMap(doc);
    expect(countMatches(svg, /data-label="/g)).toBe(cellCount);
  });

  it("hatches missing cells", () => {
    const csv =
      META +
      "cv,pressure,policy,goodput_mean,goodput_ci,label\n" +
      "0.0,1.0,fine,0.3,0.01,coarse\n0.0,1.0,coarse,0.32,0.01,coarse\n" +
      "1.0,1.5,fine,0.4,0.01,fine\n1.0,1.5,coarse,0.3,0.01,fine\n";
    const svg = plotRegimeMap(parseArtifactCsv(csv));
    // the 2x2 grid has two absent combinations
    expect(countMatches(svg, /data-missing="/g)).toBe(2);
    expect(svg).toContain('url(#hatch)');
  });

  it("overlays epsilon_sys at the smallest fine-winning CV per pressure row", () => {
    const doc = parseArtifactCsv(fixture("regime.csv"));
    const rows = regimeRows(doc);
    const svg = plotRegimeMap(doc);
    const pressures = [...new Set(rows.map((r) => r.pressure))];
    for (const pressure of pressures) {
      const fineCvs = rows
        .filter((r) => r.pressure === pressure && r.label === "fine")
        .map((r) => r.cv);
      if (fineCvs.length > 0) {
        const epsilon = Math.min(...fineCvs);
        expect(svg).toContain(`data-epsilon-sys="${pressure}:${epsilon}"`);
      }
    }
  });
});

describe("bias profile figure", () => {
  it("renders all-zero bars for the oracle row", () => {
    const doc = parseArtifactCsv(fixture("bias.csv"));
    const svg = plotBiasProfile(doc);
    const oracleBars = [...svg.matchAll(/data-proxy="oracle"[^/]*data-bias="([^"]+)"/g)];
    // attribute order: data-bias precedes data-proxy in rect attrs; match either way
    const bars = [...svg.matchAll(/<rect [^>]*data-proxy="oracle"[^>]*\/>/g)].map((m) => m[0]);
    expect(bars.length).toBeGreaterThan(0);
    for (const bar of bars) {
      const bias = Number(/data-bias="([^"]+)"/.exec(bar)![1]);
      expect(bias).toBe(0);
    }
    expect(oracleBars.length + bars.length).toBeGreaterThan(0);
  });

  it("shows the planted attention bias directions", () => {
    const doc = parseArtifactCsv(fixture("bias.csv"));
    const svg = plotBiasProfile(doc);
    const bars = [...svg.matchAll(/<rect [^>]*data-proxy="attention_surrogate"[^>]*\/>/g)];
    const byClass: Record<string, number> = {};
    for (const bar of bars) {
      const cls = /data-class="([^"]+)"/.exec(bar[0])![1];
      byClass[cls] = Number(/data-bias="([^"]+)"/.exec(bar[0])![1]);
    }
    expect(byClass["retrieval"]).toBeGreaterThan(0); // fillers overvalued
    expect(byClass["input"]).toBeLessThan(0); // instructions undervalued
  });

  it("positive-is-overvalued convention is stated on the figure", () => {
    const svg = plotBiasProfile(parseArtifactCsv(fixture("bias.csv")));
    expect(svg).toContain("positive = overvalued");
  });

  it("every bar value equals its source row bias", () => {
    const doc = parseArtifactCsv(fixture("bias.csv"));
    const rows = biasRows(doc);
    const svg = plotBiasProfile(doc);
    const bars = [...svg.matchAll(/<rect [^>]*data-row="(\d+)"[^>]*\/>/g)];
    expect(bars.length).toBe(rows.length);
    for (const bar of bars) {
      const idx = Number(bar[1]);
      const bias = Number(/data-bias="([^"]+)"/.exec(bar[0])![1]);
      expect(Math.abs(bias - rows[idx].bias)).toBeLessThan(1e-5);
    }
  });
});

describe("acceptance criterion 12", () => {
  it("renders non-empty figure files from the sweep, regime, and bias artifacts", () => {
    const out = mkdtempSync(join(tmpdir(), "tokenlab-figs-"));
    const targets = [
      renderFile("frontier", join(FIXTURES, "frontier.csv"), join(out, "frontier.svg")),
      renderFile("regime", join(FIXTURES, "regime.csv"), join(out, "regime.svg")),
      renderFile("bias", join(FIXTURES, "bias.csv"), join(out, "bias.svg")),
    ];
    for (const target of targets) {
      expect(statSync(target).size).toBeGreaterThan(500);
      const svg = readFileSync(target, "utf-8");
      expect(svg.startsWith("<svg")).toBe(true);
      expect(svg).toContain("data-row=");
    }
    console.log(`ACCEPTANCE 12 PASS: figures rendered at ${out}`);
  });
});
