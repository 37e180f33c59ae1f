/**
 * Frontier figure: granularity G versus real-time ratio R on log axes, points
 * colored by mean regret O. The four named design-regime cells are annotated
 * when their (policy, estimator, block size) signature appears.
 */

import { CsvDocument, FrontierRow, frontierRows } from "./artifacts.js";
import { Svg, fmt, linearScale, log10Scale, ramp } from "./svg.js";

const WIDTH = 640;
const HEIGHT = 440;
const MARGIN = { left: 70, right: 160, top: 40, bottom: 55 };

const PRESET_SIGNATURES: Record<string, string> = {
  "greedy|recency|16": "request heuristic",
  "greedy|shapley_exact|1": "token-level offline",
  "lookahead|oracle|1": "token-level naive online",
  "greedy|static_predictor|4": "block-level amortized",
};

const POLICY_MARKERS = ["circle", "square", "diamond", "triangle", "cross"] as const;

function presetName(row: FrontierRow): string | null {
  return PRESET_SIGNATURES[`${row.policy}|${row.estimator}|${row.blockSize}`] ?? null;
}

export function plotFrontier(doc: CsvDocument): string {
  const rows = frontierRows(doc);
  const svg = new Svg(WIDTH, HEIGHT);
  svg.text(MARGIN.left, 20, "Granularity vs real-time ratio, colored by regret", {
    "font-size": 14,
    "font-weight": "bold",
  });
  const plotW: [number, number] = [MARGIN.left, WIDTH - MARGIN.right];
  const plotH: [number, number] = [HEIGHT - MARGIN.bottom, MARGIN.top];
  svg.line(plotW[0], plotH[0], plotW[1], plotH[0]);
  svg.line(plotW[0], plotH[0], plotW[0], plotH[1]);
  svg.text((plotW[0] + plotW[1]) / 2, HEIGHT - 14, "decision units G (log)", {
    "text-anchor": "middle",
  });
  svg.text(16, (plotH[0] + plotH[1]) / 2, "R = sensing+alloc / tau (log)", {
    transform: `rotate(-90 16 ${(plotH[0] + plotH[1]) / 2})`,
    "text-anchor": "middle",
  });
  if (rows.length === 0) {
    svg.text((plotW[0] + plotW[1]) / 2, (plotH[0] + plotH[1]) / 2, "no data rows", {
      "text-anchor": "middle",
      fill: "#a33",
    });
    return svg.toString();
  }
  const gs = rows.map((r) => r.granularity);
  const rs = rows.map((r) => Math.max(r.realtimeRatio, 1e-3));
  const x = log10Scale([Math.min(...gs), Math.max(...gs)], plotW);
  const y = log10Scale([Math.min(...rs), Math.max(...rs) * 1.2], plotH);
  const regrets = rows.map((r) => r.regretMean).filter((v): v is number => v !== null);
  const oLo = regrets.length ? Math.min(...regrets) : 0;
  const oHi = regrets.length ? Math.max(...regrets) : 1;
  const oScale = linearScale([oLo, oHi === oLo ? oLo + 1 : oHi], [0, 1]);

  // R = 1 reference: the real-time feasibility line
  const yOne = y(1.0);
  svg.line(plotW[0], yOne, plotW[1], yOne, { stroke: "#888", "stroke-dasharray": "4 3" });
  svg.text(plotW[1] + 4, yOne + 4, "R = 1", { fill: "#888" });

  const policies = [...new Set(rows.map((r) => r.policy))].sort();
  for (const row of rows) {
    const px = x(row.granularity);
    const py = y(Math.max(row.realtimeRatio, 1e-3));
    const fill = row.regretMean === null ? "#bbb" : ramp(oScale(row.regretMean));
    const marker = POLICY_MARKERS[policies.indexOf(row.policy) % POLICY_MARKERS.length];
    const attrs = {
      fill,
      stroke: "#333",
      "data-row": String(row.sourceRow),
      "data-g": fmt(row.granularity),
      "data-r": fmt(row.realtimeRatio),
    };
    if (marker === "square") {
      svg.rect(px - 5, py - 5, 10, 10, attrs);
    } else if (marker === "diamond") {
      svg.rect(px - 5, py - 5, 10, 10, { ...attrs, transform: `rotate(45 ${fmt(px)} ${fmt(py)})` });
    } else {
      svg.circle(px, py, 6, attrs);
    }
    const preset = presetName(row);
    if (preset !== null) {
      svg.text(px + 8, py - 8, preset, { fill: "#333", "data-annotation": preset });
    }
  }
  // legend: one entry per policy plus the regret color ramp
  let ly = MARGIN.top;
  const lx = WIDTH - MARGIN.right + 18;
  svg.text(lx, ly - 8, "policy", { "font-weight": "bold" });
  for (const policy of policies) {
    const marker = POLICY_MARKERS[policies.indexOf(policy) % POLICY_MARKERS.length];
    if (marker === "square" || marker === "diamond") {
      svg.rect(lx, ly, 9, 9, { fill: "#777" });
    } else {
      svg.circle(lx + 4, ly + 4, 5, { fill: "#777" });
    }
    svg.text(lx + 16, ly + 9, policy, { "data-legend": policy });
    ly += 18;
  }
  ly += 10;
  svg.text(lx, ly, "regret O", { "font-weight": "bold" });
  for (let k = 0; k <= 10; k++) {
    svg.rect(lx + k * 7, ly + 6, 7, 10, { fill: ramp(k / 10), stroke: "none" });
  }
  svg.text(lx, ly + 30, fmt(oLo));
  svg.text(lx + 60, ly + 30, fmt(oHi));
  return svg.toString();
}
