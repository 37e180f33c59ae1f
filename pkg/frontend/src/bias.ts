/**
 * Proxy bias profile: grouped bars of per-class signed rank bias, one group
 * per proxy family. Positive bars mean the proxy systematically overvalues
 * that token class; negative bars mean undervaluation.
 */

import { BiasRow, CsvDocument, biasRows } from "./artifacts.js";
import { Svg, fmt, linearScale } from "./svg.js";

const WIDTH = 640;
const HEIGHT = 400;
const MARGIN = { left: 70, right: 140, top: 46, bottom: 70 };

const CLASS_COLORS: Record<string, string> = {
  input: "#3d6fb4",
  output: "#6aa84f",
  reasoning: "#9a5fb0",
  retrieval: "#e09c3b",
  tool: "#50a9a4",
  speculative: "#bb5566",
};

export function plotBiasProfile(doc: CsvDocument): string {
  const rows = biasRows(doc);
  const svg = new Svg(WIDTH, HEIGHT);
  svg.text(MARGIN.left, 20, "Per-class proxy bias (positive = overvalued)", {
    "font-size": 14,
    "font-weight": "bold",
  });
  if (rows.length === 0) {
    svg.text(WIDTH / 2, HEIGHT / 2, "no data rows", { "text-anchor": "middle", fill: "#a33" });
    return svg.toString();
  }
  const proxies = [...new Set(rows.map((r) => r.proxy))];
  const classes = [...new Set(rows.map((r) => r.tokenClass))].sort();
  const maxAbs = Math.max(0.05, ...rows.map((r) => Math.abs(r.bias)));
  const x = linearScale([0, proxies.length], [MARGIN.left, WIDTH - MARGIN.right]);
  const y = linearScale([-maxAbs, maxAbs], [HEIGHT - MARGIN.bottom, MARGIN.top]);
  const zero = y(0);
  svg.line(MARGIN.left, zero, WIDTH - MARGIN.right, zero, { stroke: "#333" });
  const groupWidth = x(1) - x(0);
  const barWidth = Math.max(4, (groupWidth - 14) / Math.max(1, classes.length));

  for (const row of rows) {
    const gi = proxies.indexOf(row.proxy);
    const ci = classes.indexOf(row.tokenClass);
    const bx = x(gi) + 7 + ci * barWidth;
    const by = y(Math.max(0, row.bias));
    const height = Math.abs(y(row.bias) - zero);
    svg.rect(bx, by, barWidth - 2, Math.max(height, 0.5), {
      fill: CLASS_COLORS[row.tokenClass] ?? "#888",
      stroke: "#333",
      "data-row": String(row.sourceRow),
      "data-bias": fmt(row.bias),
      "data-proxy": row.proxy,
      "data-class": row.tokenClass,
    });
  }
  for (const proxy of proxies) {
    const gi = proxies.indexOf(proxy);
    svg.text(x(gi) + groupWidth / 2, HEIGHT - MARGIN.bottom + 18, proxy, {
      "text-anchor": "middle",
      transform: `rotate(-18 ${fmt(x(gi) + groupWidth / 2)} ${HEIGHT - MARGIN.bottom + 18})`,
    });
  }
  svg.text(MARGIN.left - 8, y(maxAbs) + 4, fmt(maxAbs), { "text-anchor": "end" });
  svg.text(MARGIN.left - 8, y(-maxAbs) + 4, fmt(-maxAbs), { "text-anchor": "end" });
  svg.text(MARGIN.left - 8, zero + 4, "0", { "text-anchor": "end" });
  svg.text(16, (MARGIN.top + HEIGHT - MARGIN.bottom) / 2, "rank-scale bias", {
    transform: `rotate(-90 16 ${(MARGIN.top + HEIGHT - MARGIN.bottom) / 2})`,
    "text-anchor": "middle",
  });
  let ly = MARGIN.top;
  const lx = WIDTH - MARGIN.right + 16;
  svg.text(lx, ly - 8, "token class", { "font-weight": "bold" });
  for (const cls of classes) {
    svg.rect(lx, ly, 12, 12, { fill: CLASS_COLORS[cls] ?? "#888" });
    svg.text(lx + 18, ly + 10, cls);
    ly += 18;
  }
  return svg.toString();
}
