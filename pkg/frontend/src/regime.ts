/**
 * Break-even regime map: CV x pressure heatmap labeled fine/coarse/tie, with
 * hatched cells for missing grid points and the measured epsilon_sys frontier
 * (smallest fine-winning CV per pressure row) overlaid. All values come from
 * regime CSV rows; nothing is recomputed.
 */

import { CsvDocument, RegimeRow, regimeRows } from "./artifacts.js";
import { Svg, fmt, hatchDefs, linearScale } from "./svg.js";

const WIDTH = 600;
const HEIGHT = 430;
const MARGIN = { left: 80, right: 130, top: 46, bottom: 60 };

const LABEL_FILL: Record<string, string> = {
  fine: "#4caf7d",
  coarse: "#d2614e",
  tie: "#c9c9c9",
};

interface Cell {
  cv: number;
  pressure: number;
  label: string;
  sourceRows: number[];
}

function collectCells(rows: RegimeRow[]): Map<string, Cell> {
  const cells = new Map<string, Cell>();
  for (const row of rows) {
    const key = `${row.cv}|${row.pressure}`;
    const cell = cells.get(key);
    if (cell) {
      cell.sourceRows.push(row.sourceRow);
    } else {
      cells.set(key, {
        cv: row.cv,
        pressure: row.pressure,
        label: row.label,
        sourceRows: [row.sourceRow],
      });
    }
  }
  return cells;
}

export function plotRegimeMap(doc: CsvDocument): string {
  const rows = regimeRows(doc);
  const svg = new Svg(WIDTH, HEIGHT);
  svg.raw(hatchDefs());
  svg.text(MARGIN.left, 20, "Fine-grained vs coarse allocation regimes", {
    "font-size": 14,
    "font-weight": "bold",
  });
  if (rows.length === 0) {
    svg.text(WIDTH / 2, HEIGHT / 2, "no data rows", { "text-anchor": "middle", fill: "#a33" });
    return svg.toString();
  }
  const cells = collectCells(rows);
  const cvs = [...new Set(rows.map((r) => r.cv))].sort((a, b) => a - b);
  const pressures = [...new Set(rows.map((r) => r.pressure))].sort((a, b) => a - b);
  const x = linearScale([0, cvs.length], [MARGIN.left, WIDTH - MARGIN.right]);
  const y = linearScale([0, pressures.length], [HEIGHT - MARGIN.bottom, MARGIN.top]);
  const cellW = x(1) - x(0);
  const cellH = y(0) - y(1);

  for (let i = 0; i < cvs.length; i++) {
    for (let j = 0; j < pressures.length; j++) {
      const key = `${cvs[i]}|${pressures[j]}`;
      const cell = cells.get(key);
      const px = x(i);
      const py = y(j + 1);
      if (!cell) {
        svg.rect(px, py, cellW, cellH, {
          fill: "url(#hatch)",
          stroke: "#777",
          "data-missing": key,
        });
        continue;
      }
      svg.rect(px, py, cellW, cellH, {
        fill: LABEL_FILL[cell.label] ?? "#eee",
        stroke: "#555",
        "data-row": cell.sourceRows.join(";"),
        "data-label": cell.label,
      });
      svg.text(px + cellW / 2, py + cellH / 2 + 4, cell.label, {
        "text-anchor": "middle",
        fill: "#1c1c1c",
      });
    }
  }
  // epsilon_sys frontier: smallest CV labeled fine within each pressure row
  for (let j = 0; j < pressures.length; j++) {
    const fineCvs = cvs.filter((cv) => cells.get(`${cv}|${pressures[j]}`)?.label === "fine");
    if (fineCvs.length === 0) continue;
    const i = cvs.indexOf(Math.min(...fineCvs));
    svg.line(x(i), y(j), x(i), y(j + 1), { stroke: "#13324b", "stroke-width": 3 });
    svg.circle(x(i), y(j + 1) + cellH / 2, 4, {
      fill: "#13324b",
      "data-epsilon-sys": `${pressures[j]}:${cvs[i]}`,
    });
  }
  for (let i = 0; i < cvs.length; i++) {
    svg.text(x(i) + cellW / 2, HEIGHT - MARGIN.bottom + 16, fmt(cvs[i]), {
      "text-anchor": "middle",
    });
  }
  for (let j = 0; j < pressures.length; j++) {
    svg.text(MARGIN.left - 8, y(j + 1) + cellH / 2 + 4, fmt(pressures[j]), {
      "text-anchor": "end",
    });
  }
  svg.text((MARGIN.left + WIDTH - MARGIN.right) / 2, HEIGHT - 16, "token-value heterogeneity (CV)", {
    "text-anchor": "middle",
  });
  svg.text(20, (MARGIN.top + HEIGHT - MARGIN.bottom) / 2, "system pressure", {
    transform: `rotate(-90 20 ${(MARGIN.top + HEIGHT - MARGIN.bottom) / 2})`,
    "text-anchor": "middle",
  });
  let ly = MARGIN.top;
  const lx = WIDTH - MARGIN.right + 16;
  for (const [label, fill] of Object.entries(LABEL_FILL)) {
    svg.rect(lx, ly, 12, 12, { fill, stroke: "#555" });
    svg.text(lx + 18, ly + 10, label);
    ly += 20;
  }
  svg.rect(lx, ly, 12, 12, { fill: "url(#hatch)", stroke: "#777" });
  svg.text(lx + 18, ly + 10, "missing");
  svg.text(lx, ly + 34, "| epsilon_sys", { fill: "#13324b" });
  return svg.toString();
}
