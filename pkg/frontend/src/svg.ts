/** Minimal deterministic SVG string builder: no DOM, stable number formatting. */

export function fmt(value: number): string {
  if (!Number.isFinite(value)) return "0";
  const rounded = Number(value.toPrecision(6));
  return String(rounded);
}

function esc(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

export type Attrs = Record<string, string | number>;

export class Svg {
  private parts: string[] = [];

  constructor(readonly width: number, readonly height: number) {}

  private open(tag: string, attrs: Attrs, selfClose: boolean, body?: string): void {
    const rendered = Object.entries(attrs)
      .map(([k, v]) => `${k}="${typeof v === "number" ? fmt(v) : esc(v)}"`)
      .join(" ");
    if (selfClose) {
      this.parts.push(`<${tag} ${rendered}/>`);
    } else {
      this.parts.push(`<${tag} ${rendered}>${body ?? ""}</${tag}>`);
    }
  }

  raw(markup: string): void {
    this.parts.push(markup);
  }

  rect(x: number, y: number, w: number, h: number, attrs: Attrs = {}): void {
    this.open("rect", { x, y, width: w, height: h, ...attrs }, true);
  }

  circle(cx: number, cy: number, r: number, attrs: Attrs = {}): void {
    this.open("circle", { cx, cy, r, ...attrs }, true);
  }

  line(x1: number, y1: number, x2: number, y2: number, attrs: Attrs = {}): void {
    this.open("line", { x1, y1, x2, y2, stroke: "#444", ...attrs }, true);
  }

  text(x: number, y: number, content: string, attrs: Attrs = {}): void {
    this.open(
      "text",
      { x, y, "font-family": "sans-serif", "font-size": 11, fill: "#222", ...attrs },
      false,
      esc(content),
    );
  }

  toString(): string {
    return (
      `<svg xmlns="http://www.w3.org/2000/svg" width="${this.width}" ` +
      `height="${this.height}" viewBox="0 0 ${this.width} ${this.height}">\n` +
      `<rect x="0" y="0" width="${this.width}" height="${this.height}" fill="#ffffff"/>\n` +
      this.parts.join("\n") +
      "\n</svg>\n"
    );
  }
}

export function linearScale(
  domain: [number, number],
  range: [number, number],
): (x: number) => number {
  const [d0, d1] = domain;
  const [r0, r1] = range;
  const span = d1 - d0 === 0 ? 1 : d1 - d0;
  return (x: number) => r0 + ((x - d0) / span) * (r1 - r0);
}

export function log10Scale(
  domain: [number, number],
  range: [number, number],
): (x: number) => number {
  const lo = Math.log10(Math.max(domain[0], 1e-9));
  const hi = Math.log10(Math.max(domain[1], 1e-9));
  const base = linearScale([lo, hi], range);
  return (x: number) => base(Math.log10(Math.max(x, 1e-9)));
}

/** Green (low) to red (high) ramp over [0, 1]. */
export function ramp(t: number): string {
  const clamped = Math.max(0, Math.min(1, t));
  const r = Math.round(40 + 200 * clamped);
  const g = Math.round(170 - 120 * clamped);
  const b = 60;
  return `rgb(${r},${g},${b})`;
}

export function hatchDefs(): string {
  return (
    `<defs><pattern id="hatch" width="6" height="6" patternUnits="userSpaceOnUse">` +
    `<path d="M0,6 L6,0" stroke="#999" stroke-width="1"/></pattern></defs>`
  );
}
