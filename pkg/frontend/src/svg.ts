/**
 * Minimal deterministic SVG scene builder: fixed canvas, linear scales,
 * axes with tick labels, polylines, bands, points, and text. Numbers are
 * formatted with a fixed precision so identical inputs yield byte-identical
 * files.
 */

export interface Extent {
  min: number;
  max: number;
}

export function extent(values: number[], padFrac = 0.08): Extent {
  let min = Infinity;
  let max = -Infinity;
  for (const v of values) {
    if (v < min) min = v;
    if (v > max) max = v;
  }
  if (!(min < max)) {
    max = min + 1;
    min = min - 1;
  }
  const pad = (max - min) * padFrac;
  return { min: min - pad, max: max + pad };
}

export function fmt(v: number): string {
  if (!Number.isFinite(v)) return "0";
  return v.toFixed(3).replace(/-0\.000/, "0.000");
}

export function fmtTick(v: number): string {
  const a = Math.abs(v);
  if (a !== 0 && (a >= 1e4 || a < 1e-3)) return v.toExponential(1);
  return Number(v.toPrecision(4)).toString();
}

export class Scene {
  readonly width: number;
  readonly height: number;
  readonly margin = { left: 64, right: 16, top: 28, bottom: 44 };
  private parts: string[] = [];
  private xext: Extent = { min: 0, max: 1 };
  private yext: Extent = { min: 0, max: 1 };

  constructor(width = 640, height = 420) {
    this.width = width;
    this.height = height;
  }

  setExtents(x: Extent, y: Extent): void {
    this.xext = x;
    this.yext = y;
  }

  sx(v: number): number {
    const { left, right } = this.margin;
    const w = this.width - left - right;
    return left + ((v - this.xext.min) / (this.xext.max - this.xext.min)) * w;
  }

  sy(v: number): number {
    const { top, bottom } = this.margin;
    const h = this.height - top - bottom;
    return top + h - ((v - this.yext.min) / (this.yext.max - this.yext.min)) * h;
  }

  private ticks(ext: Extent, n = 5): number[] {
    const out: number[] = [];
    for (let i = 0; i <= n; i++) {
      out.push(ext.min + ((ext.max - ext.min) * i) / n);
    }
    return out;
  }

  axes(xlabel: string, ylabel: string, title: string): void {
    const { left, top } = this.margin;
    const x0 = left;
    const x1 = this.width - this.margin.right;
    const y0 = this.height - this.margin.bottom;
    const y1 = top;
    this.parts.push(
      `<rect x="${x0}" y="${y1}" width="${x1 - x0}" height="${y0 - y1}" fill="none" stroke="#444" stroke-width="1"/>`,
    );
    for (const t of this.ticks(this.xext)) {
      const px = fmt(this.sx(t));
      this.parts.push(
        `<line x1="${px}" y1="${y0}" x2="${px}" y2="${y0 + 5}" stroke="#444"/>`,
        `<text x="${px}" y="${y0 + 18}" font-size="11" text-anchor="middle" fill="#222">${fmtTick(t)}</text>`,
      );
    }
    for (const t of this.ticks(this.yext)) {
      const py = fmt(this.sy(t));
      this.parts.push(
        `<line x1="${x0 - 5}" y1="${py}" x2="${x0}" y2="${py}" stroke="#444"/>`,
        `<text x="${x0 - 8}" y="${py}" font-size="11" text-anchor="end" dominant-baseline="middle" fill="#222">${fmtTick(t)}</text>`,
      );
    }
    const midx = fmt((x0 + x1) / 2);
    this.parts.push(
      `<text x="${midx}" y="${this.height - 8}" font-size="12" text-anchor="middle" fill="#222">${escapeXml(xlabel)}</text>`,
      `<text x="16" y="${fmt((y0 + y1) / 2)}" font-size="12" text-anchor="middle" fill="#222" transform="rotate(-90 16 ${fmt((y0 + y1) / 2)})">${escapeXml(ylabel)}</text>`,
      `<text x="${midx}" y="18" font-size="13" text-anchor="middle" fill="#000">${escapeXml(title)}</text>`,
    );
  }

  polyline(xs: number[], ys: number[], color: string, width = 1.6, dash = ""): void {
    const pts = xs.map((x, i) => `${fmt(this.sx(x))},${fmt(this.sy(ys[i]))}`).join(" ");
    const dashAttr = dash ? ` stroke-dasharray="${dash}"` : "";
    this.parts.push(
      `<polyline points="${pts}" fill="none" stroke="${color}" stroke-width="${width}"${dashAttr}/>`,
    );
  }

  band(xs: number[], lo: number[], hi: number[], color: string, opacity = 0.25): void {
    const fwd = xs.map((x, i) => `${fmt(this.sx(x))},${fmt(this.sy(hi[i]))}`);
    const back = xs
      .map((x, i) => `${fmt(this.sx(x))},${fmt(this.sy(lo[i]))}`)
      .reverse();
    this.parts.push(
      `<polygon points="${fwd.concat(back).join(" ")}" fill="${color}" opacity="${opacity}" stroke="none"/>`,
    );
  }

  points(xs: number[], ys: number[], color: string, r = 3): void {
    for (let i = 0; i < xs.length; i++) {
      this.parts.push(
        `<circle cx="${fmt(this.sx(xs[i]))}" cy="${fmt(this.sy(ys[i]))}" r="${r}" fill="${color}"/>`,
      );
    }
  }

  errorBars(xs: number[], los: number[], his: number[], color: string): void {
    for (let i = 0; i < xs.length; i++) {
      const px = fmt(this.sx(xs[i]));
      this.parts.push(
        `<line x1="${px}" y1="${fmt(this.sy(los[i]))}" x2="${px}" y2="${fmt(this.sy(his[i]))}" stroke="${color}" stroke-width="1.2"/>`,
      );
    }
  }

  note(x: number, y: number, text: string, color = "#000"): void {
    this.parts.push(
      `<text x="${fmt(this.sx(x))}" y="${fmt(this.sy(y))}" font-size="12" fill="${color}">${escapeXml(text)}</text>`,
    );
  }

  legend(entries: { label: string; color: string }[]): void {
    const x = this.margin.left + 10;
    let y = this.margin.top + 14;
    for (const e of entries) {
      this.parts.push(
        `<line x1="${x}" y1="${y - 4}" x2="${x + 22}" y2="${y - 4}" stroke="${e.color}" stroke-width="2"/>`,
        `<text x="${x + 28}" y="${y}" font-size="11" fill="#222">${escapeXml(e.label)}</text>`,
      );
      y += 16;
    }
  }

  render(): string {
    return [
      `<svg xmlns="http://www.w3.org/2000/svg" width="${this.width}" height="${this.height}" viewBox="0 0 ${this.width} ${this.height}">`,
      `<rect width="${this.width}" height="${this.height}" fill="#ffffff"/>`,
      ...this.parts,
      "</svg>",
      "",
    ].join("\n");
  }
}

function escapeXml(s: string): string {
  return s
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}
