/**
 * The four figure renderers. Each consumes one of the documented report
 * CSVs and returns an SVG string; rendering is pure, so identical inputs
 * give byte-identical output.
 */
import { numbers, parseReport, requireColumns, ReportTable } from "./csv.js";
import { leastSquares } from "./fit.js";
import { extent, Scene } from "./svg.js";

export type FigureKind =
  | "validation_band"
  | "localization_decay"
  | "exitprob_decay"
  | "flow_portrait";

export function render(kind: FigureKind, csvText: string): string {
  const table = parseReport(csvText);
  switch (kind) {
    case "validation_band":
      return validationBand(table);
    case "localization_decay":
      return localizationDecay(table);
    case "exitprob_decay":
      return exitprobDecay(table);
    case "flow_portrait":
      return flowPortrait(table);
  }
}

/** v_hat +- 3 stderr band against the FD reference, per x, first seed. */
export function validationBand(table: ReportTable): string {
  requireColumns(table, ["seed", "x", "v_hat", "stderr", "u_fd"]);
  const seeds = numbers(table, "seed");
  const first = seeds[0];
  const keep = seeds.map((s) => s === first);
  const pick = (col: string) => numbers(table, col).filter((_, i) => keep[i]);
  const xs = pick("x");
  const v = pick("v_hat");
  const se = pick("stderr");
  const u = pick("u_fd");
  const order = xs.map((_, i) => i).sort((a, b) => xs[a] - xs[b]);
  const ox = order.map((i) => xs[i]);
  const ov = order.map((i) => v[i]);
  const ose = order.map((i) => se[i]);
  const ou = order.map((i) => u[i]);
  const lo = ov.map((m, i) => m - 3 * ose[i]);
  const hi = ov.map((m, i) => m + 3 * ose[i]);

  const scene = new Scene();
  scene.setExtents(extent(ox), extent([...lo, ...hi, ...ou]));
  scene.axes("x", "solution value", "Monte Carlo vs finite differences (seed 0)");
  scene.band(ox, lo, hi, "#4477aa");
  scene.polyline(ox, ov, "#4477aa");
  scene.polyline(ox, ou, "#cc3311", 1.6, "5,3");
  scene.legend([
    { label: "v_hat +- 3 stderr", color: "#4477aa" },
    { label: "FD reference", color: "#cc3311" },
  ]);
  return scene.render();
}

/** log e(R) against R^{2 eps} with the least-squares line and its slope. */
export function localizationDecay(table: ReportTable): string {
  requireColumns(table, ["R", "R_pow_2eps", "e_mean"]);
  const x = numbers(table, "R_pow_2eps");
  const e = numbers(table, "e_mean");
  const ys = e.map((v) => Math.log(Math.max(v, 1e-300)));
  const { slope, intercept } = leastSquares(x, ys);

  const scene = new Scene();
  scene.setExtents(extent(x), extent(ys));
  scene.axes("R^(2 eps)", "log e(R)", "Localization error decay");
  const fx = [Math.min(...x), Math.max(...x)];
  scene.polyline(fx, fx.map((v) => slope * v + intercept), "#cc3311", 1.4, "6,4");
  scene.points(x, ys, "#4477aa", 4);
  if (table.columns.includes("e_stderr")) {
    const se = numbers(table, "e_stderr");
    const lo = e.map((v, i) => Math.log(Math.max(v - se[i], 1e-300)));
    const hi = e.map((v, i) => Math.log(Math.max(v + se[i], 1e-300)));
    scene.errorBars(x, lo, hi, "#4477aa");
  }
  const xm = Math.min(...x) + 0.45 * (Math.max(...x) - Math.min(...x));
  const ym = Math.max(...ys) - 0.12 * (Math.max(...ys) - Math.min(...ys));
  scene.note(xm, ym, `fitted slope = ${slope.toFixed(4)}`, "#cc3311");
  return scene.render();
}

/** log p_hat(H_R) against R^{2 eps} with the rule-of-three floor. */
export function exitprobDecay(table: ReportTable): string {
  requireColumns(table, ["R", "R_pow_2eps", "p_hat", "stderr",
    "rule_of_three_bound"]);
  const x = numbers(table, "R_pow_2eps");
  const p = numbers(table, "p_hat");
  const bound = numbers(table, "rule_of_three_bound")[0];
  const floor = Math.max(bound / 3, 1e-12);
  const ys = p.map((v) => Math.log(Math.max(v, floor)));
  const { slope, intercept } = leastSquares(x, ys);

  const scene = new Scene();
  scene.setExtents(extent(x), extent([...ys, Math.log(bound)]));
  scene.axes("R^(2 eps)", "log p_hat(H_R)", "Flow exit-probability decay");
  const fx = [Math.min(...x), Math.max(...x)];
  scene.polyline(fx, fx.map((v) => slope * v + intercept), "#cc3311", 1.4, "6,4");
  scene.polyline(fx, fx.map(() => Math.log(bound)), "#999999", 1.0, "2,3");
  scene.points(x, ys, "#228833", 4);
  const xm = Math.min(...x) + 0.45 * (Math.max(...x) - Math.min(...x));
  const ym = Math.max(...ys) - 0.12 * (Math.max(...ys) - Math.min(...ys) || 1);
  scene.note(xm, ym, `fitted slope = ${slope.toFixed(4)}`, "#cc3311");
  return scene.render();
}

/** Solution profiles x -> value at a handful of times from a grid dump. */
export function flowPortrait(table: ReportTable): string {
  requireColumns(table, ["t", "x0", "value"]);
  const t = numbers(table, "t");
  const x = numbers(table, "x0");
  const v = numbers(table, "value");
  const times = [...new Set(t)].sort((a, b) => a - b);
  const chosen: number[] = [];
  const nCurves = Math.min(6, times.length);
  for (let i = 0; i < nCurves; i++) {
    chosen.push(times[Math.floor((i * (times.length - 1)) / Math.max(nCurves - 1, 1))]);
  }
  const palette = ["#4477aa", "#66ccee", "#228833", "#ccbb44", "#ee6677", "#aa3377"];

  const scene = new Scene();
  scene.setExtents(extent(x), extent(v));
  scene.axes("x", "value", "Solution portrait over time");
  const legend: { label: string; color: string }[] = [];
  chosen.forEach((tc, ci) => {
    const idx = t.map((tv, i) => i).filter((i) => t[i] === tc);
    idx.sort((a, b) => x[a] - x[b]);
    scene.polyline(idx.map((i) => x[i]), idx.map((i) => v[i]), palette[ci % palette.length]);
    legend.push({ label: `t = ${Number(tc.toPrecision(3))}`, color: palette[ci % palette.length] });
  });
  scene.legend(legend);
  return scene.render();
}
