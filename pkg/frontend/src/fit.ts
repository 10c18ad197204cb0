/** Ordinary least squares y = a x + b. */
export function leastSquares(xs: number[], ys: number[]): { slope: number; intercept: number } {
  const n = xs.length;
  if (n !== ys.length || n < 2) {
    throw new Error("need at least two matching points");
  }
  const mx = xs.reduce((s, v) => s + v, 0) / n;
  const my = ys.reduce((s, v) => s + v, 0) / n;
  let sxx = 0;
  let sxy = 0;
  for (let i = 0; i < n; i++) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
  }
  if (sxx === 0) throw new Error("degenerate abscissae");
  const slope = sxy / sxx;
  return { slope, intercept: my - slope * mx };
}
