import { describe, expect, it } from "vitest";

import { SchemaError, numbers, parseReport } from "../src/csv.js";
import { leastSquares } from "../src/fit.js";
import {
  exitprobDecay,
  localizationDecay,
  render,
  validationBand,
} from "../src/figures.js";

const VALIDATION_CSV = `# generated-at: 2026-01-01T00:00:00+00:00
# kind: validation_band
# samples: 100
scenario,seed,t,x,m_hat,v_hat,stderr,u_fd,abs_err,inversion_failures
full1d,0,0.25,0.25,100,0.31,0.004,0.312,0.002,0
full1d,0,0.25,0.5,100,0.44,0.004,0.443,0.003,0
full1d,0,0.25,0.75,100,0.28,0.004,0.279,0.001,0
full1d,1,0.25,0.5,100,0.5,0.004,0.51,0.01,0
`;

const LOCALIZATION_CSV = `# generated-at: 2026-01-01T00:00:00+00:00
# kind: localization_decay
# fit_slope: -2.2
scenario,R,R_pow_2eps,eval_radius,e_mean,e_stderr,log_e_mean
loc,1.5,2.25,1.125,0.006,0.0004,-5.11
loc,2,4,1.5,0.0001,1e-05,-9.2
loc,2.5,6.25,1.875,6.6e-07,5e-08,-14.2
loc,3,9,2.25,1.3e-09,2e-10,-20.5
`;

const EXITPROB_CSV = `# generated-at: 2026-01-01T00:00:00+00:00
# kind: exitprob_decay
scenario,R,R_pow_2eps,p_hat,stderr,n_samples,rule_of_three_bound
exit,1.5,2.25,0.2,0.004,10000,0.0003
exit,2,4,0.17,0.004,10000,0.0003
exit,2.5,6.25,0.025,0.0016,10000,0.0003
exit,3,9,0.02,0.0014,10000,0.0003
`;

const PORTRAIT_CSV = `# kind: grid_solution
t,x0,value
0,0,0
0,0.5,1
0,1,0
0.25,0,0
0.25,0.5,0.5
0.25,1,0
`;

describe("csv parsing", () => {
  it("separates comments, header, and typed rows", () => {
    const table = parseReport(VALIDATION_CSV);
    expect(table.meta["kind"]).toBe("validation_band");
    expect(table.meta["samples"]).toBe("100");
    expect(table.columns).toContain("v_hat");
    expect(numbers(table, "v_hat")[0]).toBeCloseTo(0.31);
  });

  it("rejects empty inputs", () => {
    expect(() => parseReport("# kind: x\na,b\n")).toThrow(/no data rows/);
  });

  it("names missing columns", () => {
    const table = parseReport(LOCALIZATION_CSV);
    expect(() => validationBand(table)).toThrow(/missing column: seed/);
  });
});

describe("least squares", () => {
  it("recovers an exact line", () => {
    const { slope, intercept } = leastSquares([1, 2, 3], [5, 7, 9]);
    expect(slope).toBeCloseTo(2, 12);
    expect(intercept).toBeCloseTo(3, 12);
  });
});

describe("figures", () => {
  it("renders the validation band for the first seed only", () => {
    const svg = render("validation_band", VALIDATION_CSV);
    expect(svg).toContain("<svg");
    expect(svg).toContain("FD reference");
    expect(svg).toContain("polygon"); // the stderr band
  });

  it("renders localization decay with a negative annotated slope", () => {
    const svg = render("localization_decay", LOCALIZATION_CSV);
    const m = svg.match(/fitted slope = (-?\d+\.\d+)/);
    expect(m).not.toBeNull();
    expect(Number(m![1])).toBeLessThan(0);
  });

  it("renders exit-probability decay with the rule-of-three floor", () => {
    const svg = render("exitprob_decay", EXITPROB_CSV);
    expect(svg).toContain("fitted slope = ");
    expect(svg).toContain("Flow exit-probability decay");
  });

  it("renders a flow portrait with one curve per time", () => {
    const svg = render("flow_portrait", PORTRAIT_CSV);
    expect((svg.match(/<polyline/g) ?? []).length).toBeGreaterThanOrEqual(2);
    expect(svg).toContain("t = 0.25");
  });

  it("is byte-identical across repeated renders", () => {
    const a = localizationDecay(parseReport(LOCALIZATION_CSV));
    const b = localizationDecay(parseReport(LOCALIZATION_CSV));
    expect(a).toBe(b);
    const c = exitprobDecay(parseReport(EXITPROB_CSV));
    const d = exitprobDecay(parseReport(EXITPROB_CSV));
    expect(c).toBe(d);
  });

  it("rejects schema mismatches with the column name", () => {
    expect(() => render("exitprob_decay", LOCALIZATION_CSV)).toThrow(SchemaError);
    expect(() => render("exitprob_decay", LOCALIZATION_CSV)).toThrow(/p_hat/);
  });
});
