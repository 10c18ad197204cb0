export { parseReport, requireColumns, numbers, SchemaError } from "./csv.js";
export { leastSquares } from "./fit.js";
export { render, validationBand, localizationDecay, exitprobDecay, flowPortrait } from "./figures.js";
export { FigureSpecSchema, type FigureSpec } from "./spec.js";
export { renderSpec } from "./cli.js";
