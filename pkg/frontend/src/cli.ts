#!/usr/bin/env node
/**
 * Render spdemc result CSVs as SVG figures.
 *
 *   spdemc-render --spec figure.json
 *   spdemc-render --kind localization_decay --input out/localization.csv \
 *                 --output out/localization.svg
 */
import { mkdirSync, readFileSync, writeFileSync } from "node:fs";
import { dirname } from "node:path";
import yargs from "yargs";
import { hideBin } from "yargs/helpers";

import { render } from "./figures.js";
import { FigureSpecSchema } from "./spec.js";

export function renderSpec(spec: unknown): string {
  const parsed = FigureSpecSchema.parse(spec);
  const csv = readFileSync(parsed.input, "utf-8");
  const svg = render(parsed.kind, csv);
  mkdirSync(dirname(parsed.output), { recursive: true });
  writeFileSync(parsed.output, svg, "utf-8");
  return parsed.output;
}

export async function main(argv: string[]): Promise<number> {
  const args = await yargs(argv)
    .option("spec", { type: "string", describe: "figure spec JSON file" })
    .option("kind", { type: "string", describe: "figure kind" })
    .option("input", { type: "string", describe: "input CSV path" })
    .option("output", { type: "string", describe: "output SVG path" })
    .help()
    .parse();
  try {
    const spec = args.spec
      ? JSON.parse(readFileSync(args.spec, "utf-8"))
      : { kind: args.kind, input: args.input, output: args.output };
    const out = renderSpec(spec);
    console.log(`wrote ${out}`);
    return 0;
  } catch (err) {
    console.error(`error: ${(err as Error).message}`);
    return 1;
  }
}

const isMain = process.argv[1]?.endsWith("cli.js")
  || process.argv[1]?.endsWith("cli.ts");
if (isMain) {
  main(hideBin(process.argv)).then((code) => process.exit(code));
}
