/**
 * Reader for the spdemc report CSVs: leading `# key: value` comment lines
 * (the generated-at timestamp lives there), then a header row and data
 * rows with 17-significant-digit floats.
 */
import Papa from "papaparse";

export interface ReportTable {
  meta: Record<string, string>;
  columns: string[];
  rows: Record<string, number | string>[];
}

export class SchemaError extends Error {}

export function parseReport(text: string): ReportTable {
  const meta: Record<string, string> = {};
  const lines = text.split(/\r?\n/);
  let body = 0;
  for (const line of lines) {
    if (!line.startsWith("#")) break;
    body += 1;
    const m = line.match(/^#\s*([^:]+):\s*(.*)$/);
    if (m) meta[m[1].trim()] = m[2].trim();
  }
  const csv = lines.slice(body).join("\n");
  const parsed = Papa.parse<Record<string, string>>(csv.trim(), {
    header: true,
    dynamicTyping: true,
    skipEmptyLines: true,
  });
  if (parsed.errors.length > 0) {
    throw new SchemaError(`CSV parse error: ${parsed.errors[0].message}`);
  }
  const columns = parsed.meta.fields ?? [];
  const rows = parsed.data as Record<string, number | string>[];
  if (rows.length === 0) {
    throw new SchemaError("no data rows");
  }
  return { meta, columns, rows };
}

export function requireColumns(table: ReportTable, needed: string[]): void {
  for (const col of needed) {
    if (!table.columns.includes(col)) {
      throw new SchemaError(`missing column: ${col}`);
    }
  }
}

export function numbers(table: ReportTable, col: string): number[] {
  return table.rows.map((r) => {
    const v = r[col];
    if (typeof v !== "number" || !Number.isFinite(v)) {
      throw new SchemaError(`column ${col} holds a non-numeric value: ${v}`);
    }
    return v;
  });
}
