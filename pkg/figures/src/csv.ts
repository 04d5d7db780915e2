/** Minimal CSV reader for the simulator's RFC-4180-style outputs
 * (header row, '.' decimals, no quoted fields). */

export class MissingColumnError extends Error {
  constructor(public readonly column: string, public readonly kind: string) {
    super(`column '${column}' required for ${kind} is missing from the CSV`);
    this.name = "MissingColumnError";
  }
}

export interface Table {
  columns: string[];
  rows: string[][];
}

export function parseCsv(text: string): Table {
  const lines = text
    .split(/\r?\n/)
    .map((l) => l.trim())
    .filter((l) => l.length > 0);
  if (lines.length === 0) {
    throw new Error("CSV is empty");
  }
  const columns = lines[0].split(",");
  const rows = lines.slice(1).map((l) => l.split(","));
  return { columns, rows };
}

export function numericColumn(table: Table, name: string, kind: string): number[] {
  const idx = table.columns.indexOf(name);
  if (idx < 0) {
    throw new MissingColumnError(name, kind);
  }
  return table.rows.map((r) => {
    const v = Number(r[idx]);
    if (Number.isNaN(v)) {
      throw new Error(`column '${name}' has a non-numeric value: ${r[idx]}`);
    }
    return v;
  });
}

export function requireColumns(table: Table, names: string[], kind: string): void {
  for (const name of names) {
    if (!table.columns.includes(name)) {
      throw new MissingColumnError(name, kind);
    }
  }
  if (table.rows.length === 0) {
    throw new Error(`CSV for ${kind} has a header but no data rows`);
  }
}
