#!/usr/bin/env node
/** CLI: render one reproduction figure from a routelab CSV.
 *
 *   render --kind fig3|fig5|fig7|fig8 --in results.csv --out figure.svg
 */

import { readFileSync, writeFileSync } from "node:fs";
import { parseArgs } from "node:util";
import { MissingColumnError, parseCsv } from "./csv";
import { renderSvg, REQUIRED_COLUMNS, type FigureKind } from "./charts";

export function main(argv: string[]): number {
  let values;
  try {
    ({ values } = parseArgs({
      args: argv,
      options: {
        kind: { type: "string" },
        in: { type: "string" },
        out: { type: "string" },
      },
    }));
  } catch (err) {
    console.error((err as Error).message);
    return 2;
  }
  const kind = values.kind as FigureKind | undefined;
  if (!kind || !(kind in REQUIRED_COLUMNS)) {
    console.error(
      `--kind must be one of ${Object.keys(REQUIRED_COLUMNS).join("|")}`
    );
    return 2;
  }
  if (!values.in || !values.out) {
    console.error("--in <csv> and --out <svg> are required");
    return 2;
  }
  let svg: string;
  try {
    const table = parseCsv(readFileSync(values.in, "utf8"));
    svg = renderSvg(kind, table);
  } catch (err) {
    if (err instanceof MissingColumnError) {
      console.error(err.message);
      return 1;
    }
    console.error((err as Error).message);
    return 1;
  }
  writeFileSync(values.out, svg);
  console.log(`wrote ${values.out}`);
  return 0;
}

if (require.main === module) {
  process.exit(main(process.argv.slice(2)));
}
