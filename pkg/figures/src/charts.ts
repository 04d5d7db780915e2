/** Chart builders: each figure kind maps a CSV table onto an echarts option
 * and renders server-side to an SVG string. */

import echarts = require("echarts");

type EChartsOption = echarts.EChartsOption;
type SeriesOption = echarts.SeriesOption;
import { numericColumn, requireColumns, type Table } from "./csv";

export type FigureKind = "fig3" | "fig5" | "fig7" | "fig8";

export const REQUIRED_COLUMNS: Record<FigureKind, string[]> = {
  fig3: ["x", "n_myopic", "n_social"],
  fig5: ["t", "myopic_x_1", "social_x_1", "xbar"],
  fig7: ["T", "myopic", "hiding", "social", "char"],
  fig8: ["rho", "ir_myopic", "ir_hiding", "ir_char"],
};

const PALETTE = ["#c23531", "#2f4554", "#61a0a8", "#d48265"];

function baseOption(title: string, xName: string, yName: string) {
  return {
    animation: false,
    title: { text: title, left: "center" },
    legend: { bottom: 0 },
    color: PALETTE,
    grid: { left: 70, right: 30, top: 50, bottom: 70 },
    xAxis: { type: "value" as const, name: xName, nameLocation: "middle" as const, nameGap: 28 },
    yAxis: { type: "value" as const, name: yName, nameLocation: "middle" as const, nameGap: 48 },
  };
}

function pairs(xs: number[], ys: number[]): [number, number][] {
  return xs.map((x, i) => [x, ys[i]]);
}

function fig3Option(table: Table) {
  requireColumns(table, REQUIRED_COLUMNS.fig3, "fig3");
  const x = numericColumn(table, "x", "fig3");
  const option: EChartsOption = {
    ...baseOption("Exploration vs hazard belief", "hazard belief x_1", "users on stochastic path"),
    series: [
      {
        name: "myopic n_1",
        type: "line",
        data: pairs(x, numericColumn(table, "n_myopic", "fig3")),
      },
      {
        name: "socially optimal n_1",
        type: "line",
        data: pairs(x, numericColumn(table, "n_social", "fig3")),
      },
    ],
  };
  if (table.columns.includes("x_th")) {
    const xth = numericColumn(table, "x_th", "fig3")[0];
    (option.series as SeriesOption[]).push({
      name: "belief threshold",
      type: "line",
      data: [],
      markLine: {
        symbol: "none",
        lineStyle: { type: "dashed" },
        data: [{ xAxis: xth }],
        label: { formatter: `x_th=${xth.toFixed(2)}` },
      },
    });
  }
  return option;
}

function fig5Option(table: Table) {
  requireColumns(table, REQUIRED_COLUMNS.fig5, "fig5");
  const t = numericColumn(table, "t", "fig5");
  const xbar = numericColumn(table, "xbar", "fig5")[0];
  return {
    ...baseOption("Average hazard belief over time", "time slot", "mean belief x_1(t)"),
    series: [
      {
        name: "myopic",
        type: "line" as const,
        data: pairs(t, numericColumn(table, "myopic_x_1", "fig5")),
      },
      {
        name: "socially optimal",
        type: "line" as const,
        data: pairs(t, numericColumn(table, "social_x_1", "fig5")),
      },
      {
        name: "true long-run rate",
        type: "line" as const,
        data: [],
        markLine: {
          symbol: "none",
          lineStyle: { type: "dashed" as const },
          data: [{ yAxis: xbar }],
          label: { formatter: `x̄=${xbar}` },
        },
      },
    ],
  };
}

function fig7Option(table: Table) {
  requireColumns(table, REQUIRED_COLUMNS.fig7, "fig7");
  const horizon = numericColumn(table, "T", "fig7");
  const series = ["myopic", "hiding", "social", "char"].map((name) => ({
    name,
    type: "line" as const,
    data: pairs(horizon, numericColumn(table, name, "fig7")),
  }));
  return {
    ...baseOption("Average long-term cost vs horizon", "horizon T", "mean discounted cost"),
    series,
  };
}

function fig8Option(table: Table) {
  requireColumns(table, REQUIRED_COLUMNS.fig8, "fig8");
  const rho = numericColumn(table, "rho", "fig8");
  const categories = rho.map((r) => r.toString());
  const series = ["ir_myopic", "ir_hiding", "ir_char"].map((name) => ({
    name: name.replace("ir_", "IR "),
    type: "bar" as const,
    data: numericColumn(table, name, "fig8"),
  }));
  return {
    animation: false,
    title: { text: "Inefficiency ratios vs discount factor", left: "center" },
    legend: { bottom: 0 },
    color: PALETTE,
    grid: { left: 70, right: 30, top: 50, bottom: 70 },
    xAxis: {
      type: "category" as const,
      data: categories,
      name: "discount factor",
      nameLocation: "middle" as const,
      nameGap: 28,
    },
    yAxis: {
      type: "value" as const,
      name: "cost ratio vs social",
      nameLocation: "middle" as const,
      nameGap: 48,
    },
    series,
  };
}

const BUILDERS: Record<FigureKind, (t: Table) => EChartsOption> = {
  fig3: fig3Option,
  fig5: fig5Option,
  fig7: fig7Option,
  fig8: fig8Option,
};

export function renderSvg(kind: FigureKind, table: Table): string {
  const builder = BUILDERS[kind];
  if (!builder) {
    throw new Error(`unknown figure kind '${kind}'`);
  }
  const chart = echarts.init(null, null, {
    renderer: "svg",
    ssr: true,
    width: 860,
    height: 540,
  });
  try {
    chart.setOption(builder(table));
    return chart.renderToSVGString();
  } finally {
    chart.dispose();
  }
}
