import { spawnSync } from "child_process";
import * as fs from "fs";
import * as path from "path";

import { describe, expect, it } from "vitest";

const FIXTURES = path.join(__dirname, "fixtures");
const CLI = path.join(__dirname, "..", "dist", "main.js");

const LOSS_LINE = /^-?[0-9]+(\.[0-9]+)?([eE][+-]?[0-9]+)?$/;

function runCli(args: string[]) {
  return spawnSync("node", [CLI, ...args], { encoding: "utf-8" });
}

function oracleArgs(adapter: string, task: string): string[] {
  return ["--adapter", adapter, "--task", task, "--examples", "10"];
}

describe("oracle subprocess protocol", () => {
  const adapterPath = path.join(FIXTURES, "multi_layer.adpt");

  it("prints one protocol-conformant loss line and exits 0", () => {
    const result = runCli(oracleArgs(adapterPath, "fixture-multi"));
    expect(result.status).toBe(0);
    const lines = result.stdout.split("\n").filter((l) => l.length > 0);
    expect(lines.length).toBe(1);
    expect(lines[0]).toMatch(LOSS_LINE);
    expect(Number(lines[0])).toBeGreaterThan(0);
  });

  it("is deterministic across invocations", () => {
    const first = runCli(oracleArgs(adapterPath, "fixture-multi"));
    const second = runCli(oracleArgs(adapterPath, "fixture-multi"));
    expect(first.stdout).toBe(second.stdout);
    expect(first.status).toBe(0);
  });

  it("applies the per-task offset file", () => {
    const minimal = path.join(FIXTURES, "minimal_rank1.adpt");
    const base = Number(runCli(oracleArgs(minimal, "unrelated")).stdout.trim());
    const offset = Number(runCli(oracleArgs(minimal, "offsettask")).stdout.trim());
    expect(offset).toBeCloseTo(base + 0.5, 10);
  });

  it("missing adapter file exits 1 with no stdout", () => {
    const result = runCli(oracleArgs(path.join(FIXTURES, "nope.adpt"), "t"));
    expect(result.status).toBe(1);
    expect(result.stdout).toBe("");
    expect(result.stderr).toMatch(/cannot read adapter file/);
  });

  it("malformed magic exits 1 with detail on stderr", () => {
    const bad = path.join(FIXTURES, "bad_magic.tmp.adpt");
    const data = fs.readFileSync(path.join(FIXTURES, "multi_layer.adpt"));
    data.write("XXXX", 0, "latin1");
    fs.writeFileSync(bad, data);
    try {
      const result = runCli(oracleArgs(bad, "t"));
      expect(result.status).toBe(1);
      expect(result.stdout).toBe("");
      expect(result.stderr).toMatch(/bad magic/);
    } finally {
      fs.unlinkSync(bad);
    }
  });

  it("usage problems exit 2", () => {
    expect(runCli([]).status).toBe(2);
    expect(runCli(["--adapter", "x", "--task", "t"]).status).toBe(2);
    expect(runCli(["--bogus", "1"]).status).toBe(2);
    expect(runCli(oracleArgs(adapterPath, "t").slice(0, 4).concat(["--examples", "0"])).status).toBe(2);
  });
});
