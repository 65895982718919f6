import * as fs from "fs";
import * as path from "path";

import { describe, expect, it } from "vitest";

import { AdapterFormatError, parseAdapter } from "../src/adpt";
import { meanSquaredWeight, standInLoss } from "../src/loss";

const FIXTURES = path.join(__dirname, "fixtures");

interface ExpectedTensor {
  name: string;
  rows: number;
  cols: number;
  values: number[];
}

interface ExpectedAdapter {
  task_id: string;
  rank: number;
  alpha: number;
  group_label: string | null;
  lang_label: string | null;
  tensors: ExpectedTensor[];
  mean_squared_weight: number;
}

const expectedTable: Record<string, ExpectedAdapter> = JSON.parse(
  fs.readFileSync(path.join(FIXTURES, "expected_values.json"), "utf-8"),
);

function fixture(name: string): Buffer {
  return fs.readFileSync(path.join(FIXTURES, name));
}

describe("cross-language fixture corpus", () => {
  for (const [filename, expected] of Object.entries(expectedTable)) {
    it(`parses ${filename} exactly as the writer intended`, () => {
      const adapter = parseAdapter(fixture(filename));
      expect(adapter.taskId).toBe(expected.task_id);
      expect(adapter.rank).toBe(expected.rank);
      expect(adapter.alpha).toBe(expected.alpha);
      expect(adapter.groupLabel).toBe(expected.group_label);
      expect(adapter.langLabel).toBe(expected.lang_label);
      expect(adapter.tensors.length).toBe(expected.tensors.length);
      for (let i = 0; i < adapter.tensors.length; i++) {
        const got = adapter.tensors[i];
        const want = expected.tensors[i];
        expect(got.name).toBe(want.name);
        expect(got.rows).toBe(want.rows);
        expect(got.cols).toBe(want.cols);
        expect(Array.from(got.data)).toEqual(want.values);
      }
      expect(meanSquaredWeight(adapter)).toBeCloseTo(expected.mean_squared_weight, 12);
    });
  }

  it("tensor names arrive in lexicographic order", () => {
    const adapter = parseAdapter(fixture("multi_layer.adpt"));
    const names = adapter.tensors.map((t) => t.name);
    expect(names).toEqual([...names].sort());
  });

  it("adds the per-task offset when task_offsets.json is present", () => {
    const file = path.join(FIXTURES, "minimal_rank1.adpt");
    const adapter = parseAdapter(fs.readFileSync(file));
    const base = meanSquaredWeight(adapter);
    expect(standInLoss(adapter, file, "offsettask")).toBeCloseTo(base + 0.5, 12);
    expect(standInLoss(adapter, file, "other-task")).toBeCloseTo(base, 12);
  });
});

describe("malformed files are rejected with the designated errors", () => {
  const valid = () => fixture("multi_layer.adpt");

  function expectError(data: Buffer, field: string, message: RegExp) {
    try {
      parseAdapter(data);
      throw new Error("expected a parse failure");
    } catch (err) {
      expect(err).toBeInstanceOf(AdapterFormatError);
      const formatError = err as AdapterFormatError;
      expect(formatError.field).toBe(field);
      expect(formatError.message).toMatch(message);
    }
  }

  it("bad magic", () => {
    const data = valid();
    data.write("XXXX", 0, "latin1");
    expectError(data, "magic", /bad magic/);
  });

  it("truncated before manifest length", () => {
    expectError(valid().subarray(0, 8), "manifest_length", /truncated/);
  });

  it("manifest length exceeds file size", () => {
    const data = valid();
    data.writeBigUInt64LE(BigInt(data.length * 2), 6);
    expectError(data, "manifest_length", /exceeds file size/);
  });

  it("payload shorter than manifest declares", () => {
    const data = valid();
    expectError(data.subarray(0, data.length - 4), "payload", /payload shorter/);
  });

  it("payload longer than manifest declares", () => {
    const data = Buffer.concat([valid(), Buffer.alloc(8)]);
    expectError(data, "payload", /payload longer/);
  });

  it("manifest is not valid JSON", () => {
    const data = valid();
    data.write("{{{{", 14, "latin1");
    expectError(data, "manifest", /not valid UTF-8 JSON/);
  });
});
