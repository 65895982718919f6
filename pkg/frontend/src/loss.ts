/**
 * Stand-in loss for protocol conformance testing.
 *
 * This is NOT a language-model cross-entropy: it is the mean squared weight
 * value of the adapter (accumulated in float64, tensors in manifest order),
 * plus an optional per-task offset read from a `task_offsets.json` file next
 * to the adapter.  It exists so the subprocess protocol and file format can
 * be exercised end to end; a real evaluator replaces this computation behind
 * the same argv contract.
 */

import * as fs from "fs";
import * as path from "path";

import { Adapter } from "./adpt";

export function meanSquaredWeight(adapter: Adapter): number {
  let sum = 0;
  let count = 0;
  for (const tensor of adapter.tensors) {
    for (let i = 0; i < tensor.data.length; i++) {
      const v = tensor.data[i];
      sum += v * v;
    }
    count += tensor.data.length;
  }
  return sum / count;
}

export function taskOffset(adapterPath: string, taskId: string): number {
  const offsetsPath = path.join(path.dirname(adapterPath), "task_offsets.json");
  if (!fs.existsSync(offsetsPath)) {
    return 0;
  }
  const table = JSON.parse(fs.readFileSync(offsetsPath, "utf-8"));
  const value = table[taskId];
  return typeof value === "number" ? value : 0;
}

export function standInLoss(adapter: Adapter, adapterPath: string, taskId: string): number {
  return meanSquaredWeight(adapter) + taskOffset(adapterPath, taskId);
}
