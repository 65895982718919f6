/**
 * Reference oracle CLI.
 *
 * Protocol: invoked as
 *     node main.js --adapter <path> --task <task_id> --examples <n>
 * On success prints exactly one decimal loss line on stdout and exits 0.
 * Usage problems exit 2; read/parse failures exit 1 with detail on stderr.
 */

import * as fs from "fs";

import { AdapterFormatError, parseAdapter } from "./adpt";
import { standInLoss } from "./loss";

interface Args {
  adapter: string;
  task: string;
  examples: number;
}

function usage(message: string): never {
  process.stderr.write(`${message}\n`);
  process.stderr.write("usage: reference-oracle --adapter <path> --task <task_id> --examples <n>\n");
  process.exit(2);
}

export function parseArgs(argv: string[]): Args {
  const values: Record<string, string> = {};
  for (let i = 0; i < argv.length; i += 2) {
    const flag = argv[i];
    if (flag !== "--adapter" && flag !== "--task" && flag !== "--examples") {
      usage(`unknown argument: ${flag}`);
    }
    if (i + 1 >= argv.length) {
      usage(`missing value for ${flag}`);
    }
    values[flag.slice(2)] = argv[i + 1];
  }
  for (const key of ["adapter", "task", "examples"]) {
    if (!(key in values)) {
      usage(`missing required argument: --${key}`);
    }
  }
  const examples = Number(values["examples"]);
  if (!Number.isInteger(examples) || examples < 1) {
    usage(`--examples must be a positive integer, got '${values["examples"]}'`);
  }
  return { adapter: values["adapter"], task: values["task"], examples };
}

export function main(argv: string[]): number {
  const args = parseArgs(argv);
  let data: Buffer;
  try {
    data = fs.readFileSync(args.adapter);
  } catch (err) {
    process.stderr.write(`cannot read adapter file: ${err}\n`);
    return 1;
  }
  try {
    const adapter = parseAdapter(data);
    const loss = standInLoss(adapter, args.adapter, args.task);
    if (!Number.isFinite(loss)) {
      process.stderr.write(`computed a non-finite loss\n`);
      return 1;
    }
    process.stdout.write(`${loss}\n`);
    return 0;
  } catch (err) {
    if (err instanceof AdapterFormatError) {
      process.stderr.write(`adapter parse failure [${err.field}]: ${err.message}\n`);
      return 1;
    }
    process.stderr.write(`unexpected failure: ${err}\n`);
    return 1;
  }
}

if (require.main === module) {
  process.exit(main(process.argv.slice(2)));
}
