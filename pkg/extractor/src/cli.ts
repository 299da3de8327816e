// extract --images DIR --backbone NAME --out F.lcdb [--patch N] [--device cpu]
//
// Exit codes follow the consumer's convention: 0 ok, 1 usage, 2 data.

import { parseArgs } from 'node:util'

import { backboneNames } from './backbone'
import { DimDrift, JobError, extract } from './extract'

const USAGE =
  'usage: extract --images DIR --backbone NAME --out F.lcdb ' +
  `[--patch N] [--device cpu]\n  backbones: ${backboneNames().join(', ')}`

export function main(argv: string[]): number {
  let parsed
  try {
    parsed = parseArgs({
      args: argv,
      options: {
        images: { type: 'string' },
        backbone: { type: 'string' },
        out: { type: 'string' },
        patch: { type: 'string', default: '16' },
        device: { type: 'string', default: 'cpu' },
        help: { type: 'boolean', default: false },
      },
      allowPositionals: true,
    })
  } catch (err) {
    console.error(`error: ${(err as Error).message}`)
    console.error(USAGE)
    return 1
  }
  const { values, positionals } = parsed
  if (values.help) {
    console.log(USAGE)
    return 0
  }
  const extras = positionals.filter(p => p !== 'extract')
  if (extras.length > 0) {
    console.error(`error: unexpected argument '${extras[0]}'`)
    console.error(USAGE)
    return 1
  }
  if (!values.images || !values.backbone || !values.out) {
    console.error('error: --images, --backbone and --out are required')
    console.error(USAGE)
    return 1
  }
  const patch = Number(values.patch)
  if (!Number.isInteger(patch) || patch < 2) {
    console.error(`error: --patch must be an integer >= 2, got '${values.patch}'`)
    return 1
  }
  if (values.device !== 'cpu') {
    console.error(`error: --device supports only 'cpu', got '${values.device}'`)
    return 1
  }

  try {
    const report = extract({
      imagesDir: values.images,
      backbone: values.backbone,
      outPath: values.out,
      patch,
      device: 'cpu',
    })
    console.log(
      JSON.stringify({
        out: report.out,
        frames: report.frames,
        rows: report.rows,
        dim: report.dim,
        skipped: report.skipped.length,
      }),
    )
    return 0
  } catch (err) {
    if (err instanceof JobError && err.message.startsWith('unknown backbone')) {
      console.error(`error: ${err.message}`)
      return 1
    }
    if (
      err instanceof JobError ||
      err instanceof DimDrift ||
      (err as NodeJS.ErrnoException).code !== undefined
    ) {
      console.error(`error: ${(err as Error).message}`)
      return 2
    }
    throw err
  }
}

if (require.main === module) {
  process.exit(main(process.argv.slice(2)))
}
