// Folder-to-LCDB extraction jobs.
//
// Frame ids are assigned 0..k-1 over the images that decode, taken in
// lexicographic filename order; the id order therefore matches what a
// downstream exclusion window expects. Timestamps carry the frame
// index, since image folders have no capture clock.

import * as fs from 'fs'
import * as path from 'path'

import { BACKBONES, backboneNames } from './backbone'
import { UnreadableImage, decodeNetpbm } from './image'
import { LcdbRecord, writeLcdb } from './lcdb'

const IMAGE_EXTENSIONS = ['.pgm', '.ppm', '.pnm']

export class DimDrift extends Error {}
export class JobError extends Error {}

export interface ExtractionJob {
  imagesDir: string
  backbone: string
  outPath: string
  // patch edge length in pixels; the grid tracks image size the way a
  // ViT token grid does, so mixed image sizes drift the row count
  patch: number
  device: 'cpu'
}

export interface SkipEntry {
  file: string
  reason: string
}

export interface ExtractionReport {
  out: string
  backbone: string
  patch: number
  frames: number
  rows: number
  dim: number
  skipped: SkipEntry[]
}

export function listImages(dir: string): string[] {
  return fs
    .readdirSync(dir)
    .filter(name => IMAGE_EXTENSIONS.includes(path.extname(name).toLowerCase()))
    .sort()
}

export function extract(job: ExtractionJob): ExtractionReport {
  const backbone = BACKBONES[job.backbone]
  if (backbone === undefined) {
    throw new JobError(
      `unknown backbone '${job.backbone}', have: ${backboneNames().join(', ')}`,
    )
  }
  if (!Number.isInteger(job.patch) || job.patch < 2) {
    throw new JobError(`patch must be an integer >= 2, got ${job.patch}`)
  }
  if (job.device !== 'cpu') {
    throw new JobError(`only device 'cpu' is available, got '${job.device}'`)
  }

  const names = listImages(job.imagesDir)
  if (names.length === 0) {
    throw new JobError(`no ${IMAGE_EXTENSIONS.join('/')} images in ${job.imagesDir}`)
  }

  const records: LcdbRecord[] = []
  const skipped: SkipEntry[] = []
  let rows = -1
  for (const name of names) {
    const file = path.join(job.imagesDir, name)
    let img
    try {
      img = decodeNetpbm(fs.readFileSync(file))
    } catch (err) {
      if (err instanceof UnreadableImage) {
        skipped.push({ file: name, reason: err.message })
        console.error(`warning: skipping ${name}: ${err.message}`)
        continue
      }
      throw err
    }
    if (img.width < job.patch || img.height < job.patch) {
      const reason = `image ${img.width}x${img.height} smaller than one ${job.patch}px patch`
      skipped.push({ file: name, reason })
      console.error(`warning: skipping ${name}: ${reason}`)
      continue
    }
    const desc = backbone.compute(img, job.patch)
    if (rows === -1) {
      rows = desc.rows
    } else if (desc.rows !== rows) {
      throw new DimDrift(
        `${name} yields ${desc.rows} descriptors, earlier frames ${rows}; ` +
          'descriptor dims must stay constant across the folder',
      )
    }
    records.push({
      frameId: records.length,
      timestamp: records.length,
      rows: desc.rows,
      dim: desc.dim,
      data: desc.data,
    })
  }

  if (records.length === 0) {
    throw new JobError(`no readable images in ${job.imagesDir}`)
  }

  writeLcdb(job.outPath, records, 'local')
  const report: ExtractionReport = {
    out: job.outPath,
    backbone: job.backbone,
    patch: job.patch,
    frames: records.length,
    rows,
    dim: backbone.dim,
    skipped,
  }
  fs.writeFileSync(
    job.outPath + '.report.json',
    JSON.stringify(report, null, 1) + '\n',
  )
  return report
}
