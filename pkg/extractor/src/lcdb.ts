// LCDB binary descriptor files, little-endian throughout.
//
// Header (24 bytes): "LCDB", u32 version=1, u32 frame count,
// u32 kind (0 local, 1 global), u32 n, u32 d.
// Each frame: u64 frame id, f64 timestamp, then n*d f32 row-major.
// Every frame in one file shares the same (n, d).

import * as fs from 'fs'
import * as path from 'path'

export const LCDB_MAGIC = 'LCDB'
export const LCDB_VERSION = 1

const HEADER_SIZE = 24
const BLOCK_HEAD_SIZE = 16

export type DescriptorKind = 'local' | 'global'

const KIND_CODES: Record<DescriptorKind, number> = { local: 0, global: 1 }

export interface LcdbRecord {
  frameId: number
  timestamp: number
  // n rows of d values, row-major
  rows: number
  dim: number
  data: Float32Array
}

export class LcdbFormatError extends Error {}

export function encodeLcdb(
  records: LcdbRecord[],
  kind: DescriptorKind,
): Buffer {
  let rows = 0
  let dim = 0
  if (records.length > 0) {
    rows = records[0].rows
    dim = records[0].dim
  }
  for (const r of records) {
    if (r.rows !== rows || r.dim !== dim) {
      throw new LcdbFormatError(
        `frame ${r.frameId} is ${r.rows}x${r.dim}, file is ${rows}x${dim}`,
      )
    }
    if (r.data.length !== r.rows * r.dim) {
      throw new LcdbFormatError(
        `frame ${r.frameId} has ${r.data.length} values for ${r.rows}x${r.dim}`,
      )
    }
  }

  const blockSize = BLOCK_HEAD_SIZE + 4 * rows * dim
  const buf = Buffer.alloc(HEADER_SIZE + records.length * blockSize)
  buf.write(LCDB_MAGIC, 0, 'ascii')
  buf.writeUInt32LE(LCDB_VERSION, 4)
  buf.writeUInt32LE(records.length, 8)
  buf.writeUInt32LE(KIND_CODES[kind], 12)
  buf.writeUInt32LE(rows, 16)
  buf.writeUInt32LE(dim, 20)

  let offset = HEADER_SIZE
  for (const r of records) {
    buf.writeBigUInt64LE(BigInt(r.frameId), offset)
    buf.writeDoubleLE(r.timestamp, offset + 8)
    offset += BLOCK_HEAD_SIZE
    for (let i = 0; i < r.data.length; i++) {
      buf.writeFloatLE(r.data[i], offset)
      offset += 4
    }
  }
  return buf
}

// Write via a sibling temp file and rename so readers never observe a
// partial file.
export function writeLcdb(
  outPath: string,
  records: LcdbRecord[],
  kind: DescriptorKind,
): void {
  const buf = encodeLcdb(records, kind)
  const tmp = path.join(
    path.dirname(outPath),
    `.${path.basename(outPath)}.tmp-${process.pid}`,
  )
  fs.writeFileSync(tmp, buf)
  fs.renameSync(tmp, outPath)
}

export interface LcdbFile {
  kind: DescriptorKind
  records: LcdbRecord[]
}

export function readLcdb(filePath: string): LcdbFile {
  const buf = fs.readFileSync(filePath)
  if (buf.length < HEADER_SIZE) {
    throw new LcdbFormatError(`${filePath}: shorter than the 24-byte header`)
  }
  if (buf.toString('ascii', 0, 4) !== LCDB_MAGIC) {
    throw new LcdbFormatError(`${filePath}: bad magic`)
  }
  const version = buf.readUInt32LE(4)
  if (version !== LCDB_VERSION) {
    throw new LcdbFormatError(`${filePath}: unsupported version ${version}`)
  }
  const frames = buf.readUInt32LE(8)
  const kindCode = buf.readUInt32LE(12)
  const rows = buf.readUInt32LE(16)
  const dim = buf.readUInt32LE(20)
  const kind = (Object.keys(KIND_CODES) as DescriptorKind[]).find(
    k => KIND_CODES[k] === kindCode,
  )
  if (kind === undefined) {
    throw new LcdbFormatError(`${filePath}: unknown kind code ${kindCode}`)
  }
  const blockSize = BLOCK_HEAD_SIZE + 4 * rows * dim
  if (buf.length !== HEADER_SIZE + frames * blockSize) {
    throw new LcdbFormatError(
      `${filePath}: ${buf.length} bytes, header implies ` +
        `${HEADER_SIZE + frames * blockSize}`,
    )
  }
  const records: LcdbRecord[] = []
  let offset = HEADER_SIZE
  for (let f = 0; f < frames; f++) {
    const frameId = Number(buf.readBigUInt64LE(offset))
    const timestamp = buf.readDoubleLE(offset + 8)
    offset += BLOCK_HEAD_SIZE
    const data = new Float32Array(rows * dim)
    for (let i = 0; i < data.length; i++) {
      data[i] = buf.readFloatLE(offset)
      offset += 4
    }
    records.push({ frameId, timestamp, rows, dim, data })
  }
  return { kind, records }
}
