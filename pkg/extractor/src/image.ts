// Netpbm decoding (P2/P3 ascii, P5/P6 binary, 8-bit) to grayscale.
//
// Netpbm is the one raster family that needs no codec dependency, and
// synthetic test imagery is trivial to emit in it from any language.

export class UnreadableImage extends Error {}

export interface GrayImage {
  width: number
  height: number
  // luminance in [0, 1], row-major
  pixels: Float64Array
}

interface Token {
  value: string
  next: number
}

// whitespace-delimited tokens with '#' comments, as the format defines
function nextToken(buf: Buffer, pos: number): Token {
  let i = pos
  for (;;) {
    while (i < buf.length && isSpace(buf[i])) i++
    if (i < buf.length && buf[i] === 0x23) {
      while (i < buf.length && buf[i] !== 0x0a) i++
      continue
    }
    break
  }
  if (i >= buf.length) {
    throw new UnreadableImage('truncated header')
  }
  const start = i
  while (i < buf.length && !isSpace(buf[i])) i++
  return { value: buf.toString('ascii', start, i), next: i }
}

function isSpace(byte: number): boolean {
  return byte === 0x20 || byte === 0x09 || byte === 0x0a || byte === 0x0d
}

function headerInt(buf: Buffer, pos: number, what: string): Token {
  const tok = nextToken(buf, pos)
  if (!/^\d+$/.test(tok.value)) {
    throw new UnreadableImage(`${what} is not a number: ${tok.value}`)
  }
  return tok
}

export function decodeNetpbm(buf: Buffer): GrayImage {
  if (buf.length < 2) {
    throw new UnreadableImage('empty file')
  }
  const magic = buf.toString('ascii', 0, 2)
  if (!['P2', 'P3', 'P5', 'P6'].includes(magic)) {
    throw new UnreadableImage(`not a supported netpbm file: ${magic}`)
  }
  const channels = magic === 'P3' || magic === 'P6' ? 3 : 1
  const binary = magic === 'P5' || magic === 'P6'

  let tok = headerInt(buf, 2, 'width')
  const width = parseInt(tok.value, 10)
  tok = headerInt(buf, tok.next, 'height')
  const height = parseInt(tok.value, 10)
  tok = headerInt(buf, tok.next, 'maxval')
  const maxval = parseInt(tok.value, 10)
  if (width < 1 || height < 1) {
    throw new UnreadableImage(`bad dimensions ${width}x${height}`)
  }
  if (maxval < 1 || maxval > 255) {
    throw new UnreadableImage(`maxval ${maxval} unsupported (8-bit only)`)
  }

  const count = width * height * channels
  const raw = new Float64Array(count)
  if (binary) {
    // exactly one whitespace byte separates header from pixel data
    const start = tok.next + 1
    if (buf.length - start < count) {
      throw new UnreadableImage(
        `pixel data is ${buf.length - start} bytes, need ${count}`,
      )
    }
    for (let i = 0; i < count; i++) raw[i] = buf[start + i]
  } else {
    let pos = tok.next
    for (let i = 0; i < count; i++) {
      const t = headerInt(buf, pos, `sample ${i}`)
      raw[i] = parseInt(t.value, 10)
      if (raw[i] > maxval) {
        throw new UnreadableImage(`sample ${raw[i]} above maxval ${maxval}`)
      }
      pos = t.next
    }
  }

  const pixels = new Float64Array(width * height)
  if (channels === 1) {
    for (let i = 0; i < pixels.length; i++) pixels[i] = raw[i] / maxval
  } else {
    // rec. 601 luma
    for (let i = 0; i < pixels.length; i++) {
      pixels[i] =
        (0.299 * raw[3 * i] + 0.587 * raw[3 * i + 1] + 0.114 * raw[3 * i + 2]) /
        maxval
    }
  }
  return { width, height, pixels }
}
