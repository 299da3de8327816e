// Descriptor backbones over a non-overlapping patch grid.
//
// There is no bundled pretrained network, so both backbones are
// closed-form patch statistics: deterministic, dependency-free, and
// shaped like a dense feature extractor (one descriptor per patch,
// patch count set by image size). Swapping in a learned backbone means
// adding an entry here with the same signature.

import { GrayImage } from './image'

export interface PatchDescriptors {
  rows: number
  dim: number
  data: Float32Array
}

export type Backbone = {
  dim: number
  compute(img: GrayImage, patch: number): PatchDescriptors
}

function patchGrid(img: GrayImage, patch: number): [number, number] {
  return [Math.floor(img.width / patch), Math.floor(img.height / patch)]
}

// mean, std, mean dx, mean dy, mean |dx|, mean |dy|, min, max
function patchStats(img: GrayImage, patch: number): PatchDescriptors {
  const [gx, gy] = patchGrid(img, patch)
  const dim = 8
  const data = new Float32Array(gx * gy * dim)
  let out = 0
  for (let py = 0; py < gy; py++) {
    for (let px = 0; px < gx; px++) {
      let sum = 0
      let sumSq = 0
      let dx = 0
      let dy = 0
      let adx = 0
      let ady = 0
      let lo = Infinity
      let hi = -Infinity
      for (let y = py * patch; y < (py + 1) * patch; y++) {
        for (let x = px * patch; x < (px + 1) * patch; x++) {
          const v = img.pixels[y * img.width + x]
          sum += v
          sumSq += v * v
          lo = Math.min(lo, v)
          hi = Math.max(hi, v)
          if (x + 1 < (px + 1) * patch) {
            const gxv = img.pixels[y * img.width + x + 1] - v
            dx += gxv
            adx += Math.abs(gxv)
          }
          if (y + 1 < (py + 1) * patch) {
            const gyv = img.pixels[(y + 1) * img.width + x] - v
            dy += gyv
            ady += Math.abs(gyv)
          }
        }
      }
      const area = patch * patch
      const grads = patch * (patch - 1)
      const mean = sum / area
      const variance = Math.max(sumSq / area - mean * mean, 0)
      data[out++] = mean
      data[out++] = Math.sqrt(variance)
      data[out++] = dx / grads
      data[out++] = dy / grads
      data[out++] = adx / grads
      data[out++] = ady / grads
      data[out++] = lo
      data[out++] = hi
    }
  }
  return { rows: gx * gy, dim, data }
}

// 8-bin gradient orientation histogram (magnitude weighted) + mean + std
function gradHist(img: GrayImage, patch: number): PatchDescriptors {
  const [gx, gy] = patchGrid(img, patch)
  const bins = 8
  const dim = bins + 2
  const data = new Float32Array(gx * gy * dim)
  let out = 0
  for (let py = 0; py < gy; py++) {
    for (let px = 0; px < gx; px++) {
      const hist = new Float64Array(bins)
      let sum = 0
      let sumSq = 0
      for (let y = py * patch; y < (py + 1) * patch; y++) {
        for (let x = px * patch; x < (px + 1) * patch; x++) {
          const v = img.pixels[y * img.width + x]
          sum += v
          sumSq += v * v
          if (x + 1 < (px + 1) * patch && y + 1 < (py + 1) * patch) {
            const dx = img.pixels[y * img.width + x + 1] - v
            const dy = img.pixels[(y + 1) * img.width + x] - v
            const mag = Math.hypot(dx, dy)
            if (mag > 0) {
              // atan2 in (-pi, pi] folded onto [0, bins)
              let t = (Math.atan2(dy, dx) + Math.PI) / (2 * Math.PI)
              if (t >= 1) t = 0
              hist[Math.floor(t * bins)] += mag
            }
          }
        }
      }
      const total = hist.reduce((a, b) => a + b, 0)
      for (let b = 0; b < bins; b++) {
        data[out++] = total > 0 ? hist[b] / total : 0
      }
      const area = patch * patch
      const mean = sum / area
      data[out++] = mean
      data[out++] = Math.sqrt(Math.max(sumSq / area - mean * mean, 0))
    }
  }
  return { rows: gx * gy, dim, data }
}

export const BACKBONES: Record<string, Backbone> = {
  patchstats: { dim: 8, compute: patchStats },
  gradhist: { dim: 10, compute: gradHist },
}

export function backboneNames(): string[] {
  return Object.keys(BACKBONES).sort()
}
