import * as fs from 'node:fs'
import * as os from 'node:os'
import * as path from 'node:path'
import { PNG } from 'pngjs'
import { afterAll, describe, expect, it } from 'vitest'
import {
  CHANNEL_MEAN,
  CHANNEL_STD,
  centerCrop,
  decodeImage,
  preprocess,
  resizeBilinear,
  RgbImage,
} from '../src/image.js'

const tmp = fs.mkdtempSync(path.join(os.tmpdir(), 'img-'))
afterAll(() => fs.rmSync(tmp, { recursive: true, force: true }))

export function writePng(filePath: string, width: number, height: number, fill: (x: number, y: number) => [number, number, number]): void {
  const png = new PNG({ width, height })
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      const [r, g, b] = fill(x, y)
      const i = (y * width + x) * 4
      png.data[i] = r
      png.data[i + 1] = g
      png.data[i + 2] = b
      png.data[i + 3] = 255
    }
  }
  fs.writeFileSync(filePath, PNG.sync.write(png))
}

describe('decodeImage', () => {
  it('reads PNG pixels back exactly', () => {
    const file = path.join(tmp, 'pix.png')
    writePng(file, 2, 2, (x, y) => [x * 100, y * 100, 50])
    const img = decodeImage(file)
    expect(img.width).toBe(2)
    expect(img.height).toBe(2)
    expect(img.data[0]).toBe(0) // (0,0) R
    expect(img.data[3]).toBe(100) // (1,0) R
    expect(img.data[(2 * 1 + 0) * 3 + 1]).toBe(100) // (0,1) G
  })

  it('rejects non-image bytes', () => {
    const file = path.join(tmp, 'junk.png')
    fs.writeFileSync(file, Buffer.from('definitely not an image'))
    expect(() => decodeImage(file)).toThrow(/not a PNG or JPEG/)
  })
})

describe('resizeBilinear', () => {
  it('preserves constant images', () => {
    const img: RgbImage = { width: 3, height: 3, data: new Float32Array(27).fill(128) }
    const out = resizeBilinear(img, 7, 5)
    expect(out.width).toBe(7)
    expect([...out.data].every((v) => Math.abs(v - 128) < 1e-4)).toBe(true)
  })

  it('interpolates a two-pixel gradient at the midpoint', () => {
    // 2x1 image [0, 100] -> 4x1: centers sample at x = {0, 1/3, 2/3, 1}
    const img: RgbImage = { width: 2, height: 1, data: new Float32Array([0, 0, 0, 100, 100, 100]) }
    const out = resizeBilinear(img, 4, 1)
    const reds = [out.data[0], out.data[3], out.data[6], out.data[9]]
    expect(reds[0]).toBeCloseTo(0, 4)
    expect(reds[1]).toBeCloseTo(100 / 4, 4)
    expect(reds[2]).toBeCloseTo(300 / 4, 4)
    expect(reds[3]).toBeCloseTo(100, 4)
  })
})

describe('centerCrop', () => {
  it('takes the centered window', () => {
    const data = new Float32Array(5 * 5 * 3)
    for (let y = 0; y < 5; y++) for (let x = 0; x < 5; x++) data[(y * 5 + x) * 3] = y * 10 + x
    const out = centerCrop({ width: 5, height: 5, data }, 3)
    expect(out.data[0]).toBe(11) // top-left of crop = (1, 1)
    expect(out.data[(3 * 2 + 2) * 3]).toBe(33)
  })

  it('rejects images smaller than the crop', () => {
    expect(() => centerCrop({ width: 2, height: 2, data: new Float32Array(12) }, 3)).toThrow(
      /smaller/,
    )
  })
})

describe('preprocess', () => {
  it('normalizes a constant gray image to the expected channel values', () => {
    const img: RgbImage = { width: 64, height: 48, data: new Float32Array(64 * 48 * 3).fill(128) }
    const out = preprocess(img, 32)
    expect(out.length).toBe(32 * 32 * 3)
    for (let c = 0; c < 3; c++) {
      const expected = (128 / 255 - CHANNEL_MEAN[c]) / CHANNEL_STD[c]
      expect(out[c]).toBeCloseTo(expected, 5)
      expect(out[3 * 777 + c]).toBeCloseTo(expected, 5)
    }
  })

  it('is deterministic', () => {
    const data = new Float32Array(40 * 30 * 3).map((_, i) => (i * 37) % 256)
    const img: RgbImage = { width: 40, height: 30, data }
    const a = preprocess(img, 16)
    const b = preprocess(img, 16)
    expect([...a]).toEqual([...b])
  })
})
