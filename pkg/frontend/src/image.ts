/**
 * Image decoding and the fixed inference preprocessing: decode, resize the
 * shorter side, center-crop to the target resolution, scale to [0, 1] and
 * normalize per channel with the standard ImageNet statistics.
 */

import * as fs from 'node:fs'
import jpeg from 'jpeg-js'
import { PNG } from 'pngjs'

export const CHANNEL_MEAN = [0.485, 0.456, 0.406]
export const CHANNEL_STD = [0.229, 0.224, 0.225]

export interface RgbImage {
  width: number
  height: number
  /** interleaved RGB in [0, 255], length width*height*3 */
  data: Float32Array
}

export function decodeImage(filePath: string): RgbImage {
  const raw = fs.readFileSync(filePath)
  if (raw.length >= 8 && raw.readUInt32BE(0) === 0x89504e47) {
    const png = PNG.sync.read(raw)
    return rgbaToRgb(png.data, png.width, png.height)
  }
  if (raw.length >= 2 && raw[0] === 0xff && raw[1] === 0xd8) {
    const img = jpeg.decode(raw, { useTArray: true, formatAsRGBA: true })
    return rgbaToRgb(img.data, img.width, img.height)
  }
  throw new Error(`${filePath}: not a PNG or JPEG file`)
}

function rgbaToRgb(rgba: Uint8Array | Buffer, width: number, height: number): RgbImage {
  const out = new Float32Array(width * height * 3)
  for (let i = 0; i < width * height; i++) {
    out[3 * i] = rgba[4 * i]
    out[3 * i + 1] = rgba[4 * i + 1]
    out[3 * i + 2] = rgba[4 * i + 2]
  }
  return { width, height, data: out }
}

/** Bilinear resize with half-pixel-centered sampling. */
export function resizeBilinear(img: RgbImage, outWidth: number, outHeight: number): RgbImage {
  const { width, height, data } = img
  const out = new Float32Array(outWidth * outHeight * 3)
  const sx = width / outWidth
  const sy = height / outHeight
  for (let oy = 0; oy < outHeight; oy++) {
    const cy = Math.min(Math.max((oy + 0.5) * sy - 0.5, 0), height - 1)
    const y0 = Math.floor(cy)
    const y1 = Math.min(y0 + 1, height - 1)
    const fy = cy - y0
    for (let ox = 0; ox < outWidth; ox++) {
      const cx = Math.min(Math.max((ox + 0.5) * sx - 0.5, 0), width - 1)
      const x0 = Math.floor(cx)
      const x1 = Math.min(x0 + 1, width - 1)
      const fx = cx - x0
      for (let c = 0; c < 3; c++) {
        const v00 = data[(y0 * width + x0) * 3 + c]
        const v01 = data[(y0 * width + x1) * 3 + c]
        const v10 = data[(y1 * width + x0) * 3 + c]
        const v11 = data[(y1 * width + x1) * 3 + c]
        const top = v00 + (v01 - v00) * fx
        const bottom = v10 + (v11 - v10) * fx
        out[(oy * outWidth + ox) * 3 + c] = top + (bottom - top) * fy
      }
    }
  }
  return { width: outWidth, height: outHeight, data: out }
}

export function centerCrop(img: RgbImage, size: number): RgbImage {
  const { width, height, data } = img
  if (width < size || height < size) {
    throw new Error(`image ${width}x${height} smaller than crop size ${size}`)
  }
  const left = Math.floor((width - size) / 2)
  const top = Math.floor((height - size) / 2)
  const out = new Float32Array(size * size * 3)
  for (let y = 0; y < size; y++) {
    for (let x = 0; x < size; x++) {
      for (let c = 0; c < 3; c++) {
        out[(y * size + x) * 3 + c] = data[((top + y) * width + (left + x)) * 3 + c]
      }
    }
  }
  return { width: size, height: size, data: out }
}

/**
 * Full pipeline: resize shorter side to resolution * 256/224 (the usual
 * inference margin), center-crop to resolution, normalize channels.
 * Returns CHW-agnostic HWC float data ready for the backbone.
 */
export function preprocess(img: RgbImage, resolution: number): Float32Array {
  const short = Math.round((resolution * 256) / 224)
  const scale = short / Math.min(img.width, img.height)
  const resized = resizeBilinear(
    img,
    Math.max(Math.round(img.width * scale), short),
    Math.max(Math.round(img.height * scale), short),
  )
  const cropped = centerCrop(resized, resolution)
  const out = new Float32Array(cropped.data.length)
  for (let i = 0; i < resolution * resolution; i++) {
    for (let c = 0; c < 3; c++) {
      out[3 * i + c] = (cropped.data[3 * i + c] / 255 - CHANNEL_MEAN[c]) / CHANNEL_STD[c]
    }
  }
  return out
}
