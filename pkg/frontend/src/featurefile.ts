/**
 * The binary feature-file layout shared with the partmint reader, and the
 * dataset manifest JSON. The byte layout is normative:
 *
 *   bytes 0-7    magic "PCULF001"
 *   bytes 8-19   H, W, D as uint32 little-endian
 *   bytes 20-    H*W*D float32 little-endian values, row-major (h, w, d)
 */

import * as fs from 'node:fs'
import * as path from 'node:path'

export const FEATURE_MAGIC = 'PCULF001'
export const MAX_CELLS = 2 ** 30

export interface FeatureMap {
  height: number
  width: number
  depth: number
  /** row-major (h, w, d), length height*width*depth */
  data: Float32Array
}

export function encodeFeatureFile(map: FeatureMap): Buffer {
  const { height, width, depth, data } = map
  if (height < 1 || width < 1 || depth < 1) {
    throw new Error(`feature dimensions must be >= 1, got ${height}x${width}x${depth}`)
  }
  const cells = height * width * depth
  if (cells > MAX_CELLS) {
    throw new Error(`H*W*D = ${cells} exceeds the 2^30 bound`)
  }
  if (data.length !== cells) {
    throw new Error(`payload holds ${data.length} values, expected ${cells}`)
  }
  for (let i = 0; i < data.length; i++) {
    if (!Number.isFinite(data[i])) {
      throw new Error(`payload value at index ${i} is not finite`)
    }
  }
  const buf = Buffer.alloc(20 + 4 * cells)
  buf.write(FEATURE_MAGIC, 0, 'ascii')
  buf.writeUInt32LE(height, 8)
  buf.writeUInt32LE(width, 12)
  buf.writeUInt32LE(depth, 16)
  Buffer.from(data.buffer, data.byteOffset, data.byteLength).copy(buf, 20)
  return buf
}

export function writeFeatureFile(filePath: string, map: FeatureMap): void {
  const tmp = filePath + '.tmp'
  fs.mkdirSync(path.dirname(filePath), { recursive: true })
  fs.writeFileSync(tmp, encodeFeatureFile(map))
  fs.renameSync(tmp, filePath)
}

/** Reader used by the tests to check conformance of emitted files. */
export function readFeatureFile(filePath: string): FeatureMap {
  const raw = fs.readFileSync(filePath)
  if (raw.length < 8 || raw.toString('ascii', 0, 8) !== FEATURE_MAGIC) {
    throw new Error(`${filePath}: bad magic`)
  }
  if (raw.length < 20) {
    throw new Error(`${filePath}: truncated header`)
  }
  const height = raw.readUInt32LE(8)
  const width = raw.readUInt32LE(12)
  const depth = raw.readUInt32LE(16)
  const cells = height * width * depth
  if (raw.length !== 20 + 4 * cells) {
    throw new Error(`${filePath}: payload length mismatch`)
  }
  const data = new Float32Array(cells)
  for (let i = 0; i < cells; i++) data[i] = raw.readFloatLE(20 + 4 * i)
  return { height, width, depth, data }
}

export interface ManifestItem {
  id: string
  path: string
  split: 'train' | 'test'
  label?: number
}

export interface DatasetManifest {
  version: 1
  depth: number
  items: ManifestItem[]
}

export function writeManifest(filePath: string, manifest: DatasetManifest): void {
  const tmp = filePath + '.tmp'
  fs.mkdirSync(path.dirname(filePath), { recursive: true })
  fs.writeFileSync(tmp, JSON.stringify(manifest, null, 2) + '\n')
  fs.renameSync(tmp, filePath)
}

export function readManifest(filePath: string): DatasetManifest {
  const doc = JSON.parse(fs.readFileSync(filePath, 'utf-8'))
  if (doc.version !== 1 || typeof doc.depth !== 'number' || !Array.isArray(doc.items)) {
    throw new Error(`${filePath}: not a version-1 dataset manifest`)
  }
  return doc as DatasetManifest
}
