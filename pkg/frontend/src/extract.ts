/**
 * Extract feature maps for an image folder into feature files plus a
 * dataset manifest consumable by the partmint CLI.
 */

import * as fs from 'node:fs'
import * as path from 'node:path'
import { Backbone, initBackend } from './backbone.js'
import {
  DatasetManifest,
  ManifestItem,
  readManifest,
  writeFeatureFile,
  writeManifest,
} from './featurefile.js'
import { decodeImage, preprocess } from './image.js'

export interface ExtractConfig {
  imagesDir: string
  outDir: string
  backbone?: string
  resolution?: number
  split?: 'train' | 'test'
  labelsCsv?: string
  seed?: number
  weights?: string
  backend?: 'wasm' | 'cpu'
  log?: (message: string) => void
}

export interface ExtractResult {
  manifestPath: string
  written: string[]
  skipped: string[]
  backend: string
}

const IMAGE_EXTENSIONS = new Set(['.png', '.jpg', '.jpeg'])

export function readLabelsCsv(filePath: string): Map<string, number> {
  const labels = new Map<string, number>()
  const lines = fs.readFileSync(filePath, 'utf-8').split(/\r?\n/)
  for (const line of lines) {
    const trimmed = line.trim()
    if (!trimmed || trimmed.startsWith('#') || /^id\s*,/i.test(trimmed)) continue
    const comma = trimmed.indexOf(',')
    if (comma < 0) throw new Error(`${filePath}: bad row ${trimmed}`)
    const id = trimmed.slice(0, comma).trim()
    const label = Number(trimmed.slice(comma + 1).trim())
    if (!Number.isInteger(label) || label < 0) {
      throw new Error(`${filePath}: label for ${id} must be a nonnegative integer`)
    }
    labels.set(id, label)
  }
  return labels
}

export async function extract(config: ExtractConfig): Promise<ExtractResult> {
  const resolution = config.resolution ?? 224
  const split = config.split ?? 'train'
  const seed = config.seed ?? 0
  const log = config.log ?? ((m: string) => console.error(m))
  const backendName = await initBackend(config.backend ?? 'wasm')

  const name = config.backbone ?? 'vgg19-bn'
  const backbone = config.weights
    ? Backbone.fromContainer(name, config.weights)
    : Backbone.seeded(name, seed)
  if (resolution % backbone.stride !== 0) {
    throw new Error(`resolution ${resolution} not divisible by backbone stride ${backbone.stride}`)
  }

  const labels = config.labelsCsv ? readLabelsCsv(config.labelsCsv) : new Map<string, number>()

  const manifestPath = path.join(config.outDir, 'manifest.json')
  let existing: DatasetManifest | null = null
  if (fs.existsSync(manifestPath)) {
    existing = readManifest(manifestPath)
    if (existing.depth !== backbone.depth) {
      backbone.dispose()
      throw new Error(
        `${manifestPath}: existing manifest has depth ${existing.depth}, ` +
          `but backbone ${name} emits depth ${backbone.depth}`,
      )
    }
  }

  const files = fs
    .readdirSync(config.imagesDir)
    .filter((f) => IMAGE_EXTENSIONS.has(path.extname(f).toLowerCase()))
    .sort()
  const written: string[] = []
  const skipped: string[] = []
  const items: ManifestItem[] = []

  for (const file of files) {
    const id = path.basename(file, path.extname(file))
    const sourcePath = path.join(config.imagesDir, file)
    let pixels: Float32Array
    try {
      pixels = preprocess(decodeImage(sourcePath), resolution)
    } catch (err) {
      log(`warning: skipping ${file}: ${(err as Error).message}`)
      skipped.push(file)
      continue
    }
    const fmap = backbone.extract(pixels, resolution)
    const rel = path.join('features', `${id}.pcf`)
    writeFeatureFile(path.join(config.outDir, rel), fmap)
    const item: ManifestItem = { id, path: rel, split }
    if (labels.has(id)) item.label = labels.get(id)
    items.push(item)
    written.push(rel)
  }
  backbone.dispose()

  // merge with an existing manifest: new items replace matching ids
  const merged = new Map<string, ManifestItem>()
  for (const item of existing?.items ?? []) merged.set(item.id, item)
  for (const item of items) merged.set(item.id, item)
  const manifest: DatasetManifest = {
    version: 1,
    depth: backbone.depth,
    items: [...merged.values()],
  }
  writeManifest(manifestPath, manifest)
  log(
    `extracted ${written.length} image(s) at ${resolution}x${resolution} -> ` +
      `${resolution / backbone.stride}x${resolution / backbone.stride}x${backbone.depth} ` +
      `(${backendName} backend${config.weights ? '' : ', seeded weights'})`,
  )
  return { manifestPath, written, skipped, backend: backendName }
}
