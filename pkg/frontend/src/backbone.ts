/**
 * Convolutional feature extractors. The default is the VGG19-with-batch-
 * norm feature stack tapped at the output of the final convolutional
 * block (after its last ReLU, before the fifth max-pool): total stride 16,
 * depth 512, so a 224x224 input yields a 14x14x512 feature map.
 *
 * Weights load from a container file when provided; otherwise they are
 * drawn deterministically from a seeded generator (He-scaled convolutions,
 * identity batch norm). Seeded weights keep every format/shape/determinism
 * contract of the bridge; swap in exported pretrained weights for
 * semantically meaningful features.
 */

import * as fs from 'node:fs'
import * as tf from '@tensorflow/tfjs'
import { gaussian, sfc32 } from './prng.js'

type LayerSpec = number | 'M'

const ARCHS: Record<string, { layers: LayerSpec[]; stride: number; depth: number }> = {
  // feature stack tapped before the final pool
  'vgg19-bn': {
    layers: [64, 64, 'M', 128, 128, 'M', 256, 256, 256, 256, 'M', 512, 512, 512, 512, 'M', 512, 512, 512, 512],
    stride: 16,
    depth: 512,
  },
  // small stack for fast tests
  tiny: { layers: [16, 'M', 32], stride: 2, depth: 32 },
}

interface ConvLayer {
  kind: 'conv'
  weight: tf.Tensor4D
  bias: tf.Tensor1D
  bnGamma: tf.Tensor1D
  bnBeta: tf.Tensor1D
  bnMean: tf.Tensor1D
  bnVar: tf.Tensor1D
}

interface PoolLayer {
  kind: 'pool'
}

export class Backbone {
  readonly name: string
  readonly stride: number
  readonly depth: number
  private layers: (ConvLayer | PoolLayer)[]

  private constructor(name: string, layers: (ConvLayer | PoolLayer)[]) {
    this.name = name
    this.stride = ARCHS[name].stride
    this.depth = ARCHS[name].depth
    this.layers = layers
  }

  static seeded(name: string, seed: number): Backbone {
    const arch = ARCHS[name]
    if (!arch) {
      throw new Error(`unknown backbone ${name}`)
    }
    const normal = gaussian(sfc32(seed))
    let cin = 3
    const layers: (ConvLayer | PoolLayer)[] = []
    for (const spec of arch.layers) {
      if (spec === 'M') {
        layers.push({ kind: 'pool' })
        continue
      }
      const cout = spec
      const fanIn = 3 * 3 * cin
      const std = Math.sqrt(2.0 / fanIn)
      const w = new Float32Array(3 * 3 * cin * cout)
      for (let i = 0; i < w.length; i++) w[i] = normal() * std
      layers.push({
        kind: 'conv',
        weight: tf.tensor4d(w, [3, 3, cin, cout]),
        bias: tf.zeros([cout]),
        bnGamma: tf.ones([cout]),
        bnBeta: tf.zeros([cout]),
        bnMean: tf.zeros([cout]),
        bnVar: tf.ones([cout]),
      })
      cin = cout
    }
    return new Backbone(name, layers)
  }

  /** Load weights from a PCULM001 container with kind "backbone". */
  static fromContainer(name: string, filePath: string): Backbone {
    const arch = ARCHS[name]
    if (!arch) throw new Error(`unknown backbone ${name}`)
    const { header, blocks } = readContainer(filePath)
    if (header.kind !== 'backbone' || header.arch !== name) {
      throw new Error(`${filePath}: container holds ${header.kind}/${header.arch}, expected backbone/${name}`)
    }
    let cin = 3
    let idx = 0
    const layers: (ConvLayer | PoolLayer)[] = []
    const grab = (key: string, size: number[]): Float32Array => {
      const block = blocks.get(key)
      if (!block) throw new Error(`${filePath}: missing block ${key}`)
      const expected = size.reduce((a, b) => a * b, 1)
      if (block.length !== expected) {
        throw new Error(`${filePath}: block ${key} holds ${block.length} values, expected ${expected}`)
      }
      return block
    }
    for (const spec of arch.layers) {
      if (spec === 'M') {
        layers.push({ kind: 'pool' })
        continue
      }
      const cout = spec
      layers.push({
        kind: 'conv',
        weight: tf.tensor4d(grab(`conv${idx}/weight`, [3, 3, cin, cout]), [3, 3, cin, cout]),
        bias: tf.tensor1d(grab(`conv${idx}/bias`, [cout])),
        bnGamma: tf.tensor1d(grab(`bn${idx}/gamma`, [cout])),
        bnBeta: tf.tensor1d(grab(`bn${idx}/beta`, [cout])),
        bnMean: tf.tensor1d(grab(`bn${idx}/mean`, [cout])),
        bnVar: tf.tensor1d(grab(`bn${idx}/variance`, [cout])),
      })
      cin = cout
      idx += 1
    }
    return new Backbone(name, layers)
  }

  /** HWC float input -> HWC float feature map at the tap point. */
  extract(pixels: Float32Array, resolution: number): { height: number; width: number; depth: number; data: Float32Array } {
    if (resolution % this.stride !== 0) {
      throw new Error(`resolution ${resolution} not divisible by backbone stride ${this.stride}`)
    }
    const out = tf.tidy(() => {
      let x = tf.tensor4d(pixels, [1, resolution, resolution, 3])
      for (const layer of this.layers) {
        if (layer.kind === 'pool') {
          x = tf.maxPool(x, 2, 2, 'same')
        } else {
          x = tf.conv2d(x, layer.weight, 1, 'same')
          x = tf.add(x, layer.bias)
          x = tf.batchNorm(x, layer.bnMean, layer.bnVar, layer.bnBeta, layer.bnGamma, 1e-5)
          x = tf.relu(x)
        }
      }
      return x
    })
    const side = resolution / this.stride
    const data = out.dataSync() as Float32Array
    out.dispose()
    return { height: side, width: side, depth: this.depth, data: new Float32Array(data) }
  }

  dispose(): void {
    for (const layer of this.layers) {
      if (layer.kind === 'conv') {
        layer.weight.dispose()
        layer.bias.dispose()
        layer.bnGamma.dispose()
        layer.bnBeta.dispose()
        layer.bnMean.dispose()
        layer.bnVar.dispose()
      }
    }
  }
}

export function backboneNames(): string[] {
  return Object.keys(ARCHS)
}

const CONTAINER_MAGIC = 'PCULM001'

function readContainer(filePath: string): { header: any; blocks: Map<string, Float32Array> } {
  const raw = fs.readFileSync(filePath)
  if (raw.length < 12 || raw.toString('ascii', 0, 8) !== CONTAINER_MAGIC) {
    throw new Error(`${filePath}: not a ${CONTAINER_MAGIC} container`)
  }
  const headLen = raw.readUInt32LE(8)
  const header = JSON.parse(raw.toString('utf-8', 12, 12 + headLen))
  let offset = 12 + headLen
  const blocks = new Map<string, Float32Array>()
  for (const spec of header.blocks ?? []) {
    const count = (spec.shape as number[]).reduce((a: number, b: number) => a * b, 1)
    const values = new Float32Array(count)
    for (let i = 0; i < count; i++) values[i] = raw.readFloatLE(offset + 4 * i)
    blocks.set(spec.name, values)
    offset += 4 * count
  }
  if (offset !== raw.length) {
    throw new Error(`${filePath}: ${raw.length - offset} bytes beyond the declared blocks`)
  }
  return { header, blocks }
}

let backendReady: Promise<string> | null = null

/** Initialize the wasm backend, falling back to plain cpu. */
export function initBackend(prefer: 'wasm' | 'cpu' = 'wasm'): Promise<string> {
  if (!backendReady) {
    backendReady = (async () => {
      if (prefer === 'wasm') {
        try {
          const wasm = await import('@tensorflow/tfjs-backend-wasm')
          const { createRequire } = await import('node:module')
          const require = createRequire(import.meta.url)
          const wasmDir = require
            .resolve('@tensorflow/tfjs-backend-wasm/dist/tfjs-backend-wasm.wasm')
            .replace(/tfjs-backend-wasm\.wasm$/, '')
          wasm.setWasmPaths(wasmDir)
          if (await tf.setBackend('wasm')) {
            await tf.ready()
            return tf.getBackend()
          }
        } catch (err) {
          console.error(`wasm backend unavailable (${(err as Error).message}); using cpu`)
        }
      }
      await tf.setBackend('cpu')
      await tf.ready()
      return tf.getBackend()
    })()
  }
  return backendReady
}
