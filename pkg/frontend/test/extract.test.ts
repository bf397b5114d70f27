import { execFileSync } from 'node:child_process'
import * as fs from 'node:fs'
import * as os from 'node:os'
import * as path from 'node:path'
import { afterAll, describe, expect, it } from 'vitest'
import { extract, readLabelsCsv } from '../src/extract.js'
import { readFeatureFile, readManifest } from '../src/featurefile.js'
import { writePng } from './image.test.js'

const tmp = fs.mkdtempSync(path.join(os.tmpdir(), 'extract-'))
afterAll(() => fs.rmSync(tmp, { recursive: true, force: true }))

function makeImages(dir: string, count: number, size = 260): void {
  fs.mkdirSync(dir, { recursive: true })
  for (let i = 0; i < count; i++) {
    writePng(path.join(dir, `img_${String(i).padStart(2, '0')}.png`), size + i, size, (x, y) => [
      (x * 3 + i * 40) % 256,
      (y * 5 + i * 11) % 256,
      (x + y + i * 77) % 256,
    ])
  }
}

const quiet = () => {}

describe('extract with the tiny backbone', () => {
  it('writes feature files, applies labels, and skips unreadable images', async () => {
    const images = path.join(tmp, 'tiny-images')
    makeImages(images, 3, 40)
    fs.writeFileSync(path.join(images, 'broken.png'), Buffer.from('not an image'))
    const labelsCsv = path.join(tmp, 'labels.csv')
    fs.writeFileSync(labelsCsv, 'id,label\nimg_00,0\nimg_01,1\n')

    const out = path.join(tmp, 'tiny-out')
    const warnings: string[] = []
    const result = await extract({
      imagesDir: images,
      outDir: out,
      backbone: 'tiny',
      resolution: 32,
      split: 'test',
      labelsCsv,
      log: (m) => warnings.push(m),
    })
    expect(result.skipped).toEqual(['broken.png'])
    expect(result.written).toHaveLength(3)
    expect(warnings.some((w) => w.includes('broken.png'))).toBe(true)

    const manifest = readManifest(result.manifestPath)
    expect(manifest.depth).toBe(32)
    expect(manifest.items.map((i) => i.id)).toEqual(['img_00', 'img_01', 'img_02'])
    expect(manifest.items[0].label).toBe(0)
    expect(manifest.items[1].label).toBe(1)
    expect(manifest.items[2].label).toBeUndefined()
    expect(manifest.items.every((i) => i.split === 'test')).toBe(true)

    const fmap = readFeatureFile(path.join(out, manifest.items[0].path))
    expect([fmap.height, fmap.width, fmap.depth]).toEqual([16, 16, 32])
  })

  it('hard-errors when an existing manifest has a different depth', async () => {
    const images = path.join(tmp, 'depth-images')
    makeImages(images, 1, 40)
    const out = path.join(tmp, 'depth-out')
    fs.mkdirSync(out, { recursive: true })
    fs.writeFileSync(
      path.join(out, 'manifest.json'),
      JSON.stringify({ version: 1, depth: 512, items: [] }),
    )
    await expect(
      extract({ imagesDir: images, outDir: out, backbone: 'tiny', resolution: 32, log: quiet }),
    ).rejects.toThrow(/depth 512/)
  })

  it('parses label CSVs strictly', () => {
    const file = path.join(tmp, 'bad.csv')
    fs.writeFileSync(file, 'img_00,-3\n')
    expect(() => readLabelsCsv(file)).toThrow(/nonnegative/)
  })
})

describe('bridge conformance (10-image folder, default settings)', () => {
  it('emits 14x14x512 files that validate in the primary reader and are byte-identical across runs', async () => {
    const images = path.join(tmp, 'conformance-images')
    makeImages(images, 10)

    const out1 = path.join(tmp, 'run1')
    const out2 = path.join(tmp, 'run2')
    const r1 = await extract({ imagesDir: images, outDir: out1, log: quiet })
    const r2 = await extract({ imagesDir: images, outDir: out2, log: quiet })
    expect(r1.written).toHaveLength(10)

    const manifest = readManifest(r1.manifestPath)
    expect(manifest.depth).toBe(512)
    for (const item of manifest.items) {
      const fmap = readFeatureFile(path.join(out1, item.path))
      expect([fmap.height, fmap.width, fmap.depth]).toEqual([14, 14, 512])
    }

    // byte-identical across the two runs
    for (const rel of r1.written) {
      const a = fs.readFileSync(path.join(out1, rel))
      const b = fs.readFileSync(path.join(out2, rel))
      expect(a.equals(b)).toBe(true)
    }

    // the primary reader accepts every emitted file
    const script = [
      'import sys',
      'from partmint.dataio import load_features',
      'feats, ids, labels = load_features(sys.argv[1])',
      'print(feats.shape)',
    ].join('\n')
    const shape = execFileSync('python3', ['-c', script, r1.manifestPath], {
      encoding: 'utf-8',
    }).trim()
    expect(shape).toBe('(10, 14, 14, 512)')
  })
})
