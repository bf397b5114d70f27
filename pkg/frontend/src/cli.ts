#!/usr/bin/env node
/** Command-line wrapper around the extractor. */

import yargs from 'yargs'
import { hideBin } from 'yargs/helpers'
import { backboneNames } from './backbone.js'
import { extract } from './extract.js'

async function main(): Promise<number> {
  const argv = await yargs(hideBin(process.argv))
    .scriptName('partmint-extract')
    .usage('$0 --images DIR --out DIR [options]')
    .option('images', { type: 'string', demandOption: true, describe: 'folder of PNG/JPEG images' })
    .option('out', { type: 'string', demandOption: true, describe: 'output dataset folder' })
    .option('backbone', {
      type: 'string',
      default: 'vgg19-bn',
      choices: backboneNames(),
      describe: 'feature extractor architecture',
    })
    .option('resolution', { type: 'number', default: 224, describe: 'square input resolution' })
    .option('split', { type: 'string', default: 'train', choices: ['train', 'test'] })
    .option('labels-csv', { type: 'string', describe: 'CSV of id,label rows' })
    .option('seed', { type: 'number', default: 0, describe: 'weight seed when no --weights given' })
    .option('weights', { type: 'string', describe: 'backbone weight container (PCULM001)' })
    .option('backend', { type: 'string', default: 'wasm', choices: ['wasm', 'cpu'] })
    .strict()
    .help()
    .parse()

  try {
    const result = await extract({
      imagesDir: argv.images,
      outDir: argv.out,
      backbone: argv.backbone,
      resolution: argv.resolution,
      split: argv.split as 'train' | 'test',
      labelsCsv: argv['labels-csv'],
      seed: argv.seed,
      weights: argv.weights,
      backend: argv.backend as 'wasm' | 'cpu',
    })
    console.error(`manifest -> ${result.manifestPath}`)
    if (result.skipped.length > 0) {
      console.error(`skipped ${result.skipped.length} unreadable file(s)`)
    }
    return 0
  } catch (err) {
    console.error(`partmint-extract: error: ${(err as Error).message}`)
    return 2
  }
}

main().then((code) => {
  process.exitCode = code
})
