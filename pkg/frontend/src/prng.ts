/** Small deterministic PRNG (sfc32) for seeded weight initialization. */

export type Rng = () => number

export function sfc32(seed: number): Rng {
  let a = 0x9e3779b9 ^ seed
  let b = 0x243f6a88 ^ (seed << 13)
  let c = 0xb7e15162 ^ (seed >>> 7)
  let d = seed | 1
  for (let i = 0; i < 12; i++) next() // scramble the seed words
  function next(): number {
    a >>>= 0; b >>>= 0; c >>>= 0; d >>>= 0
    let t = (a + b) | 0
    a = b ^ (b >>> 9)
    b = (c + (c << 3)) | 0
    c = (c << 21) | (c >>> 11)
    d = (d + 1) | 0
    t = (t + d) | 0
    c = (c + t) | 0
    return (t >>> 0) / 4294967296
  }
  return next
}

/** Standard normal via Box-Muller (deterministic; IEEE doubles). */
export function gaussian(rng: Rng): () => number {
  let spare: number | null = null
  return () => {
    if (spare !== null) {
      const v = spare
      spare = null
      return v
    }
    let u = 0
    while (u === 0) u = rng()
    const v = rng()
    const r = Math.sqrt(-2.0 * Math.log(u))
    spare = r * Math.sin(2.0 * Math.PI * v)
    return r * Math.cos(2.0 * Math.PI * v)
  }
}
