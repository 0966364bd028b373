// Builds a 10k-digit MNIST subset in IDX format from the `mnist` npm package.
//
//   npm pack mnist && tar xzf mnist-*.tgz
//   node scripts/mnist_subset_from_npm.js package/dist/mnist.js data/mnist-subset
//
// Digits are interleaved with a fixed LCG shuffle, then split 8000 train / 2000 test.
const fs = require('fs');
const path = require('path');
const zlib = require('zlib');

const [bundle, outDir] = process.argv.slice(2);
global.window = {};
require(path.resolve(bundle));
const mnist = window.mnist;

const samples = [];
for (let d = 0; d < 10; d++) {
  for (let i = 0; i < mnist[d].length; i++) {
    samples.push({ label: d, pixels: mnist[d].get(i) });
  }
}

let state = 20190601n;
const next = () => {
  state = (state * 6364136223846793005n + 1442695040888963407n) & ((1n << 64n) - 1n);
  return Number(state >> 33n);
};
for (let i = samples.length - 1; i > 0; i--) {
  const j = next() % (i + 1);
  [samples[i], samples[j]] = [samples[j], samples[i]];
}

function write(prefix, set) {
  const img = Buffer.alloc(16 + set.length * 784);
  img.writeUInt32BE(0x803, 0);
  img.writeUInt32BE(set.length, 4);
  img.writeUInt32BE(28, 8);
  img.writeUInt32BE(28, 12);
  const lbl = Buffer.alloc(8 + set.length);
  lbl.writeUInt32BE(0x801, 0);
  lbl.writeUInt32BE(set.length, 4);
  set.forEach((s, k) => {
    s.pixels.forEach((v, p) => { img[16 + k * 784 + p] = Math.round(v * 255); });
    lbl[8 + k] = s.label;
  });
  fs.writeFileSync(path.join(outDir, `${prefix}-images-idx3-ubyte.gz`), zlib.gzipSync(img, { level: 9 }));
  fs.writeFileSync(path.join(outDir, `${prefix}-labels-idx1-ubyte.gz`), zlib.gzipSync(lbl, { level: 9 }));
}

fs.mkdirSync(outDir, { recursive: true });
write('train', samples.slice(0, 8000));
write('t10k', samples.slice(8000));
