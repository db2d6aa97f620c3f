// Converts the `ipa-dict` npm package (webpack-bundled Map<word, [pron...]>)
// back into the upstream one-file-per-language TSV layout.
//
//   npm pack ipa-dict && tar xzf ipa-dict-*.tgz
//   node scripts/ipa-dict-from-npm.js package/lib data/
const fs = require("fs");
const path = require("path");

const [libDir, outDir] = process.argv.slice(2);
if (!libDir || !outDir) {
  console.error("usage: ipa-dict-from-npm.js <package/lib> <out-dir>");
  process.exit(2);
}
fs.mkdirSync(outDir, { recursive: true });
for (const file of fs.readdirSync(libDir).filter((f) => f.endsWith(".js")).sort()) {
  const map = require(path.resolve(libDir, file));
  const lines = [];
  for (const [word, prons] of map.entries()) {
    // the bundler split the upstream field on ","; rejoining restores "/a/, /b/"
    lines.push(`${word}\t${prons.join(",")}`);
  }
  const tag = file.replace(/\.js$/, "");
  fs.writeFileSync(path.join(outDir, `${tag}.txt`), lines.join("\n") + "\n");
  console.log(`${tag}\t${lines.length}`);
}
