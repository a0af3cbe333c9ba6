// Dump tone-numbered pinyin readings for the CJK Unified Ideographs block.
// Needs `npm install pinyin-pro`. Output: one line per character,
// `<char>\t<reading1>,<reading2>,...`, first reading = default.
//
// Usage: node dump_readings.js > raw_readings.tsv
const { pinyin } = require('pinyin-pro');

const lines = [];
for (let cp = 0x4e00; cp <= 0x9fff; cp++) {
  const ch = String.fromCodePoint(cp);
  const r = pinyin(ch, { toneType: 'num', multiple: true, type: 'array', nonZh: 'removed' });
  if (!r || r.length === 0) continue;
  const readings = r.filter((s) => /^[a-zü]+[0-4]$/.test(s));
  if (readings.length === 0) continue;
  lines.push(ch + '\t' + readings.join(','));
}
process.stdout.write(lines.join('\n') + '\n');
