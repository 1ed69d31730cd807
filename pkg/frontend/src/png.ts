/**
 * Minimal paletted PNG codec.
 *
 * Masks travel between the studio and the service as paletted PNGs (one byte
 * per label). Encoding uses stored (uncompressed) deflate blocks so no
 * compression library is needed; decoding handles exactly that subset, which
 * keeps export/import round-trips lossless and synchronous.
 */

const SIGNATURE = [0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a];

const CRC_TABLE = (() => {
  const table = new Uint32Array(256);
  for (let n = 0; n < 256; n++) {
    let c = n;
    for (let k = 0; k < 8; k++) {
      c = c & 1 ? 0xedb88320 ^ (c >>> 1) : c >>> 1;
    }
    table[n] = c >>> 0;
  }
  return table;
})();

function crc32(bytes: Uint8Array): number {
  let c = 0xffffffff;
  for (let i = 0; i < bytes.length; i++) {
    c = CRC_TABLE[(c ^ bytes[i]) & 0xff] ^ (c >>> 8);
  }
  return (c ^ 0xffffffff) >>> 0;
}

function adler32(bytes: Uint8Array): number {
  let a = 1;
  let b = 0;
  for (let i = 0; i < bytes.length; i++) {
    a = (a + bytes[i]) % 65521;
    b = (b + a) % 65521;
  }
  return ((b << 16) | a) >>> 0;
}

function u32be(value: number): number[] {
  return [(value >>> 24) & 0xff, (value >>> 16) & 0xff, (value >>> 8) & 0xff, value & 0xff];
}

function chunk(type: string, payload: Uint8Array): Uint8Array {
  const head = new Uint8Array(4 + payload.length);
  for (let i = 0; i < 4; i++) head[i] = type.charCodeAt(i);
  head.set(payload, 4);
  const out = new Uint8Array(8 + payload.length + 4);
  out.set(u32be(payload.length), 0);
  out.set(head, 4);
  out.set(u32be(crc32(head)), 8 + payload.length);
  return out;
}

/** zlib stream made of stored deflate blocks. */
function zlibStored(raw: Uint8Array): Uint8Array {
  const blocks: number[] = [0x78, 0x01];
  for (let offset = 0; offset < raw.length; offset += 65535) {
    const size = Math.min(65535, raw.length - offset);
    const final = offset + size >= raw.length ? 1 : 0;
    blocks.push(final, size & 0xff, size >>> 8, ~size & 0xff, (~size >>> 8) & 0xff);
    for (let i = 0; i < size; i++) blocks.push(raw[offset + i]);
  }
  const checksum = adler32(raw);
  blocks.push(...u32be(checksum));
  return new Uint8Array(blocks);
}

export const DEFAULT_PALETTE: Array<[number, number, number]> = [
  [64, 64, 64],
  [224, 172, 124],
  [96, 56, 24],
  [40, 90, 180],
  [200, 40, 40],
  [40, 180, 90],
  [230, 220, 60],
  [160, 60, 200],
];

export function encodePalettedPng(
  labels: Uint8Array,
  width: number,
  height: number,
  palette: Array<[number, number, number]> = DEFAULT_PALETTE,
): Uint8Array {
  if (labels.length !== width * height) {
    throw new Error(`raster size ${labels.length} != ${width}x${height}`);
  }
  const ihdr = new Uint8Array([...u32be(width), ...u32be(height), 8, 3, 0, 0, 0]);

  const plte = new Uint8Array(256 * 3);
  for (let i = 0; i < 256; i++) {
    const [r, g, b] = i < palette.length ? palette[i] : [i, i, i];
    plte[i * 3] = r;
    plte[i * 3 + 1] = g;
    plte[i * 3 + 2] = b;
  }

  const raw = new Uint8Array((width + 1) * height);
  for (let y = 0; y < height; y++) {
    raw[y * (width + 1)] = 0; // filter: none
    raw.set(labels.subarray(y * width, (y + 1) * width), y * (width + 1) + 1);
  }

  const parts = [
    new Uint8Array(SIGNATURE),
    chunk("IHDR", ihdr),
    chunk("PLTE", plte),
    chunk("IDAT", zlibStored(raw)),
    chunk("IEND", new Uint8Array(0)),
  ];
  const total = parts.reduce((n, p) => n + p.length, 0);
  const out = new Uint8Array(total);
  let offset = 0;
  for (const part of parts) {
    out.set(part, offset);
    offset += part.length;
  }
  return out;
}

export interface DecodedMask {
  width: number;
  height: number;
  labels: Uint8Array;
}

/** Decode a paletted PNG produced by {@link encodePalettedPng}. */
export function decodePalettedPng(bytes: Uint8Array): DecodedMask {
  for (let i = 0; i < 8; i++) {
    if (bytes[i] !== SIGNATURE[i]) throw new Error("not a PNG");
  }
  let offset = 8;
  let width = 0;
  let height = 0;
  let idat: number[] = [];
  let colorType = -1;
  while (offset < bytes.length) {
    const length =
      (bytes[offset] << 24) | (bytes[offset + 1] << 16) | (bytes[offset + 2] << 8) | bytes[offset + 3];
    const type = String.fromCharCode(...bytes.subarray(offset + 4, offset + 8));
    const payload = bytes.subarray(offset + 8, offset + 8 + length);
    if (type === "IHDR") {
      width = (payload[0] << 24) | (payload[1] << 16) | (payload[2] << 8) | payload[3];
      height = (payload[4] << 24) | (payload[5] << 16) | (payload[6] << 8) | payload[7];
      colorType = payload[9];
      if (payload[8] !== 8) throw new Error("only 8-bit palettes are supported");
    } else if (type === "IDAT") {
      idat.push(...payload);
    } else if (type === "IEND") {
      break;
    }
    offset += 12 + length;
  }
  if (colorType !== 3) throw new Error("not a paletted PNG");
  const raw = inflateStored(new Uint8Array(idat));
  const labels = new Uint8Array(width * height);
  for (let y = 0; y < height; y++) {
    if (raw[y * (width + 1)] !== 0) {
      throw new Error("unsupported PNG row filter; re-export the mask");
    }
    labels.set(raw.subarray(y * (width + 1) + 1, (y + 1) * (width + 1)), y * width);
  }
  return { width, height, labels };
}

/** Inflate a zlib stream consisting only of stored blocks. */
function inflateStored(stream: Uint8Array): Uint8Array {
  let pos = 2; // skip zlib header
  const out: number[] = [];
  for (;;) {
    const header = stream[pos];
    const type = (header >> 1) & 3;
    if (type !== 0) {
      throw new Error("compressed PNG data; only stored blocks are supported");
    }
    const size = stream[pos + 1] | (stream[pos + 2] << 8);
    const start = pos + 5;
    for (let i = 0; i < size; i++) out.push(stream[start + i]);
    pos = start + size;
    if (header & 1) break;
  }
  return new Uint8Array(out);
}
