/** The indexed-PNG label palette, identical to the masks the service exports.
 *
 * Colour i is built by interleaving the bits of i across the three channels,
 * so overlay colours in the viewer always match the archive files.
 */

export function labelColor(index: number): [number, number, number] {
  let value = index;
  let r = 0;
  let g = 0;
  let b = 0;
  for (let bit = 0; bit < 8; bit++) {
    r |= ((value >> 0) & 1) << (7 - bit);
    g |= ((value >> 1) & 1) << (7 - bit);
    b |= ((value >> 2) & 1) << (7 - bit);
    value >>= 3;
  }
  return [r, g, b];
}

export function palette(): Uint8Array {
  const table = new Uint8Array(256 * 3);
  for (let i = 0; i < 256; i++) {
    const [r, g, b] = labelColor(i);
    table[i * 3] = r;
    table[i * 3 + 1] = g;
    table[i * 3 + 2] = b;
  }
  return table;
}
