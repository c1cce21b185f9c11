// Height colormap for the depth view.  The only numeric work the UI does.

const ANCHORS: Array<[number, number, number]> = [
  [68, 1, 84],
  [65, 68, 135],
  [42, 120, 142],
  [34, 168, 132],
  [122, 209, 81],
  [253, 231, 37],
];

export function colormap(t: number): [number, number, number] {
  const clamped = Math.min(1, Math.max(0, t));
  const scaled = clamped * (ANCHORS.length - 1);
  const lo = Math.min(Math.floor(scaled), ANCHORS.length - 2);
  const frac = scaled - lo;
  const a = ANCHORS[lo];
  const b = ANCHORS[lo + 1];
  return [
    Math.round(a[0] + frac * (b[0] - a[0])),
    Math.round(a[1] + frac * (b[1] - a[1])),
    Math.round(a[2] + frac * (b[2] - a[2])),
  ];
}

/**
 * RGBA pixels for a depth grid; nearer pixels map to the low end of the
 * colormap, background stays dark.  min/max depths pin the endpoints.
 */
export function depthToRgba(
  depth: number[],
  mask: number[],
  width: number,
  height: number,
  depthMin: number,
  depthMax: number,
): Uint8ClampedArray<ArrayBuffer> {
  const out = new Uint8ClampedArray(new ArrayBuffer(width * height * 4));
  const range = depthMax - depthMin;
  for (let i = 0; i < width * height; i++) {
    const o = i * 4;
    if (!mask[i]) {
      out[o] = 24;
      out[o + 1] = 24;
      out[o + 2] = 28;
      out[o + 3] = 255;
      continue;
    }
    const t = range > 0 ? (depth[i] - depthMin) / range : 0.5;
    const [r, g, b] = colormap(1 - t);
    out[o] = r;
    out[o + 1] = g;
    out[o + 2] = b;
    out[o + 3] = 255;
  }
  return out;
}
