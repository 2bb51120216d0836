// Circular brush stamping on one parameter channel of a flat [4*H*W] map.

export interface StampResult {
    changed: number;
    blockedBySilhouette: number;
}

export function clamp01(v: number): number {
    return v < 0 ? 0 : v > 1 ? 1 : v;
}

/**
 * Paint `value` on `channel` at every pixel within `radius` of (row, col).
 * Pixels outside the chamber silhouette are left untouched and counted so
 * the caller can hint at the user. A non-positive radius changes nothing.
 */
export function stampCircle(
    params: Float32Array,
    height: number,
    width: number,
    channel: number,
    row: number,
    col: number,
    radius: number,
    value: number,
    silhouette?: Uint8Array,
): StampResult {
    const result: StampResult = { changed: 0, blockedBySilhouette: 0 };
    if (radius <= 0) return result;
    const v = clamp01(value);
    const r = Math.ceil(radius);
    const base = channel * height * width;
    for (let dy = -r; dy <= r; dy++) {
        for (let dx = -r; dx <= r; dx++) {
            if (dy * dy + dx * dx > radius * radius) continue;
            const y = Math.round(row) + dy;
            const x = Math.round(col) + dx;
            if (y < 0 || y >= height || x < 0 || x >= width) continue;
            const pixel = y * width + x;
            if (silhouette && silhouette[pixel] === 0) {
                result.blockedBySilhouette++;
                continue;
            }
            if (params[base + pixel] !== v) {
                params[base + pixel] = v;
                result.changed++;
            }
        }
    }
    return result;
}

/** Silhouette from a pre-image RGBA buffer: any visible (nonzero) pixel. */
export function silhouetteFromRgba(rgba: Uint8ClampedArray, pixels: number): Uint8Array {
    const out = new Uint8Array(pixels);
    for (let i = 0; i < pixels; i++) {
        out[i] = rgba[i * 4] || rgba[i * 4 + 1] || rgba[i * 4 + 2] ? 1 : 0;
    }
    return out;
}
