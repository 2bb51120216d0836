// Pixel-buffer rendering helpers, kept DOM-free so they unit-test in node.

/** One channel of a flat [4*H*W] map. */
export function channelSlice(params: Float32Array, pixels: number, channel: number): Float32Array {
    return params.subarray(channel * pixels, (channel + 1) * pixels);
}

/** Grayscale heatmap of values in [0,1] as RGBA bytes. */
export function grayRgba(values: Float32Array): Uint8ClampedArray<ArrayBuffer> {
    const out = new Uint8ClampedArray(new ArrayBuffer(values.length * 4));
    for (let i = 0; i < values.length; i++) {
        const g = Math.round(Math.min(Math.max(values[i], 0), 1) * 255);
        out[i * 4] = g;
        out[i * 4 + 1] = g;
        out[i * 4 + 2] = g;
        out[i * 4 + 3] = 255;
    }
    return out;
}

/**
 * Diverging palette for signed difference maps (optimized minus original):
 * negative (original > optimized) shades red, positive shades blue, zero is
 * neutral white. `scale` defaults to the max absolute value.
 */
export function divergingRgba(diff: Float32Array, scale?: number): Uint8ClampedArray<ArrayBuffer> {
    let s = scale ?? 0;
    if (s === 0) {
        for (let i = 0; i < diff.length; i++) s = Math.max(s, Math.abs(diff[i]));
    }
    const out = new Uint8ClampedArray(new ArrayBuffer(diff.length * 4));
    for (let i = 0; i < diff.length; i++) {
        const v = s > 0 ? Math.min(Math.max(diff[i] / s, -1), 1) : 0;
        let r = 255, g = 255, b = 255;
        if (v < 0) {
            g = Math.round(255 * (1 + v));
            b = g;
        } else if (v > 0) {
            r = Math.round(255 * (1 - v));
            g = r;
        }
        out[i * 4] = r;
        out[i * 4 + 1] = g;
        out[i * 4 + 2] = b;
        out[i * 4 + 3] = 255;
    }
    return out;
}

export function pngUrl(b64: string): string {
    return `data:image/png;base64,${b64}`;
}

/** Risk series scaled into canvas coordinates; pure geometry for testing. */
export function chartGeometry(
    series: number[], width: number, height: number, pad = 6,
): [number, number][] {
    if (series.length === 0) return [];
    const xSpan = Math.max(series.length - 1, 1);
    return series.map((risk, i) => [
        pad + (i / xSpan) * (width - 2 * pad),
        pad + (1 - Math.min(Math.max(risk, 0), 1)) * (height - 2 * pad),
    ]);
}
