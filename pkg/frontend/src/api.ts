// Typed client for the planner service. All model math happens server-side;
// every risk figure shown in the UI originates from one of these calls.

export interface FloatMap {
    b64: string;
    shape: number[];
}

export interface StudySummary {
    id: string;
    label: number | null;
    has_targets: boolean;
    resolution: number;
    meta: Record<string, unknown>;
    thumbnail_png_b64: string;
}

export interface PathDescription {
    points: [number, number][];
    gap_spans: [number, number][];
}

export interface StudyDetail {
    id: string;
    resolution: number;
    label: number | null;
    meta: { plan?: Record<string, PathDescription[]>; [key: string]: unknown };
    views: Record<string, { pre_png_b64: string; params_b64: string; params_shape: number[] }>;
}

export interface PredictViewOutput {
    post_png_b64: string;
    scar_b64: string;
    scar_shape: number[];
}

export interface PredictResponse {
    risk: number;
    model_version: Record<string, string>;
    views: Record<string, PredictViewOutput>;
}

export interface OptimizeResponse {
    risks: number[];
    running_best: number[];
    best_step: number;
    best_risk: number;
    no_improvement: boolean;
    final_params: Record<string, FloatMap>;
    last_params: Record<string, FloatMap>;
    diff_maps: Record<string, FloatMap>;
    model_version: Record<string, string>;
}

export interface OptimizeRequest {
    study_id?: string;
    params?: Record<string, FloatMap>;
    anchor?: Record<string, FloatMap>;
    config?: { max_steps?: number; eta?: number; lambda_reg?: number };
}

export class ServiceError extends Error {
    constructor(public status: number, message: string) {
        super(message);
    }
}

export function decodeF32(map: FloatMap): Float32Array {
    const raw = atob(map.b64);
    const bytes = new Uint8Array(raw.length);
    for (let i = 0; i < raw.length; i++) bytes[i] = raw.charCodeAt(i);
    const view = new DataView(bytes.buffer);
    const out = new Float32Array(raw.length / 4);
    for (let i = 0; i < out.length; i++) out[i] = view.getFloat32(i * 4, true);
    return out;
}

export function encodeF32(arr: Float32Array): string {
    const bytes = new Uint8Array(arr.length * 4);
    const view = new DataView(bytes.buffer);
    for (let i = 0; i < arr.length; i++) view.setFloat32(i * 4, arr[i], true);
    let raw = "";
    const chunk = 0x8000;
    for (let i = 0; i < bytes.length; i += chunk) {
        raw += String.fromCharCode(...bytes.subarray(i, i + chunk));
    }
    return btoa(raw);
}

async function parse<T>(resp: Response): Promise<T> {
    if (!resp.ok) {
        let message = resp.statusText;
        try {
            const body = await resp.json();
            if (body && typeof body.error === "string") message = body.error;
        } catch {
            // non-JSON error body; keep the status text
        }
        throw new ServiceError(resp.status, message);
    }
    return resp.json() as Promise<T>;
}

export class PlannerClient {
    constructor(private baseUrl: string, private fetchFn: typeof fetch = fetch) {}

    async health(): Promise<{ status: string; models_loaded: boolean }> {
        return parse(await this.fetchFn(`${this.baseUrl}/healthz`));
    }

    async listStudies(): Promise<StudySummary[]> {
        const body = await parse<{ studies: StudySummary[] }>(
            await this.fetchFn(`${this.baseUrl}/studies`));
        return body.studies;
    }

    async getStudy(id: string): Promise<StudyDetail> {
        return parse(await this.fetchFn(`${this.baseUrl}/study/${id}`));
    }

    async predict(body: { study_id?: string; study?: unknown },
                  signal?: AbortSignal): Promise<PredictResponse> {
        return parse(await this.fetchFn(`${this.baseUrl}/predict`, {
            method: "POST",
            headers: { "Content-Type": "application/json" },
            body: JSON.stringify(body),
            signal,
        }));
    }

    async predictParams(studyId: string, params: Record<string, FloatMap>,
                        signal?: AbortSignal): Promise<PredictResponse> {
        // a zero-step optimize evaluates the supplied parameters without
        // needing the full study payload on the wire
        const trace = await this.optimize(
            { study_id: studyId, params, config: { max_steps: 0 } }, signal);
        return {
            risk: trace.risks[0],
            model_version: trace.model_version,
            views: {},
        };
    }

    async optimize(body: OptimizeRequest, signal?: AbortSignal): Promise<OptimizeResponse> {
        return parse(await this.fetchFn(`${this.baseUrl}/optimize`, {
            method: "POST",
            headers: { "Content-Type": "application/json" },
            body: JSON.stringify(body),
            signal,
        }));
    }
}
