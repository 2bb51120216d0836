// Client-side session: the working copy of parameter maps, the undo stack,
// and the append-only risk history. No model math lives here.

import { FloatMap, OptimizeResponse, StudyDetail, decodeF32, encodeF32 } from "./api.js";
import { StampResult, stampCircle } from "./brush.js";

export const VIEWS = [
    "anterior", "posterior", "left_lateral", "right_lateral", "superior", "inferior",
] as const;
export type ViewName = (typeof VIEWS)[number];

export const CHANNELS = ["duration", "force", "temperature", "power"] as const;

export const UNDO_LIMIT = 50; // must stay >= 20

export interface BrushSettings {
    channel: number;
    radius: number;
    value: number;
}

interface Snapshot {
    view: ViewName;
    params: Float32Array;
}

export class SessionState {
    studyId = "";
    resolution = 0;
    workingParams = new Map<ViewName, Float32Array>();
    silhouettes = new Map<ViewName, Uint8Array>();
    riskHistory: number[] = [];
    lastTrace: OptimizeResponse | null = null;
    brush: BrushSettings = { channel: 0, radius: 2, value: 1.0 };
    private undoStack: Snapshot[] = [];

    loadStudy(detail: StudyDetail): void {
        this.studyId = detail.id;
        this.resolution = detail.resolution;
        this.workingParams.clear();
        this.silhouettes.clear();
        this.undoStack = [];
        this.riskHistory = [];
        this.lastTrace = null;
        for (const view of VIEWS) {
            const body = detail.views[view];
            this.workingParams.set(view, decodeF32(
                { b64: body.params_b64, shape: body.params_shape }));
        }
    }

    setSilhouette(view: ViewName, silhouette: Uint8Array): void {
        this.silhouettes.set(view, silhouette);
    }

    params(view: ViewName): Float32Array {
        const arr = this.workingParams.get(view);
        if (!arr) throw new Error(`no study loaded (view ${view})`);
        return arr;
    }

    get undoDepth(): number {
        return this.undoStack.length;
    }

    private pushUndo(view: ViewName): void {
        this.undoStack.push({ view, params: this.params(view).slice() });
        if (this.undoStack.length > UNDO_LIMIT) this.undoStack.shift();
    }

    brushStroke(view: ViewName, row: number, col: number): StampResult {
        const arr = this.params(view);
        const before = arr.slice();
        const result = stampCircle(
            arr, this.resolution, this.resolution, this.brush.channel,
            row, col, this.brush.radius, this.brush.value,
            this.silhouettes.get(view));
        if (result.changed > 0) {
            this.undoStack.push({ view, params: before });
            if (this.undoStack.length > UNDO_LIMIT) this.undoStack.shift();
        }
        return result;
    }

    /** Replace the working maps with optimizer output (undoable per view). */
    applyOptimized(params: Record<string, FloatMap>): void {
        for (const view of VIEWS) {
            const body = params[view];
            if (!body) continue;
            this.pushUndo(view);
            this.workingParams.set(view, decodeF32(body));
        }
    }

    undo(): boolean {
        const snap = this.undoStack.pop();
        if (!snap) return false;
        this.workingParams.set(snap.view, snap.params);
        return true;
    }

    pushRisk(risk: number): void {
        this.riskHistory.push(risk); // append-only within a session
    }

    paramsPayload(): Record<string, FloatMap> {
        const out: Record<string, FloatMap> = {};
        for (const view of VIEWS) {
            out[view] = {
                b64: encodeF32(this.params(view)),
                shape: [4, this.resolution, this.resolution],
            };
        }
        return out;
    }
}
