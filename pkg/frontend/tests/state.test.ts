import { describe, expect, it } from "vitest";

import { decodeF32, encodeF32 } from "../src/api";
import { SessionState, UNDO_LIMIT, VIEWS } from "../src/state";
import type { StudyDetail } from "../src/api";

const RES = 8;

function fakeDetail(): StudyDetail {
    const views: StudyDetail["views"] = {};
    for (const view of VIEWS) {
        const params = new Float32Array(4 * RES * RES);
        params[0] = 0.5;
        views[view] = {
            pre_png_b64: "",
            params_b64: encodeF32(params),
            params_shape: [4, RES, RES],
        };
    }
    return { id: "demo", resolution: RES, label: null, meta: {}, views };
}

function loaded(): SessionState {
    const state = new SessionState();
    state.loadStudy(fakeDetail());
    return state;
}

describe("SessionState", () => {
    it("loads one working copy per view", () => {
        const state = loaded();
        expect(state.studyId).toBe("demo");
        for (const view of VIEWS) {
            expect(state.params(view).length).toBe(4 * RES * RES);
        }
    });

    it("stroke then undo restores the params bit for bit", () => {
        const state = loaded();
        const before = state.params("anterior").slice();
        const result = state.brushStroke("anterior", 4, 4);
        expect(result.changed).toBeGreaterThan(0);
        expect(state.params("anterior")).not.toEqual(before);
        expect(state.undo()).toBe(true);
        expect(Array.from(state.params("anterior"))).toEqual(Array.from(before));
    });

    it("a no-op stroke pushes nothing onto the undo stack", () => {
        const state = loaded();
        state.brush.radius = 0;
        state.brushStroke("anterior", 4, 4);
        expect(state.undoDepth).toBe(0);
        expect(state.undo()).toBe(false);
    });

    it("keeps at least twenty undo entries", () => {
        const state = loaded();
        expect(UNDO_LIMIT).toBeGreaterThanOrEqual(20);
        state.brush.radius = 1;
        for (let i = 0; i < UNDO_LIMIT + 10; i++) {
            state.brush.value = (i % 19) / 19 + 0.01;
            const r = state.brushStroke("anterior", 1 + (i % 6), 1 + ((i * 2) % 6));
            expect(r.changed).toBeGreaterThan(0);
        }
        expect(state.undoDepth).toBe(UNDO_LIMIT);
        let undone = 0;
        while (state.undo()) undone++;
        expect(undone).toBe(UNDO_LIMIT);
    });

    it("risk history is append-only", () => {
        const state = loaded();
        state.pushRisk(0.5);
        state.pushRisk(0.4);
        state.pushRisk(0.45);
        expect(state.riskHistory).toEqual([0.5, 0.4, 0.45]);
    });

    it("applyOptimized replaces maps and stays undoable", () => {
        const state = loaded();
        const before = state.params("anterior").slice();
        const optimized = new Float32Array(4 * RES * RES).fill(0.9);
        const payload: Record<string, { b64: string; shape: number[] }> = {};
        for (const view of VIEWS) {
            payload[view] = { b64: encodeF32(optimized), shape: [4, RES, RES] };
        }
        state.applyOptimized(payload);
        expect(state.params("anterior")[0]).toBeCloseTo(0.9, 6);
        for (let i = 0; i < VIEWS.length; i++) expect(state.undo()).toBe(true);
        expect(Array.from(state.params("anterior"))).toEqual(Array.from(before));
    });

    it("round-trips params through the request payload encoding", () => {
        const state = loaded();
        state.brushStroke("posterior", 3, 3);
        const payload = state.paramsPayload();
        expect(payload.posterior.shape).toEqual([4, RES, RES]);
        const decoded = decodeF32(payload.posterior);
        expect(Array.from(decoded)).toEqual(Array.from(state.params("posterior")));
    });
});
