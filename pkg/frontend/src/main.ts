// DOM wiring for the what-if planner: load a study, inspect the six views,
// brush parameter maps, watch the predicted risk respond, and run masked
// optimization with an original/optimized/diff comparison.

import { FloatMap, OptimizeResponse, PlannerClient, decodeF32 } from "./api.js";
import { silhouetteFromRgba } from "./brush.js";
import { makeDebouncer } from "./debounce.js";
import { CHANNELS, SessionState, VIEWS, ViewName } from "./state.js";
import { channelSlice, chartGeometry, divergingRgba, grayRgba, pngUrl } from "./render.js";

const SCALE = 4;
const DEBOUNCE_MS = 300;

const client = new PlannerClient("");
const state = new SessionState();

const el = <T extends HTMLElement>(id: string): T => {
    const node = document.getElementById(id);
    if (!node) throw new Error(`missing element #${id}`);
    return node as T;
};

const banner = el<HTMLDivElement>("banner");
const riskBadge = el<HTMLDivElement>("risk-badge");
const viewGrid = el<HTMLDivElement>("view-grid");
const historyCanvas = el<HTMLCanvasElement>("history-chart");
const traceCanvas = el<HTMLCanvasElement>("trace-chart");
const comparison = el<HTMLDivElement>("comparison");

const preImages = new Map<ViewName, HTMLImageElement>();
const viewCanvases = new Map<ViewName, HTMLCanvasElement>();
let selectedView: ViewName = VIEWS[0];
let baselineAnchor: Record<string, FloatMap> | null = null;

function showBanner(text: string, kind: "error" | "hint" = "error"): void {
    banner.textContent = text;
    banner.className = `banner ${kind}`;
    banner.style.display = "block";
    setTimeout(() => { banner.style.display = "none"; }, 4000);
}

function setRisk(risk: number | null): void {
    if (risk === null) {
        riskBadge.textContent = "risk: --";
        riskBadge.style.background = "#555";
        return;
    }
    riskBadge.textContent = `risk: ${risk.toFixed(3)}`;
    const hue = Math.round((1 - risk) * 120);
    riskBadge.style.background = `hsl(${hue}, 70%, 35%)`;
    state.pushRisk(risk);
    drawSeries(historyCanvas, state.riskHistory, "#6cf");
}

function drawSeries(canvas: HTMLCanvasElement, series: number[], color: string,
                    overlay?: number[]): void {
    const ctx = canvas.getContext("2d")!;
    ctx.fillStyle = "#111";
    ctx.fillRect(0, 0, canvas.width, canvas.height);
    const trace = (values: number[], stroke: string) => {
        const pts = chartGeometry(values, canvas.width, canvas.height);
        if (pts.length === 0) return;
        ctx.strokeStyle = stroke;
        ctx.lineWidth = 1.5;
        ctx.beginPath();
        ctx.moveTo(pts[0][0], pts[0][1]);
        for (const [x, y] of pts) ctx.lineTo(x, y);
        ctx.stroke();
    };
    trace(series, color);
    if (overlay) trace(overlay, "#fc6");
}

function drawView(view: ViewName): void {
    const canvas = viewCanvases.get(view);
    const img = preImages.get(view);
    if (!canvas || !img || !state.resolution) return;
    const ctx = canvas.getContext("2d")!;
    ctx.imageSmoothingEnabled = false;
    ctx.drawImage(img, 0, 0, canvas.width, canvas.height);
    const res = state.resolution;
    const values = channelSlice(state.params(view), res * res, state.brush.channel);
    const overlay = new OffscreenCanvas(res, res);
    const octx = overlay.getContext("2d")!;
    octx.putImageData(new ImageData(grayRgba(values), res, res), 0, 0);
    ctx.globalAlpha = 0.45;
    ctx.drawImage(overlay, 0, 0, canvas.width, canvas.height);
    ctx.globalAlpha = 1.0;
    canvas.classList.toggle("selected", view === selectedView);
}

function drawAllViews(): void {
    for (const view of VIEWS) drawView(view);
}

const riskRefresh = makeDebouncer(DEBOUNCE_MS, async (signal) => {
    if (!state.studyId) return;
    try {
        const resp = await client.predictParams(state.studyId, state.paramsPayload(), signal);
        setRisk(resp.risk);
    } catch (err) {
        if ((err as Error).name !== "AbortError") {
            showBanner(`prediction failed: ${(err as Error).message}`);
        }
    }
});

function attachBrush(view: ViewName, canvas: HTMLCanvasElement): void {
    let painting = false;
    const paint = (ev: MouseEvent) => {
        const rect = canvas.getBoundingClientRect();
        const col = ((ev.clientX - rect.left) / rect.width) * state.resolution;
        const row = ((ev.clientY - rect.top) / rect.height) * state.resolution;
        const result = state.brushStroke(view, row, col);
        if (result.changed > 0) {
            drawView(view);
            riskRefresh.fire();
        } else if (result.blockedBySilhouette > 0) {
            showBanner("stroke outside the chamber silhouette; nothing painted", "hint");
        }
    };
    canvas.addEventListener("mousedown", (ev) => {
        selectedView = view;
        drawAllViews();
        painting = true;
        paint(ev);
    });
    canvas.addEventListener("mousemove", (ev) => { if (painting) paint(ev); });
    window.addEventListener("mouseup", () => { painting = false; });
}

async function loadStudy(id: string): Promise<void> {
    try {
        const detail = await client.getStudy(id);
        state.loadStudy(detail);
        baselineAnchor = state.paramsPayload();
        viewGrid.innerHTML = "";
        preImages.clear();
        viewCanvases.clear();
        comparison.innerHTML = "";
        for (const view of VIEWS) {
            const cell = document.createElement("div");
            cell.className = "view-cell";
            const label = document.createElement("div");
            label.className = "view-label";
            label.textContent = view.replace("_", " ");
            const canvas = document.createElement("canvas");
            canvas.width = detail.resolution * SCALE;
            canvas.height = detail.resolution * SCALE;
            cell.append(label, canvas);
            viewGrid.append(cell);
            viewCanvases.set(view, canvas);
            attachBrush(view, canvas);

            const img = new Image();
            img.onload = () => {
                preImages.set(view, img);
                const probe = new OffscreenCanvas(detail.resolution, detail.resolution);
                const pctx = probe.getContext("2d")!;
                pctx.drawImage(img, 0, 0);
                const rgba = pctx.getImageData(0, 0, detail.resolution, detail.resolution);
                state.setSilhouette(view, silhouetteFromRgba(
                    rgba.data, detail.resolution * detail.resolution));
                drawView(view);
            };
            img.src = pngUrl(detail.views[view].pre_png_b64);
        }
        setRisk(null);
        const pred = await client.predict({ study_id: id });
        setRisk(pred.risk);
    } catch (err) {
        showBanner(`load failed: ${(err as Error).message}`);
    }
}

function buildComparison(trace: OptimizeResponse): void {
    comparison.innerHTML = "";
    const res = state.resolution;
    const pixels = res * res;
    const rows: Array<[string, Float32Array, boolean]> = [
        ["original", state.params(selectedView), false],
        ["optimized", decodeF32(trace.final_params[selectedView]), false],
        ["diff", decodeF32(trace.diff_maps[selectedView]), true],
    ];
    let scale = 0;
    for (const v of rows[2][1]) scale = Math.max(scale, Math.abs(v));
    for (const [name, data, diverging] of rows) {
        const rowEl = document.createElement("div");
        rowEl.className = "cmp-row";
        const label = document.createElement("div");
        label.className = "cmp-label";
        label.textContent = `${name} (${selectedView.replace("_", " ")})`;
        rowEl.append(label);
        for (let c = 0; c < CHANNELS.length; c++) {
            const canvas = document.createElement("canvas");
            canvas.width = res * 2;
            canvas.height = res * 2;
            canvas.title = CHANNELS[c];
            const slice = channelSlice(data, pixels, c);
            const rgba = diverging ? divergingRgba(slice, scale || undefined) : grayRgba(slice);
            const off = new OffscreenCanvas(res, res);
            off.getContext("2d")!.putImageData(new ImageData(rgba, res, res), 0, 0);
            const ctx = canvas.getContext("2d")!;
            ctx.imageSmoothingEnabled = false;
            ctx.drawImage(off, 0, 0, canvas.width, canvas.height);
            rowEl.append(canvas);
        }
        comparison.append(rowEl);
    }
}

async function runOptimize(): Promise<void> {
    if (!state.studyId) return;
    const steps = Number(el<HTMLInputElement>("steps").value) || 20;
    const button = el<HTMLButtonElement>("optimize-btn");
    button.disabled = true;
    try {
        const body = {
            study_id: state.studyId,
            params: state.paramsPayload(),
            ...(baselineAnchor ? { anchor: baselineAnchor } : {}),
            config: { max_steps: steps },
        };
        const trace = await client.optimize(body);
        state.lastTrace = trace;
        drawSeries(traceCanvas, trace.risks, "#6cf", trace.running_best);
        buildComparison(trace);
        el<HTMLButtonElement>("apply-btn").disabled = false;
        showBanner(`optimized: risk ${trace.risks[0].toFixed(3)} -> ` +
            `${trace.best_risk.toFixed(3)} (best step ${trace.best_step})`, "hint");
    } catch (err) {
        // working params stay untouched on failure
        showBanner(`optimize failed: ${(err as Error).message}`);
    } finally {
        button.disabled = false;
    }
}

function applyOptimized(): void {
    if (!state.lastTrace) return;
    state.applyOptimized(state.lastTrace.final_params);
    drawAllViews();
    riskRefresh.fire();
    showBanner("optimized parameters applied to the working copy", "hint");
}

async function init(): Promise<void> {
    const selector = el<HTMLSelectElement>("study-select");
    try {
        const studies = await client.listStudies();
        selector.innerHTML = "";
        for (const s of studies) {
            const opt = document.createElement("option");
            opt.value = s.id;
            opt.textContent = s.label === null ? s.id : `${s.id} (y=${s.label})`;
            selector.append(opt);
        }
    } catch (err) {
        showBanner(`service unreachable, retry shortly: ${(err as Error).message}`);
        setTimeout(init, 3000);
        return;
    }
    el<HTMLButtonElement>("load-btn").onclick = () => loadStudy(selector.value);
    el<HTMLButtonElement>("optimize-btn").onclick = runOptimize;
    el<HTMLButtonElement>("apply-btn").onclick = applyOptimized;
    el<HTMLButtonElement>("undo-btn").onclick = () => {
        if (state.undo()) {
            drawAllViews();
            riskRefresh.fire();
        }
    };
    const channelSel = el<HTMLSelectElement>("channel-select");
    CHANNELS.forEach((name, i) => {
        const opt = document.createElement("option");
        opt.value = String(i);
        opt.textContent = name;
        channelSel.append(opt);
    });
    channelSel.onchange = () => {
        state.brush.channel = Number(channelSel.value);
        drawAllViews();
    };
    el<HTMLInputElement>("brush-radius").oninput = (ev) => {
        state.brush.radius = Number((ev.target as HTMLInputElement).value);
    };
    el<HTMLInputElement>("brush-value").oninput = (ev) => {
        state.brush.value = Number((ev.target as HTMLInputElement).value);
    };
    if (selector.value) await loadStudy(selector.value);
}

init();
