// Debounced async dispatch with supersession: a newer call cancels the
// pending timer and aborts any in-flight request.

export interface Debouncer {
    fire(): void;
    cancel(): void;
}

export function makeDebouncer(
    delayMs: number,
    action: (signal: AbortSignal) => Promise<void>,
): Debouncer {
    let timer: ReturnType<typeof setTimeout> | null = null;
    let inflight: AbortController | null = null;
    return {
        fire() {
            if (timer !== null) clearTimeout(timer);
            timer = setTimeout(() => {
                timer = null;
                inflight?.abort();
                inflight = new AbortController();
                const mine = inflight;
                action(mine.signal).catch((err) => {
                    if ((err as Error).name !== "AbortError") console.error(err);
                });
            }, delayMs);
        },
        cancel() {
            if (timer !== null) clearTimeout(timer);
            timer = null;
            inflight?.abort();
            inflight = null;
        },
    };
}
