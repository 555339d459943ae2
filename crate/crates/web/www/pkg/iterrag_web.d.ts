/* tslint:disable */
/* eslint-disable */

/**
 * Indexes a JSONL corpus and returns the top `k` passages for `query`.
 */
export function bm25_search(corpus_jsonl: string, query: string, k: number): string;

/**
 * Splits one model turn into reasoning and marker values.
 * An empty `triggers` string means the default trigger terms.
 */
export function parse_turn(raw: string, triggers: string): string;

/**
 * Scores a prediction against golden aliases given as a JSON array
 * (a bare string is taken as a single alias).
 */
export function score_answer(prediction: string, golden_json: string): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly bm25_search: (a: number, b: number, c: number, d: number, e: number) => [number, number];
    readonly parse_turn: (a: number, b: number, c: number, d: number) => [number, number];
    readonly score_answer: (a: number, b: number, c: number, d: number) => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
