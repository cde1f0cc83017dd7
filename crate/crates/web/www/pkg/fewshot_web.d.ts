/* tslint:disable */
/* eslint-disable */

/**
 * Clean-selection probability over `points` evenly spaced noise rates in
 * `[0, 1]`, exact and simulated with `trials` draws each.
 */
export function clean_probability_curve(ways: number, points: number, trials: number, seed: number): string;

/**
 * Contrastive loss of a two-pair manifold as the positive partner of each
 * anchor rotates away from it by `angle` in `[0, pi]`. The two anchors sit
 * `separation` radians apart.
 */
export function contrastive_loss_curve(tau: number, separation: number, points: number): string;

/**
 * A five-class 2-D dataset with symmetric label noise and a BatMan batch
 * of `v` manifold samples drawn from it.
 */
export function manifold_demo(epsilon: number, seed: number, v: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly clean_probability_curve: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly contrastive_loss_curve: (a: number, b: number, c: number) => [number, number, number, number];
    readonly manifold_demo: (a: number, b: number, c: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
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
