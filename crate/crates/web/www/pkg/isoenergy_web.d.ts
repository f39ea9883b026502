/* tslint:disable */
/* eslint-disable */

/**
 * Curvatures of the level set through `p`.
 */
export function curvature(p1: number, p2: number, p3: number): string;

/**
 * `|mu_hat(r omega)|` for `1 <= r <= r_max` with the unit-constant bound.
 */
export function decay(a: number, wx: number, wy: number, wz: number, r_max: number): string;

/**
 * Zero-curvature curve and tangential points of `{e = a}`.
 */
export function gamma(a: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly curvature: (a: number, b: number, c: number) => [number, number, number, number];
    readonly decay: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly gamma: (a: number) => [number, number, number, number];
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
