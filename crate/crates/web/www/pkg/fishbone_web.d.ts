/* tslint:disable */
/* eslint-disable */

export class Demo {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Triangle indices, three per face.
     */
    indices(): Uint32Array;
    /**
     * `shape` is "tube" or "y".
     */
    constructor(shape: string);
    /**
     * Current vertex positions as xyz triples.
     */
    positions(): Float32Array;
    reset(): void;
    rib_closed(id: number): boolean;
    rib_count(): number;
    rib(id: number): Float32Array;
    /**
     * Pose from rest: scale rib `rib` by `scale`, bend the main branch by
     * `bend` radians about its middle and twist it by up to `twist`.
     */
    set_pose(rib: number, scale: number, bend: number, twist: number): void;
    spine(): Float32Array;
    /**
     * Parent key of every spine key, -1 for the root.
     */
    spine_parents(): Int32Array;
    vertex_count(): number;
    /**
     * Advance a wind simulation by `frames` frames, starting one from the
     * current pose if none runs or the strength changed.
     */
    wind_step(strength: number, frames: number): number;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demo_free: (a: number, b: number) => void;
    readonly demo_indices: (a: number) => [number, number];
    readonly demo_new: (a: number, b: number) => [number, number, number];
    readonly demo_positions: (a: number) => [number, number];
    readonly demo_reset: (a: number) => void;
    readonly demo_rib: (a: number, b: number) => [number, number];
    readonly demo_rib_closed: (a: number, b: number) => number;
    readonly demo_rib_count: (a: number) => number;
    readonly demo_set_pose: (a: number, b: number, c: number, d: number, e: number) => [number, number];
    readonly demo_spine: (a: number) => [number, number];
    readonly demo_spine_parents: (a: number) => [number, number];
    readonly demo_vertex_count: (a: number) => number;
    readonly demo_wind_step: (a: number, b: number, c: number) => [number, number, number];
    readonly __externref_table_alloc: () => number;
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
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
