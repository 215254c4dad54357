/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_demo_free: (a: number, b: number) => void;
export const demo_indices: (a: number) => [number, number];
export const demo_new: (a: number, b: number) => [number, number, number];
export const demo_positions: (a: number) => [number, number];
export const demo_reset: (a: number) => void;
export const demo_rib: (a: number, b: number) => [number, number];
export const demo_rib_closed: (a: number, b: number) => number;
export const demo_rib_count: (a: number) => number;
export const demo_set_pose: (a: number, b: number, c: number, d: number, e: number) => [number, number];
export const demo_spine: (a: number) => [number, number];
export const demo_spine_parents: (a: number) => [number, number];
export const demo_vertex_count: (a: number) => number;
export const demo_wind_step: (a: number, b: number, c: number) => [number, number, number];
export const __externref_table_alloc: () => number;
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_start: () => void;
