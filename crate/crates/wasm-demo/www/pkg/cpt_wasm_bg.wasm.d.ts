/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const labelCurves: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
export const reservoirInclusion: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const valueWeightedPath: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
export const __wbindgen_export_0: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
