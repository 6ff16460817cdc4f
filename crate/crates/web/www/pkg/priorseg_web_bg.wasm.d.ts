/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_demo_free: (a: number, b: number) => void;
export const demo_crf_accuracy: (a: number, b: number, c: number, d: number) => [number, number, number];
export const demo_crf_rgba: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const demo_height: (a: number) => number;
export const demo_image_rgba: (a: number) => [number, number];
export const demo_new: (a: bigint, b: number) => [number, number, number];
export const demo_prior_rgba: (a: number, b: number) => [number, number, number, number];
export const demo_tags: (a: number) => [number, number];
export const demo_truth_rgba: (a: number) => [number, number];
export const demo_width: (a: number) => number;
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
