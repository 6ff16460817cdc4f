/* tslint:disable */
/* eslint-disable */

export class Demo {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Fraction of pixels where the CRF labeling matches ground truth.
     */
    crf_accuracy(alpha: number, iters: number, higher_order: boolean): number;
    /**
     * CRF labeling of the same maps.
     */
    crf_rgba(alpha: number, iters: number, higher_order: boolean): Uint8Array;
    height(): number;
    image_rgba(): Uint8Array;
    constructor(seed: bigint, classes: number);
    /**
     * Most probable label of the prior maps, shaded by its probability.
     * `alpha` < 0 shows the two-label foreground prior instead.
     */
    prior_rgba(alpha: number): Uint8Array;
    /**
     * Present foreground classes, comma separated.
     */
    tags(): string;
    truth_rgba(): Uint8Array;
    width(): number;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demo_free: (a: number, b: number) => void;
    readonly demo_crf_accuracy: (a: number, b: number, c: number, d: number) => [number, number, number];
    readonly demo_crf_rgba: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly demo_height: (a: number) => number;
    readonly demo_image_rgba: (a: number) => [number, number];
    readonly demo_new: (a: bigint, b: number) => [number, number, number];
    readonly demo_prior_rgba: (a: number, b: number) => [number, number, number, number];
    readonly demo_tags: (a: number) => [number, number];
    readonly demo_truth_rgba: (a: number) => [number, number];
    readonly demo_width: (a: number) => number;
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
