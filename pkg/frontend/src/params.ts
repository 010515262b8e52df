/** Parameter-vector helpers shared by the session state and the API layer. */

export interface ParamVector {
  beta: number[];
  psi: number[];
  theta: number[];
  delta: number[];
}

export type ParamGroup = keyof ParamVector;

export const PARAM_GROUPS: ParamGroup[] = ["beta", "psi", "theta", "delta"];

export function cloneParams(p: ParamVector): ParamVector {
  return {
    beta: [...p.beta],
    psi: [...p.psi],
    theta: [...p.theta],
    delta: [...p.delta],
  };
}

export function paramsEqual(a: ParamVector, b: ParamVector): boolean {
  return PARAM_GROUPS.every(
    (g) => a[g].length === b[g].length && a[g].every((v, i) => v === b[g][i]),
  );
}

/** Linear per-component blend; t=0 gives a, t=1 gives b. */
export function interpolateParams(
  a: ParamVector,
  b: ParamVector,
  t: number,
): ParamVector {
  const blend = (x: number[], y: number[]) =>
    x.map((v, i) => (1 - t) * v + t * y[i]);
  return {
    beta: blend(a.beta, b.beta),
    psi: blend(a.psi, b.psi),
    theta: blend(a.theta, b.theta),
    delta: blend(a.delta, b.delta),
  };
}

/** Stable JSON form matching the service/CLI params schema. */
export function paramsToJson(p: ParamVector): string {
  return (
    JSON.stringify({ beta: p.beta, psi: p.psi, theta: p.theta, delta: p.delta }) +
    "\n"
  );
}

/** FNV-1a hash of the prompt, used to stamp export filenames. */
export function promptHash(text: string): string {
  let h = 0x811c9dc5;
  for (let i = 0; i < text.length; i++) {
    h ^= text.charCodeAt(i);
    h = Math.imul(h, 0x01000193) >>> 0;
  }
  return h.toString(16).padStart(8, "0");
}
