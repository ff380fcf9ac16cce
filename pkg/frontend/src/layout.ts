/** Self-contained force-directed layout, deterministic for a given seed.
 *
 * Fruchterman-Reingold style: repulsion between all node pairs,
 * attraction along edges, linear cooling. Nodes start on a phyllotaxis
 * spiral (stable under insertion order) with seeded jitter, so the same
 * graph and seed always land on identical coordinates. */

export interface LayoutLink {
  source: string;
  target: string;
  weight: number;
}

export interface Point {
  x: number;
  y: number;
}

export interface LayoutOptions {
  width: number;
  height: number;
  seed: number;
  iterations?: number;
}

/** Deterministic 32-bit PRNG (mulberry32). */
export function mulberry32(seed: number): () => number {
  let state = seed >>> 0;
  return () => {
    state = (state + 0x6d2b79f5) >>> 0;
    let t = state;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

const GOLDEN_ANGLE = Math.PI * (3 - Math.sqrt(5));

export function forceLayout(
  nodeIds: string[],
  links: LayoutLink[],
  options: LayoutOptions,
): Map<string, Point> {
  const ids = [...nodeIds].sort();
  const n = ids.length;
  const positions = new Map<string, Point>();
  if (n === 0) return positions;
  const { width, height, seed } = options;
  const iterations = options.iterations ?? 150;
  const cx = width / 2;
  const cy = height / 2;
  const rng = mulberry32(seed);

  const index = new Map<string, number>();
  ids.forEach((id, i) => index.set(id, i));
  const x = new Float64Array(n);
  const y = new Float64Array(n);
  const spacing = Math.min(width, height) / (2 * Math.sqrt(n + 1));
  for (let i = 0; i < n; i++) {
    const radius = spacing * Math.sqrt(i + 0.5);
    const angle = i * GOLDEN_ANGLE;
    x[i] = cx + radius * Math.cos(angle) + (rng() - 0.5) * spacing * 0.5;
    y[i] = cy + radius * Math.sin(angle) + (rng() - 0.5) * spacing * 0.5;
  }

  const edges: Array<[number, number, number]> = [];
  for (const link of links) {
    const a = index.get(link.source);
    const b = index.get(link.target);
    if (a !== undefined && b !== undefined && a !== b) {
      edges.push([a, b, Math.max(link.weight, 0.01)]);
    }
  }

  const area = width * height;
  const k = 0.6 * Math.sqrt(area / n);
  const dx = new Float64Array(n);
  const dy = new Float64Array(n);
  let temperature = Math.min(width, height) / 8;
  const cooling = temperature / (iterations + 1);

  for (let iter = 0; iter < iterations; iter++) {
    dx.fill(0);
    dy.fill(0);
    for (let i = 0; i < n; i++) {
      for (let j = i + 1; j < n; j++) {
        let ddx = (x[i] as number) - (x[j] as number);
        let ddy = (y[i] as number) - (y[j] as number);
        let dist = Math.hypot(ddx, ddy);
        if (dist < 1e-6) {
          // deterministic tie-break nudge
          ddx = 0.01 * ((i - j) % 3);
          ddy = 0.01;
          dist = Math.hypot(ddx, ddy);
        }
        const repulsion = (k * k) / dist;
        dx[i] = (dx[i] as number) + (ddx / dist) * repulsion;
        dy[i] = (dy[i] as number) + (ddy / dist) * repulsion;
        dx[j] = (dx[j] as number) - (ddx / dist) * repulsion;
        dy[j] = (dy[j] as number) - (ddy / dist) * repulsion;
      }
    }
    for (const [a, b, weight] of edges) {
      const ddx = (x[a] as number) - (x[b] as number);
      const ddy = (y[a] as number) - (y[b] as number);
      const dist = Math.max(Math.hypot(ddx, ddy), 1e-6);
      const attraction = ((dist * dist) / k) * weight;
      dx[a] = (dx[a] as number) - (ddx / dist) * attraction;
      dy[a] = (dy[a] as number) - (ddy / dist) * attraction;
      dx[b] = (dx[b] as number) + (ddx / dist) * attraction;
      dy[b] = (dy[b] as number) + (ddy / dist) * attraction;
    }
    for (let i = 0; i < n; i++) {
      const fx = dx[i] as number;
      const fy = dy[i] as number;
      const disp = Math.hypot(fx, fy);
      let px = x[i] as number;
      let py = y[i] as number;
      if (disp > 0) {
        const step = Math.min(disp, temperature);
        px += (fx / disp) * step;
        py += (fy / disp) * step;
      }
      // gentle centering keeps disconnected components on screen
      x[i] = px + (cx - px) * 0.01;
      y[i] = py + (cy - py) * 0.01;
    }
    temperature = Math.max(temperature - cooling, 0.5);
  }

  const margin = 12;
  for (let i = 0; i < n; i++) {
    positions.set(ids[i] as string, {
      x: Math.min(Math.max(x[i] ?? cx, margin), width - margin),
      y: Math.min(Math.max(y[i] ?? cy, margin), height - margin),
    });
  }
  return positions;
}
