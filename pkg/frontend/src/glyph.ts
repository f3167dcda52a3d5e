/** Deterministic geometric glyphs for items without thumbnails, so synthetic
 * corpora stay visually distinguishable. Same item_id, same pixels, always. */

const SHAPES = ["circle", "square", "triangle", "diamond", "ring"] as const;
export type GlyphShape = (typeof SHAPES)[number];

/** FNV-1a 32-bit hash; stable across sessions and platforms. */
export function hashId(id: string): number {
  let h = 0x811c9dc5;
  for (let i = 0; i < id.length; i++) {
    h ^= id.charCodeAt(i);
    h = Math.imul(h, 0x01000193);
  }
  return h >>> 0;
}

export function glyphShape(id: string): GlyphShape {
  return SHAPES[(hashId(id) >>> 8) % SHAPES.length];
}

function shapeElement(shape: GlyphShape, c: number, r: number, fill: string): string {
  switch (shape) {
    case "circle":
      return `<circle cx="${c}" cy="${c}" r="${r}" fill="${fill}"/>`;
    case "square": {
      const side = r * 1.6;
      const off = c - side / 2;
      return `<rect x="${off}" y="${off}" width="${side}" height="${side}" fill="${fill}"/>`;
    }
    case "triangle":
      return `<polygon points="${c},${c - r} ${c - r},${c + r * 0.8} ${c + r},${c + r * 0.8}" fill="${fill}"/>`;
    case "diamond":
      return `<polygon points="${c},${c - r} ${c + r},${c} ${c},${c + r} ${c - r},${c}" fill="${fill}"/>`;
    case "ring":
      return `<circle cx="${c}" cy="${c}" r="${r * 0.85}" fill="none" stroke="${fill}" stroke-width="${r * 0.45}"/>`;
  }
}

/** Inline SVG for one item. Hue, shape, and rotation all derive from the id. */
export function glyphSvg(id: string, size = 96): string {
  const h = hashId(id);
  const hue = h % 360;
  const shape = glyphShape(id);
  const rotation = (h >>> 16) % 360;
  const bg = `hsl(${(hue + 180) % 360} 30% 92%)`;
  const fill = `hsl(${hue} 65% 45%)`;
  const c = size / 2;
  const r = size * 0.3;
  return (
    `<svg xmlns="http://www.w3.org/2000/svg" width="${size}" height="${size}" ` +
    `viewBox="0 0 ${size} ${size}" role="img" aria-label="${id}">` +
    `<rect width="${size}" height="${size}" rx="${size * 0.1}" fill="${bg}"/>` +
    `<g transform="rotate(${rotation} ${c} ${c})">` +
    shapeElement(shape, c, r, fill) +
    `</g></svg>`
  );
}
