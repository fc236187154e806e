/** Fixed entity-to-color bijection for highlight rendering. */

export const ENTITY_TYPES = [
  "edition",
  "product",
  "update",
  "vendor",
  "version",
] as const;

export type EntityType = (typeof ENTITY_TYPES)[number];

/** Vendor is green and version purple (product orange); all five are distinct. */
export const ENTITY_COLORS: Readonly<Record<EntityType, string>> = {
  vendor: "#2e7d32",
  product: "#ef6c00",
  version: "#6a1b9a",
  edition: "#1565c0",
  update: "#ad1457",
};

export function colorFor(entity: string): string | null {
  return (ENTITY_COLORS as Record<string, string>)[entity] ?? null;
}
