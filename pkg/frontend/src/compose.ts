// Pure caption-composition and diff helpers, kept free of DOM so the
// round-trip properties are unit-testable.

import type { AttributeSchema } from "./api.js";

/**
 * Assemble a caption from toggled attribute names using the
 * server-provided clause phrasings: the neutral subject sentence first,
 * then one clause per toggled attribute in schema order. The server
 * parses these sentences back verbatim, so the round trip is exact.
 */
export function composeCaption(
  schema: AttributeSchema,
  toggles: Set<string>,
  variant = 0,
): string {
  const parts = [schema.neutral];
  for (const entry of schema.attributes) {
    if (toggles.has(entry.name)) {
      parts.push(entry.phrasings[variant % entry.phrasings.length]);
    }
  }
  return parts.join(" ");
}

/**
 * Attribute names that must be disabled given the current toggles
 * (mutually exclusive with an active one).
 */
export function blockedToggles(
  schema: AttributeSchema,
  toggles: Set<string>,
): Set<string> {
  const blocked = new Set<string>();
  for (const [a, b] of schema.exclusive_pairs) {
    if (toggles.has(a)) blocked.add(b);
    if (toggles.has(b)) blocked.add(a);
  }
  return blocked;
}

/** XOR of requested and recovered attribute maps. */
export function attributeXor(
  requested: Record<string, boolean>,
  recovered: Record<string, boolean>,
): Record<string, boolean> {
  const out: Record<string, boolean> = {};
  for (const name of Object.keys(requested)) {
    out[name] = requested[name] !== Boolean(recovered[name]);
  }
  return out;
}

export function diffMatches(
  reportedDiff: Record<string, boolean>,
  requested: Record<string, boolean>,
  recovered: Record<string, boolean>,
): boolean {
  const expected = attributeXor(requested, recovered);
  return Object.keys(expected).every((n) => expected[n] === reportedDiff[n]);
}
