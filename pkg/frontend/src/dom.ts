/**
 * Small DOM construction helpers. No framework: views build trees with `el`
 * and re-render by replacing children, which is plenty for a single-annotator
 * tool and keeps everything inspectable in tests.
 */

export type Child = Node | string;

export function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  children: readonly Child[] = [],
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) {
    node.setAttribute(key, value);
  }
  for (const child of children) {
    node.append(child);
  }
  return node;
}

export function clearChildren(node: Element): void {
  while (node.firstChild) {
    node.removeChild(node.firstChild);
  }
}

export function replaceChildrenOf(node: Element, children: readonly Child[]): void {
  clearChildren(node);
  for (const child of children) {
    node.append(child);
  }
}
