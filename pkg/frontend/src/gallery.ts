/**
 * Thumbnail grid over GET /api/instances: filter bar, quadrant badges,
 * pagination. Every field shown on a card comes straight from the service
 * payload; the gallery never derives quadrants or metrics itself.
 */

import { ApiClient, ApiError } from './api.js';
import type { GalleryFilter, InstancePage, InstanceSummary, Quadrant, Split } from './api.js';
import { el, replaceChildrenOf } from './dom.js';
import type { ViewState } from './state.js';
import { QUADRANT_LABELS } from './strings.js';

const SPLITS: readonly Split[] = ['train', 'validation', 'test'];
const QUADRANTS: readonly Quadrant[] = ['RA', 'UA', 'RIA', 'UIA'];

export interface GalleryCallbacks {
  onOpen(id: string): void;
}

export class GalleryView {
  readonly root: HTMLElement;
  private readonly api: ApiClient;
  private readonly state: ViewState;
  private readonly callbacks: GalleryCallbacks;
  private readonly banner: HTMLElement;
  private readonly grid: HTMLElement;
  private readonly pager: HTMLElement;
  private readonly meta: HTMLElement;
  private renderToken = 0;
  private lastPage: InstancePage | null = null;

  constructor(api: ApiClient, state: ViewState, callbacks: GalleryCallbacks) {
    this.api = api;
    this.state = state;
    this.callbacks = callbacks;
    this.banner = el('div', { class: 'banner hidden', role: 'alert' });
    this.grid = el('div', { class: 'card-grid' });
    this.pager = el('div', { class: 'pager' });
    this.meta = el('span', { class: 'gallery-meta' });
    this.root = el('section', { class: 'gallery' }, [
      this.buildFilterBar(),
      this.banner,
      this.grid,
      this.pager,
      this.buildLegend(),
    ]);
  }

  private buildFilterBar(): HTMLElement {
    const splitSelect = el('select', { 'data-role': 'filter-split' });
    splitSelect.append(el('option', { value: '' }, ['all splits']));
    for (const split of SPLITS) {
      splitSelect.append(el('option', { value: split }, [split]));
    }
    const quadrantSelect = el('select', { 'data-role': 'filter-quadrant' });
    quadrantSelect.append(el('option', { value: '' }, ['all quadrants']));
    for (const quadrant of QUADRANTS) {
      quadrantSelect.append(el('option', { value: quadrant }, [quadrant]));
    }
    const annotatedSelect = el('select', { 'data-role': 'filter-annotated' });
    annotatedSelect.append(el('option', { value: '' }, ['all instances']));
    annotatedSelect.append(el('option', { value: 'true' }, ['annotated']));
    annotatedSelect.append(el('option', { value: 'false' }, ['not annotated']));

    const apply = () => {
      const filter: GalleryFilter = {};
      if (splitSelect.value) filter.split = splitSelect.value as Split;
      if (quadrantSelect.value) filter.quadrant = quadrantSelect.value as Quadrant;
      if (annotatedSelect.value) filter.annotated = annotatedSelect.value === 'true';
      if (this.state.setFilter(filter)) {
        void this.refresh();
      }
    };
    splitSelect.addEventListener('change', apply);
    quadrantSelect.addEventListener('change', apply);
    annotatedSelect.addEventListener('change', apply);

    return el('div', { class: 'filter-bar' }, [
      splitSelect,
      quadrantSelect,
      annotatedSelect,
      this.meta,
    ]);
  }

  private buildLegend(): HTMLElement {
    const entries = QUADRANTS.map((q) =>
      el('span', { class: `legend-entry` }, [
        el('span', { class: `badge quadrant-${q.toLowerCase()}` }, [q]),
        ` ${QUADRANT_LABELS[q] ?? q}`,
      ]),
    );
    entries.push(
      el('span', { class: 'legend-entry' }, [
        el('span', { class: 'badge quadrant-none' }, ['?']),
        ' no verdict yet',
      ]),
    );
    return el('div', { class: 'legend' }, entries);
  }

  /** Fetch the current page and redraw. Safe to call repeatedly. */
  async refresh(): Promise<void> {
    const token = ++this.renderToken;
    const snap = this.state.snapshot();
    let page: InstancePage;
    try {
      page = await this.api.listInstances(snap.filter, snap.page, snap.pageSize);
    } catch (err) {
      if (token === this.renderToken) this.showError(err);
      return;
    }
    if (token !== this.renderToken) return;
    this.banner.classList.add('hidden');
    this.lastPage = page;
    this.renderPage(page, token);
  }

  private showError(err: unknown): void {
    const message =
      err instanceof ApiError ? `${err.code}: ${err.message}` : String(err);
    const retry = el('button', { type: 'button' }, ['Retry']);
    retry.addEventListener('click', () => void this.refresh());
    replaceChildrenOf(this.banner, [`Could not reach the service. ${message} `, retry]);
    this.banner.classList.remove('hidden');
    // The previous grid stays on screen so nothing the annotator was looking
    // at disappears while the service is down.
  }

  private renderPage(page: InstancePage, token: number): void {
    this.meta.textContent =
      `${page.total} instance${page.total === 1 ? '' : 's'} | model v${page.model_version}`;
    if (page.items.length === 0) {
      replaceChildrenOf(this.grid, [
        el('p', { class: 'empty-state' }, ['No instances match the current filter.']),
      ]);
    } else {
      replaceChildrenOf(
        this.grid,
        page.items.map((item) => this.buildCard(item)),
      );
      void this.fillThumbnails(page.items, token);
    }
    this.renderPager(page);
  }

  private buildCard(item: InstanceSummary): HTMLElement {
    const img = el('img', {
      class: 'thumb',
      alt: `instance ${item.id}`,
      'data-thumb-for': item.id,
    });
    const badges = el('div', { class: 'badge-row' }, [
      quadrantBadge(item.quadrant),
      el('span', { class: `badge ${item.correct ? 'pred-correct' : 'pred-wrong'}` }, [
        item.correct ? 'correct' : 'wrong',
      ]),
    ]);
    if (item.annotated) {
      badges.append(el('span', { class: 'badge tag-annotated' }, ['annotated']));
    }
    if (item.has_mask) {
      badges.append(el('span', { class: 'badge tag-mask' }, ['mask']));
    }
    if (item.likert !== null) {
      badges.append(el('span', { class: 'badge tag-likert' }, [`M5 ${item.likert}`]));
    }
    const card = el('article', { class: 'card', 'data-id': item.id, tabindex: '0' }, [
      img,
      el('div', { class: 'card-title' }, [
        item.id,
        el('span', { class: 'card-sub' }, [` ${item.split} | y=${item.label} yhat=${item.prediction}`]),
      ]),
      badges,
    ]);
    const open = () => this.callbacks.onOpen(item.id);
    card.addEventListener('click', open);
    card.addEventListener('keydown', (ev) => {
      if (ev.key === 'Enter') open();
    });
    return card;
  }

  /** Thumbnails come from the detail endpoint; fill them in after the grid
   *  paints so a slow image never blocks the page of badges. */
  private async fillThumbnails(items: readonly InstanceSummary[], token: number): Promise<void> {
    await Promise.all(
      items.map(async (item) => {
        try {
          const detail = await this.api.getInstance(item.id);
          if (token !== this.renderToken) return;
          const img = this.grid.querySelector(
            `img[data-thumb-for="${item.id}"]`,
          ) as HTMLImageElement | null;
          if (img) img.src = `data:image/png;base64,${detail.overlay_png}`;
        } catch {
          /* leave the placeholder; the card is still navigable */
        }
      }),
    );
  }

  private renderPager(page: InstancePage): void {
    const prev = el('button', { type: 'button' }, ['Prev']);
    const next = el('button', { type: 'button' }, ['Next']);
    if (page.page <= 1) prev.setAttribute('disabled', '');
    if (page.page >= page.pages) next.setAttribute('disabled', '');
    prev.addEventListener('click', () => {
      if (this.state.setPage(page.page - 1)) void this.refresh();
    });
    next.addEventListener('click', () => {
      if (this.state.setPage(page.page + 1)) void this.refresh();
    });
    replaceChildrenOf(this.pager, [
      prev,
      el('span', { class: 'page-label' }, [`page ${page.page} of ${page.pages}`]),
      next,
    ]);
  }

  /** Last successfully rendered page, for tests and the app shell. */
  get currentPage(): InstancePage | null {
    return this.lastPage;
  }
}

export function quadrantBadge(quadrant: Quadrant | null): HTMLElement {
  if (quadrant === null) {
    return el('span', { class: 'badge quadrant-none', title: 'no verdict yet' }, ['?']);
  }
  return el(
    'span',
    { class: `badge quadrant-${quadrant.toLowerCase()}`, title: QUADRANT_LABELS[quadrant] ?? quadrant },
    [quadrant],
  );
}
