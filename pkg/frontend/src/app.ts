/**
 * Composition root: owns the API client, the shared view state, and the three
 * views, and swaps them in and out of the main region. `mountApp` is the only
 * entry point; the browser bundle calls it on DOMContentLoaded.
 */

import { ApiClient } from './api.js';
import { el, replaceChildrenOf } from './dom.js';
import { GalleryView } from './gallery.js';
import { InstanceView } from './inspector.js';
import { JobsView } from './jobs.js';
import { ViewState } from './state.js';

const ANNOTATOR_KEY = 'gradia-annotator-id';

export class App {
  readonly root: HTMLElement;
  readonly state: ViewState;
  readonly gallery: GalleryView;
  readonly inspector: InstanceView;
  readonly jobs: JobsView;
  private readonly main: HTMLElement;
  private readonly annotatorInput: HTMLInputElement;

  constructor(root: HTMLElement, api: ApiClient) {
    this.root = root;
    this.state = new ViewState();
    this.state.confirmDiscard = () => ask('Discard unsaved mask edits?');

    this.annotatorInput = el('input', {
      type: 'text',
      value: loadAnnotatorId(),
      'data-role': 'annotator-id',
      title: 'annotator id attached to every submission',
    });
    this.annotatorInput.addEventListener('change', () => {
      storeAnnotatorId(this.annotatorInput.value);
    });

    this.gallery = new GalleryView(api, this.state, {
      onOpen: (id) => void this.openInstance(id),
    });
    this.inspector = new InstanceView(api, this.state, {
      onBack: () => this.openGallery(),
      annotatorId: () => this.annotatorInput.value || 'anonymous',
      confirmEmptyMask: () => ask('The mask is empty. Save an empty mask anyway?'),
    });
    this.jobs = new JobsView(api, {
      onActivated: () => {
        // New parameters mean new predictions and overlays everywhere.
        void this.gallery.refresh();
      },
    });

    this.main = el('main', { class: 'app-main' });
    this.root.append(this.buildHeader(), this.main);

    document.addEventListener('keydown', (ev) => {
      if (this.state.snapshot().view === 'instance') this.inspector.handleKey(ev);
    });
  }

  private buildHeader(): HTMLElement {
    const galleryBtn = el('button', { type: 'button', 'data-role': 'nav-gallery' }, ['Gallery']);
    galleryBtn.addEventListener('click', () => this.openGallery());
    const jobsBtn = el('button', { type: 'button', 'data-role': 'nav-jobs' }, ['Jobs & Matrix']);
    jobsBtn.addEventListener('click', () => this.openJobs());
    return el('header', { class: 'app-header' }, [
      el('h1', {}, ['attention workbench']),
      galleryBtn,
      jobsBtn,
      el('label', { class: 'annotator' }, ['annotator ', this.annotatorInput]),
    ]);
  }

  openGallery(): void {
    if (!this.state.openGallery()) return;
    replaceChildrenOf(this.main, [this.gallery.root]);
    void this.gallery.refresh();
  }

  async openInstance(id: string): Promise<void> {
    if (!this.state.openInstance(id)) return;
    replaceChildrenOf(this.main, [this.inspector.root]);
    await this.inspector.load(id);
  }

  openJobs(): void {
    if (!this.state.openJobs()) return;
    replaceChildrenOf(this.main, [this.jobs.root]);
    void this.jobs.refresh();
  }

  start(): void {
    this.openGallery();
  }
}

function ask(message: string): boolean {
  if (typeof window !== 'undefined' && typeof window.confirm === 'function') {
    return window.confirm(message);
  }
  return true;
}

function loadAnnotatorId(): string {
  try {
    return window.localStorage.getItem(ANNOTATOR_KEY) ?? 'annotator-1';
  } catch {
    return 'annotator-1';
  }
}

function storeAnnotatorId(value: string): void {
  try {
    window.localStorage.setItem(ANNOTATOR_KEY, value);
  } catch {
    /* private-mode storage failures are non-fatal */
  }
}

export function mountApp(root: HTMLElement, api: ApiClient = new ApiClient()): App {
  const app = new App(root, api);
  app.start();
  return app;
}

if (typeof document !== 'undefined') {
  const boot = () => {
    const root = document.getElementById('app');
    if (root) mountApp(root);
  };
  if (document.readyState === 'loading') {
    document.addEventListener('DOMContentLoaded', boot);
  } else if (document.getElementById('app')) {
    boot();
  }
}
