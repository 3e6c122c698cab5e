/**
 * Single-instance workbench: attention overlay with an opacity slider and
 * raw-value hover readout, the two-question reasonability form, the mask
 * drawing surface (brush, polygon fill, erase, undo), and the 5-point rating.
 *
 * All persistence goes through the service; the only client-side state is the
 * in-progress mask buffer, which is guarded against accidental navigation.
 */

import { ApiClient, ApiError } from './api.js';
import type { InstanceDetail } from './api.js';
import { el, replaceChildrenOf } from './dom.js';
import { quadrantBadge } from './gallery.js';
import { MaskBuffer } from './mask.js';
import type { Point } from './mask.js';
import { binarizeAttention, heatRgba, maskRgba } from './overlay.js';
import type { ViewState } from './state.js';
import { LIKERT_LABELS, NO_LABEL, Q1_PROMPT, Q2_PROMPT, YES_LABEL } from './strings.js';

export type ToolShape = 'brush' | 'polygon';
export type ToolMode = 'paint' | 'erase';
type MaskOrigin = 'blank' | 'server' | 'attention';

/** Map a keyboard key to a rating; digits 1..5 only. */
export function likertFromKey(key: string): number | null {
  return /^[1-5]$/.test(key) ? Number(key) : null;
}

export interface InspectorCallbacks {
  onBack(): void;
  annotatorId(): string;
  /** Called before saving an all-empty mask; return true to proceed. */
  confirmEmptyMask(): boolean;
}

const DISPLAY_SCALE = 8;

export class InstanceView {
  readonly root: HTMLElement;
  private readonly api: ApiClient;
  private readonly state: ViewState;
  private readonly callbacks: InspectorCallbacks;

  private detail: InstanceDetail | null = null;
  private mask: MaskBuffer | null = null;
  private maskOrigin: MaskOrigin = 'blank';
  private handEdited = false;
  private shape: ToolShape = 'brush';
  private mode: ToolMode = 'paint';
  private polygon: Point[] = [];
  private stroking = false;

  private readonly header: HTMLElement;
  private readonly stack: HTMLElement;
  private readonly baseImg: HTMLImageElement;
  private readonly heatCanvas: HTMLCanvasElement;
  private readonly maskCanvas: HTMLCanvasElement;
  private readonly scratchCanvas: HTMLCanvasElement;
  private readonly hoverReadout: HTMLElement;
  private readonly verdictForm: HTMLFormElement;
  private readonly verdictValidation: HTMLElement;
  private readonly verdictStatus: HTMLElement;
  private readonly maskStatus: HTMLElement;
  private readonly provenanceTag: HTMLElement;
  private readonly likertStatus: HTMLElement;
  private readonly likertBox: HTMLElement;

  constructor(api: ApiClient, state: ViewState, callbacks: InspectorCallbacks) {
    this.api = api;
    this.state = state;
    this.callbacks = callbacks;

    this.header = el('div', { class: 'inspector-header' });
    this.baseImg = el('img', { class: 'layer base', alt: 'instance' });
    this.heatCanvas = el('canvas', { class: 'layer heat' });
    this.maskCanvas = el('canvas', { class: 'layer maskpaint' });
    this.scratchCanvas = el('canvas', { class: 'layer scratch' });
    this.stack = el('div', { class: 'canvas-stack' }, [
      this.baseImg,
      this.heatCanvas,
      this.maskCanvas,
      this.scratchCanvas,
    ]);
    this.hoverReadout = el('span', { class: 'hover-readout', 'data-role': 'hover-readout' });
    this.verdictValidation = el('p', {
      class: 'validation hidden',
      'data-role': 'verdict-validation',
    });
    this.verdictStatus = el('p', { class: 'status', 'data-role': 'verdict-status' });
    this.verdictForm = this.buildVerdictForm();
    this.maskStatus = el('span', { class: 'status', 'data-role': 'mask-status' });
    this.provenanceTag = el('span', { class: 'provenance', 'data-role': 'provenance' });
    this.likertStatus = el('span', { class: 'status', 'data-role': 'likert-status' });
    this.likertBox = this.buildLikertPanel();

    this.root = el('section', { class: 'inspector' }, [
      this.header,
      el('div', { class: 'inspector-body' }, [
        el('div', { class: 'canvas-column' }, [
          this.stack,
          this.buildOverlayControls(),
          this.buildMaskToolbar(),
        ]),
        el('div', { class: 'panel-column' }, [this.verdictForm, this.likertBox]),
      ]),
    ]);

    this.wireCanvasEvents();
  }

  get current(): InstanceDetail | null {
    return this.detail;
  }

  get maskBuffer(): MaskBuffer | null {
    return this.mask;
  }

  async load(id: string): Promise<void> {
    const detail = await this.api.getInstance(id);
    this.detail = detail;
    const saved = detail.annotations.mask_rle;
    this.mask = saved !== null ? MaskBuffer.fromRle(saved) : new MaskBuffer(detail.width, detail.height);
    this.maskOrigin = saved !== null ? 'server' : 'blank';
    this.handEdited = false;
    this.polygon = [];
    this.state.setMaskDirty(false);

    this.baseImg.src = `data:image/png;base64,${detail.image_png}`;
    for (const canvas of [this.heatCanvas, this.maskCanvas, this.scratchCanvas]) {
      canvas.width = detail.width;
      canvas.height = detail.height;
    }
    this.stack.style.width = `${detail.width * DISPLAY_SCALE}px`;
    this.stack.style.height = `${detail.height * DISPLAY_SCALE}px`;

    this.renderHeader();
    this.restoreVerdict();
    this.restoreLikert();
    this.verdictValidation.classList.add('hidden');
    this.verdictStatus.textContent = '';
    this.maskStatus.textContent = saved !== null ? 'showing saved mask' : '';
    this.likertStatus.textContent = '';
    this.paintHeat();
    this.paintMask();
    this.updateProvenance();
  }

  private renderHeader(): void {
    const d = this.detail;
    if (!d) return;
    const back = el('button', { type: 'button', class: 'back' }, ['< gallery']);
    back.addEventListener('click', () => this.callbacks.onBack());
    const probs = d.probabilities.map((p) => p.toFixed(3)).join(', ');
    const badge = quadrantBadge(d.quadrant);
    badge.setAttribute('data-role', 'quadrant-badge');
    replaceChildrenOf(this.header, [
      back,
      el('h2', {}, [d.id]),
      badge,
      el('span', { class: 'header-meta' }, [
        `${d.split} | label ${d.label} | predicted ${d.prediction} ` +
          `(${d.correct ? 'correct' : 'wrong'}) | p=[${probs}] | model v${d.model_version}`,
      ]),
    ]);
  }

  // ----- attention overlay -------------------------------------------------

  private buildOverlayControls(): HTMLElement {
    const slider = el('input', {
      type: 'range',
      min: '0',
      max: '100',
      value: String(Math.round(this.state.snapshot().overlayOpacity * 100)),
      'data-role': 'opacity',
    });
    slider.addEventListener('input', () => {
      this.state.setOverlayOpacity(Number(slider.value) / 100);
      this.paintHeat();
    });
    return el('div', { class: 'overlay-controls' }, [
      el('label', {}, ['attention opacity ', slider]),
      this.hoverReadout,
    ]);
  }

  private paintHeat(): void {
    const d = this.detail;
    const ctx = this.heatCanvas.getContext('2d');
    if (!d || !ctx) return;
    const rgba = heatRgba(d.attention_grid, d.width, d.height, this.state.snapshot().overlayOpacity);
    ctx.putImageData(new ImageData(rgba, d.width, d.height), 0, 0);
  }

  private paintMask(): void {
    const d = this.detail;
    const ctx = this.maskCanvas.getContext('2d');
    if (!d || !ctx || !this.mask) return;
    ctx.clearRect(0, 0, d.width, d.height);
    const rgba = maskRgba(this.mask.snapshot(), d.width, d.height);
    ctx.putImageData(new ImageData(rgba, d.width, d.height), 0, 0);
  }

  private paintScratch(cursor: Point | null): void {
    const d = this.detail;
    const ctx = this.scratchCanvas.getContext('2d');
    if (!d || !ctx) return;
    ctx.clearRect(0, 0, d.width, d.height);
    if (this.polygon.length > 0) {
      ctx.strokeStyle = '#f39c12';
      ctx.lineWidth = 0.5;
      ctx.beginPath();
      const first = this.polygon[0]!;
      ctx.moveTo(first.x, first.y);
      for (const p of this.polygon.slice(1)) ctx.lineTo(p.x, p.y);
      if (cursor) ctx.lineTo(cursor.x, cursor.y);
      ctx.stroke();
    }
    if (cursor && this.shape === 'brush') {
      ctx.strokeStyle = this.mode === 'erase' ? '#e74c3c' : '#2ecc71';
      ctx.lineWidth = 0.5;
      ctx.beginPath();
      ctx.arc(cursor.x, cursor.y, this.state.snapshot().brushSize, 0, Math.PI * 2);
      ctx.stroke();
    }
  }

  private updateHoverReadout(p: Point | null): void {
    const d = this.detail;
    if (!d || !p) {
      this.hoverReadout.textContent = '';
      return;
    }
    const rows = d.attention_grid.length;
    const cols = d.attention_grid[0]?.length ?? 0;
    if (rows === 0 || cols === 0) return;
    const gy = Math.min(rows - 1, Math.floor((p.y * rows) / d.height));
    const gx = Math.min(cols - 1, Math.floor((p.x * cols) / d.width));
    const value = d.attention_grid[gy]?.[gx] ?? 0;
    this.hoverReadout.textContent =
      `px (${Math.floor(p.x)}, ${Math.floor(p.y)}) | cell (${gy}, ${gx}) = ${value.toFixed(4)}`;
  }

  // ----- mask authoring -----------------------------------------------------

  private buildMaskToolbar(): HTMLElement {
    const shapeBrush = el('input', { type: 'radio', name: 'tool-shape', value: 'brush', checked: '' });
    const shapePoly = el('input', { type: 'radio', name: 'tool-shape', value: 'polygon' });
    const modePaint = el('input', { type: 'radio', name: 'tool-mode', value: 'paint', checked: '' });
    const modeErase = el('input', { type: 'radio', name: 'tool-mode', value: 'erase' });
    shapeBrush.addEventListener('change', () => this.setShape('brush'));
    shapePoly.addEventListener('change', () => this.setShape('polygon'));
    modePaint.addEventListener('change', () => (this.mode = 'paint'));
    modeErase.addEventListener('change', () => (this.mode = 'erase'));

    const size = el('input', {
      type: 'range',
      min: '1',
      max: '16',
      value: String(this.state.snapshot().brushSize),
      'data-role': 'brush-size',
    });
    size.addEventListener('input', () => this.state.setBrushSize(Number(size.value)));

    const undoBtn = el('button', { type: 'button', 'data-role': 'undo' }, ['Undo']);
    undoBtn.addEventListener('click', () => this.undo());
    const clearBtn = el('button', { type: 'button', 'data-role': 'clear' }, ['Clear']);
    clearBtn.addEventListener('click', () => this.clearMask());
    const seedBtn = el('button', { type: 'button', 'data-role': 'seed' }, [
      'Seed from attention',
    ]);
    seedBtn.addEventListener('click', () => this.seedFromAttention());
    const saveBtn = el('button', { type: 'button', class: 'primary', 'data-role': 'save-mask' }, [
      'Save mask',
    ]);
    saveBtn.addEventListener('click', () => void this.saveMask());

    return el('div', { class: 'mask-toolbar' }, [
      el('label', {}, [shapeBrush, ' brush']),
      el('label', {}, [shapePoly, ' polygon']),
      el('label', {}, [modePaint, ' paint']),
      el('label', {}, [modeErase, ' erase']),
      el('label', {}, ['size ', size]),
      undoBtn,
      clearBtn,
      seedBtn,
      saveBtn,
      this.provenanceTag,
      this.maskStatus,
    ]);
  }

  private setShape(shape: ToolShape): void {
    this.shape = shape;
    this.polygon = [];
    this.paintScratch(null);
  }

  private wireCanvasEvents(): void {
    const target = this.scratchCanvas;
    target.addEventListener('mousedown', (ev) => {
      const p = this.eventToImage(ev);
      if (!p || !this.mask) return;
      if (this.shape === 'brush') {
        this.stroking = true;
        this.mask.beginStroke();
        this.applyBrush(p);
      } else {
        this.polygon.push(p);
        this.paintScratch(p);
      }
    });
    target.addEventListener('mousemove', (ev) => {
      const p = this.eventToImage(ev);
      this.updateHoverReadout(p);
      if (p && this.stroking) this.applyBrush(p);
      this.paintScratch(p);
    });
    const endStroke = () => {
      this.stroking = false;
    };
    target.addEventListener('mouseup', endStroke);
    target.addEventListener('mouseleave', () => {
      endStroke();
      this.updateHoverReadout(null);
      this.paintScratch(null);
    });
    target.addEventListener('dblclick', () => this.closePolygon());
  }

  private eventToImage(ev: MouseEvent): Point | null {
    const d = this.detail;
    if (!d) return null;
    const rect = this.scratchCanvas.getBoundingClientRect();
    if (rect.width <= 0 || rect.height <= 0) return null;
    const x = ((ev.clientX - rect.left) / rect.width) * d.width;
    const y = ((ev.clientY - rect.top) / rect.height) * d.height;
    if (x < 0 || y < 0 || x >= d.width || y >= d.height) return null;
    return { x, y };
  }

  /** Stamp the brush at an image-space point; exposed for scripted tests. */
  applyBrush(p: Point): void {
    if (!this.mask) return;
    this.mask.stampBrush(p.x, p.y, this.state.snapshot().brushSize, this.mode === 'paint');
    this.onMaskEdited();
  }

  /** Close the in-progress polygon and fill it; no-op below 3 vertices. */
  closePolygon(): void {
    if (!this.mask || this.polygon.length < 3) return;
    this.mask.beginStroke();
    this.mask.fillPolygon(this.polygon, this.mode === 'paint');
    this.polygon = [];
    this.paintScratch(null);
    this.onMaskEdited();
  }

  cancelPolygon(): void {
    this.polygon = [];
    this.paintScratch(null);
  }

  undo(): void {
    if (!this.mask) return;
    if (this.mask.undo()) {
      this.paintMask();
      this.state.setMaskDirty(true);
      this.maskStatus.textContent = 'undid last stroke';
    }
  }

  private clearMask(): void {
    if (!this.mask) return;
    this.mask.beginStroke();
    this.mask.clear();
    this.onMaskEdited();
  }

  private seedFromAttention(): void {
    const d = this.detail;
    if (!d || !this.mask) return;
    const pixels = binarizeAttention(d.attention_grid, d.width, d.height);
    this.mask.replaceWith(pixels);
    this.maskOrigin = 'attention';
    this.handEdited = false;
    this.paintMask();
    this.state.setMaskDirty(true);
    this.updateProvenance();
  }

  private onMaskEdited(): void {
    this.handEdited = true;
    this.paintMask();
    this.state.setMaskDirty(true);
    this.updateProvenance();
  }

  private updateProvenance(): void {
    const n = this.mask?.countSet() ?? 0;
    let origin: string;
    if (this.maskOrigin === 'attention') {
      origin = this.handEdited
        ? 'seeded from binarized attention + hand edits'
        : 'seeded from binarized attention';
    } else if (this.maskOrigin === 'server') {
      origin = this.handEdited ? 'saved annotation + hand edits' : 'saved annotation';
    } else {
      origin = this.handEdited ? 'hand-drawn' : 'empty';
    }
    this.provenanceTag.textContent = `${origin} | ${n} px`;
  }

  async saveMask(): Promise<void> {
    const d = this.detail;
    if (!d || !this.mask) return;
    if (this.mask.countSet() === 0 && !this.callbacks.confirmEmptyMask()) {
      this.maskStatus.textContent = 'empty mask not saved';
      return;
    }
    try {
      const res = await this.api.postMask(d.id, this.mask.encode(), this.callbacks.annotatorId());
      this.mask.markSaved();
      this.state.setMaskDirty(false);
      this.maskOrigin = 'server';
      this.handEdited = false;
      this.updateProvenance();
      this.maskStatus.textContent = `saved revision ${res.revision}`;
    } catch (err) {
      // Buffer is untouched so the drawing survives a failed submit.
      this.maskStatus.textContent = describeError(err);
    }
  }

  // ----- questionnaire ------------------------------------------------------

  private buildVerdictForm(): HTMLFormElement {
    const form = el('form', { class: 'verdict-panel', 'data-role': 'verdict' });
    form.append(
      this.yesNoFieldset('q1', Q1_PROMPT),
      this.yesNoFieldset('q2', Q2_PROMPT),
      this.verdictValidation,
      el('button', { type: 'submit', class: 'primary' }, ['Submit answers']),
      this.verdictStatus,
    );
    form.addEventListener('submit', (ev) => {
      ev.preventDefault();
      void this.submitVerdict();
    });
    return form;
  }

  private yesNoFieldset(name: 'q1' | 'q2', prompt: string): HTMLElement {
    const yes = el('input', { type: 'radio', name, value: 'yes' });
    const no = el('input', { type: 'radio', name, value: 'no' });
    return el('fieldset', { class: 'yesno' }, [
      el('legend', {}, [prompt]),
      el('label', {}, [yes, ` ${YES_LABEL}`]),
      el('label', {}, [no, ` ${NO_LABEL}`]),
    ]);
  }

  private readRadio(name: string): string | null {
    const checked = this.verdictForm.querySelector(
      `input[name="${name}"]:checked`,
    ) as HTMLInputElement | null;
    return checked ? checked.value : null;
  }

  private setRadio(name: string, value: string): void {
    const input = this.verdictForm.querySelector(
      `input[name="${name}"][value="${value}"]`,
    ) as HTMLInputElement | null;
    if (input) input.checked = true;
  }

  private restoreVerdict(): void {
    for (const input of Array.from(
      this.verdictForm.querySelectorAll('input[type="radio"]'),
    ) as HTMLInputElement[]) {
      input.checked = false;
    }
    const verdict = this.detail?.annotations.verdict;
    if (verdict) {
      this.setRadio('q1', verdict.q1);
      this.setRadio('q2', verdict.q2);
    }
  }

  async submitVerdict(): Promise<void> {
    const d = this.detail;
    if (!d) return;
    const q1 = this.readRadio('q1');
    const q2 = this.readRadio('q2');
    if (q1 === null || q2 === null) {
      // Incomplete form: inline message only, nothing is sent.
      this.verdictValidation.textContent = 'Please answer both questions before submitting.';
      this.verdictValidation.classList.remove('hidden');
      return;
    }
    this.verdictValidation.classList.add('hidden');
    try {
      const res = await this.api.postVerdict(
        d.id,
        q1 === 'yes',
        q2 === 'yes',
        this.callbacks.annotatorId(),
      );
      d.quadrant = res.quadrant;
      this.verdictStatus.textContent = `saved revision ${res.revision} (${res.quadrant})`;
      this.renderHeader();
    } catch (err) {
      // Selections stay in the form so the annotator can retry as-is.
      this.verdictStatus.textContent = describeError(err);
    }
  }

  // ----- rating -------------------------------------------------------------

  private buildLikertPanel(): HTMLElement {
    const box = el('div', { class: 'likert-panel', 'data-role': 'likert' }, [
      el('h3', {}, ['How do you rate the model attention for this instance?']),
    ]);
    LIKERT_LABELS.forEach((label, i) => {
      const rating = i + 1;
      const input = el('input', { type: 'radio', name: 'likert', value: String(rating) });
      input.addEventListener('change', () => void this.submitLikert(rating));
      box.append(el('label', { class: 'likert-option' }, [input, ` ${label} (${rating})`]));
    });
    box.append(el('p', { class: 'hint' }, ['keys 1-5 select a rating']), this.likertStatus);
    return box;
  }

  private restoreLikert(): void {
    const saved = this.detail?.annotations.likert ?? null;
    for (const input of Array.from(
      this.likertBox.querySelectorAll('input[name="likert"]'),
    ) as HTMLInputElement[]) {
      input.checked = saved !== null && Number(input.value) === saved;
    }
  }

  async submitLikert(rating: number): Promise<void> {
    const d = this.detail;
    if (!d) return;
    try {
      const res = await this.api.postLikert(d.id, rating, this.callbacks.annotatorId());
      const label = LIKERT_LABELS[rating - 1] ?? String(rating);
      this.likertStatus.textContent = `saved revision ${res.revision} (${label})`;
    } catch (err) {
      this.likertStatus.textContent = describeError(err);
    }
  }

  /** App-level keyboard dispatch while this view is active. */
  handleKey(ev: KeyboardEvent): void {
    const target = ev.target as HTMLElement | null;
    if (target && ['TEXTAREA', 'SELECT'].includes(target.tagName)) return;
    if (target instanceof HTMLInputElement && target.type === 'text') return;
    if ((ev.ctrlKey || ev.metaKey) && ev.key.toLowerCase() === 'z') {
      ev.preventDefault();
      this.undo();
      return;
    }
    if (ev.key === 'Escape') {
      this.cancelPolygon();
      return;
    }
    if (ev.key === 'Enter' && this.shape === 'polygon' && this.polygon.length >= 3) {
      this.closePolygon();
      return;
    }
    const rating = likertFromKey(ev.key);
    if (rating !== null) {
      const input = this.likertBox.querySelector(
        `input[name="likert"][value="${rating}"]`,
      ) as HTMLInputElement | null;
      if (input) input.checked = true;
      void this.submitLikert(rating);
    }
  }
}

function describeError(err: unknown): string {
  if (err instanceof ApiError) return `error (${err.code}): ${err.message}`;
  return `error: ${String(err)}`;
}
