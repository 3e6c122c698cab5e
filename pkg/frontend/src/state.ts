/**
 * Session-level view state: the active gallery filter, the open instance,
 * slider values, and the unsaved-mask guard. One annotator per browser
 * session, so this is a single mutable object with change notification.
 */

import type { GalleryFilter } from './api.js';

export type View = 'gallery' | 'instance' | 'jobs';

export interface ViewStateSnapshot {
  view: View;
  filter: GalleryFilter;
  page: number;
  pageSize: number;
  currentId: string | null;
  overlayOpacity: number;
  brushSize: number;
  maskDirty: boolean;
}

type Listener = (state: ViewStateSnapshot) => void;

export class ViewState {
  private view: View = 'gallery';
  private filter: GalleryFilter = {};
  private page = 1;
  private pageSize = 24;
  private currentId: string | null = null;
  private overlayOpacity = 0.6;
  private brushSize = 4;
  private maskDirty = false;
  private listeners: Listener[] = [];

  /** Asked before any navigation would discard unsaved mask edits. */
  confirmDiscard: () => boolean = () => true;

  snapshot(): ViewStateSnapshot {
    return {
      view: this.view,
      filter: { ...this.filter },
      page: this.page,
      pageSize: this.pageSize,
      currentId: this.currentId,
      overlayOpacity: this.overlayOpacity,
      brushSize: this.brushSize,
      maskDirty: this.maskDirty,
    };
  }

  subscribe(listener: Listener): () => void {
    this.listeners.push(listener);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== listener);
    };
  }

  private emit(): void {
    const snap = this.snapshot();
    for (const listener of this.listeners) {
      listener(snap);
    }
  }

  setMaskDirty(dirty: boolean): void {
    if (this.maskDirty !== dirty) {
      this.maskDirty = dirty;
      this.emit();
    }
  }

  /** True when navigation may proceed (clean buffer or user confirmed). */
  private guard(): boolean {
    if (!this.maskDirty) return true;
    if (this.confirmDiscard()) {
      this.maskDirty = false;
      return true;
    }
    return false;
  }

  openGallery(): boolean {
    if (!this.guard()) return false;
    this.view = 'gallery';
    this.currentId = null;
    this.emit();
    return true;
  }

  openInstance(id: string): boolean {
    if (!this.guard()) return false;
    this.view = 'instance';
    this.currentId = id;
    this.emit();
    return true;
  }

  openJobs(): boolean {
    if (!this.guard()) return false;
    this.view = 'jobs';
    this.emit();
    return true;
  }

  setFilter(filter: GalleryFilter): boolean {
    if (!this.guard()) return false;
    this.filter = { ...filter };
    this.page = 1;
    this.emit();
    return true;
  }

  setPage(page: number): boolean {
    if (page < 1) return false;
    if (!this.guard()) return false;
    this.page = page;
    this.emit();
    return true;
  }

  setOverlayOpacity(value: number): void {
    this.overlayOpacity = Math.min(1, Math.max(0, value));
    this.emit();
  }

  setBrushSize(value: number): void {
    this.brushSize = Math.min(32, Math.max(1, Math.round(value)));
    this.emit();
  }
}
