// DOM wiring for the studio page.  All behavior lives in the view model;
// this file only builds widgets, forwards events, and redraws on change.

import { SessionApi } from './api.js';
import { quadCorners } from './transform.js';
import { StudioViewModel } from './viewmodel.js';
import type { PoseWire } from './types.js';

const DISPLAY_W = 448;

interface SliderDef {
  key: string;
  label: string;
  min: number;
  max: number;
  step: number;
  get(pose: PoseWire): number;
}

const SLIDERS: SliderDef[] = [
  { key: 'x', label: 'x px', min: 0, max: 224, step: 0.5, get: (p) => p.x },
  { key: 'y', label: 'y px', min: 0, max: 224, step: 0.5, get: (p) => p.y },
  { key: 'rotation', label: 'rot deg', min: -180, max: 180, step: 0.5, get: (p) => p.rotation },
  { key: 'scale', label: 'scale', min: 0.05, max: 2.5, step: 0.01, get: (p) => p.scale },
  { key: 'squeeze', label: 'squeeze', min: 0.5, max: 2.0, step: 0.01, get: (p) => p.squeeze },
  { key: 'shear', label: 'shear', min: -1, max: 1, step: 0.01, get: (p) => p.shear },
  { key: 'order', label: 'order', min: 0, max: 1, step: 0.01, get: (p) => p.order },
  { key: 'r', label: 'red', min: 0, max: 1, step: 0.01, get: (p) => p.rgb[0] },
  { key: 'g', label: 'green', min: 0, max: 1, step: 0.01, get: (p) => p.rgb[1] },
  { key: 'b', label: 'blue', min: 0, max: 1, step: 0.01, get: (p) => p.rgb[2] },
];

let vm: StudioViewModel | null = null;
let canvasW = 224;
let canvasH = 224;
let dragging = false;
let lastPng = '';

const $ = <T extends HTMLElement>(id: string): T => document.getElementById(id) as T;

function init(): void {
  $<HTMLButtonElement>('connect').addEventListener('click', () => {
    const base = $<HTMLInputElement>('base-url').value.replace(/\/$/, '');
    const sid = $<HTMLInputElement>('session-id').value.trim();
    if (sid === '') return;
    vm?.stopPolling();
    vm = new StudioViewModel(new SessionApi(base, sid), render);
    vm.startPolling();
    void vm.refresh().catch((e) => setStatus(String(e)));
    buildSliders();
  });

  for (const [id, action, n] of [
    ['btn-run', 'run', 1],
    ['btn-pause', 'pause', 1],
    ['btn-step', 'step_n', 1],
    ['btn-step10', 'step_n', 10],
  ] as const) {
    $<HTMLButtonElement>(id).addEventListener('click', () => {
      void vm?.transport(action, n).catch((e) => setStatus(String(e)));
    });
  }

  $<HTMLCanvasElement>('overlay').addEventListener('click', (ev: MouseEvent) => {
    if (vm === null) return;
    const el = ev.currentTarget as HTMLCanvasElement;
    const rect = el.getBoundingClientRect();
    const x = ((ev.clientX - rect.left) / rect.width) * canvasW;
    const y = ((ev.clientY - rect.top) / rect.height) * canvasH;
    void vm.select(x, y).catch((e) => setStatus(String(e)));
  });
}

function buildSliders(): void {
  const panel = $<HTMLDivElement>('sliders');
  panel.innerHTML = '';
  for (const def of SLIDERS) {
    const row = document.createElement('div');
    row.className = 'slider-row';

    const label = document.createElement('label');
    label.textContent = def.label;
    row.appendChild(label);

    const slider = document.createElement('input');
    slider.type = 'range';
    slider.id = `slider-${def.key}`;
    slider.min = String(def.min);
    slider.max = String(def.max);
    slider.step = String(def.step);
    row.appendChild(slider);

    const value = document.createElement('span');
    value.id = `value-${def.key}`;
    value.className = 'slider-value';
    row.appendChild(value);

    slider.addEventListener('input', () => {
      dragging = true;
      const v = parseFloat(slider.value);
      value.textContent = v.toFixed(2);
      vm?.previewEdit(fieldsFor(def.key, v));
    });
    slider.addEventListener('change', () => {
      dragging = false;
      if (vm === null || vm.preview === null) return;
      void vm.commitEdit(vm.preview).catch((e) => setStatus(String(e)));
    });

    panel.appendChild(row);
  }
}

/** One slider movement as a (partial) edit payload; color sliders write
 *  the full rgb triple the server expects. */
function fieldsFor(key: string, v: number): Record<string, unknown> {
  const rgbIndex = { r: 0, g: 1, b: 2 }[key];
  if (rgbIndex === undefined) return { [key]: v };
  const pose = vm?.selectedPose();
  if (!pose) return {};
  const rgb: [number, number, number] = [...pose.rgb];
  rgb[rgbIndex] = v;
  return { rgb };
}

function setStatus(text: string): void {
  $<HTMLSpanElement>('status').textContent = text;
}

// -- rendering -------------------------------------------------------------

function render(): void {
  if (vm === null) return;
  const snap = vm.snapshot;
  const state = vm.state;

  if (snap !== null && snap.png_base64 !== lastPng) {
    lastPng = snap.png_base64;
    const img = $<HTMLImageElement>('collage');
    img.onload = () => {
      canvasW = img.naturalWidth;
      canvasH = img.naturalHeight;
      sizeOverlay();
      drawOverlay();
    };
    img.src = `data:image/png;base64,${snap.png_base64}`;
  }

  if (state !== null) {
    const loss = vm.lossHistory.length > 0 ? vm.lossHistory[vm.lossHistory.length - 1] : null;
    setStatus(
      `phase ${state.phase}  step ${state.step}` +
        (loss !== null ? `  loss ${loss.toFixed(4)}` : '') +
        (state.last_error !== null ? `  [${state.last_error}]` : ''),
    );
  }

  const editable = vm.canEdit && vm.selected !== null;
  const pose = vm.selectedPose();
  for (const def of SLIDERS) {
    const slider = document.getElementById(`slider-${def.key}`) as HTMLInputElement | null;
    const value = document.getElementById(`value-${def.key}`) as HTMLSpanElement | null;
    if (slider === null || value === null) continue;
    slider.disabled = !editable;
    if (pose !== null && !dragging) {
      if (def.key === 'x') slider.max = String(canvasW);
      if (def.key === 'y') slider.max = String(canvasH);
      const v = def.get(pose);
      slider.value = String(v);
      value.textContent = v.toFixed(2);
    }
  }
  $<HTMLButtonElement>('btn-run').disabled = vm.phase !== 'paused';
  $<HTMLButtonElement>('btn-pause').disabled = vm.phase !== 'running';
  $<HTMLButtonElement>('btn-step').disabled = vm.phase !== 'paused';
  $<HTMLButtonElement>('btn-step10').disabled = vm.phase !== 'paused';

  drawOverlay();
  drawSparkline();
}

function sizeOverlay(): void {
  const overlay = $<HTMLCanvasElement>('overlay');
  overlay.width = DISPLAY_W;
  overlay.height = Math.round((DISPLAY_W * canvasH) / canvasW);
}

function drawOverlay(): void {
  const overlay = $<HTMLCanvasElement>('overlay');
  const ctx = overlay.getContext('2d');
  if (ctx === null || vm === null) return;
  ctx.clearRect(0, 0, overlay.width, overlay.height);
  const pose = vm.selectedPose();
  if (pose === null) return;

  const f = overlay.width / canvasW;
  const quad = quadCorners(pose, canvasW, canvasH);
  ctx.beginPath();
  ctx.moveTo(quad[0][0] * f, quad[0][1] * f);
  for (const [x, y] of quad.slice(1)) ctx.lineTo(x * f, y * f);
  ctx.closePath();
  ctx.lineWidth = 2;
  ctx.strokeStyle = vm.preview !== null ? '#ffd43b' : '#4a9eff';
  ctx.stroke();
}

function drawSparkline(): void {
  const canvas = $<HTMLCanvasElement>('sparkline');
  const ctx = canvas.getContext('2d');
  if (ctx === null || vm === null) return;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  const data = vm.lossHistory;
  if (data.length < 2) return;

  let lo = Math.min(...data);
  let hi = Math.max(...data);
  if (hi - lo < 1e-12) {
    lo -= 0.5;
    hi += 0.5;
  }
  ctx.beginPath();
  data.forEach((v, i) => {
    const x = (i / (data.length - 1)) * (canvas.width - 2) + 1;
    const y = canvas.height - 2 - ((v - lo) / (hi - lo)) * (canvas.height - 4);
    if (i === 0) ctx.moveTo(x, y);
    else ctx.lineTo(x, y);
  });
  ctx.lineWidth = 1;
  ctx.strokeStyle = '#51cf66';
  ctx.stroke();
}

document.addEventListener('DOMContentLoaded', init);
