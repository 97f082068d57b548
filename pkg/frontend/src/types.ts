// Wire shapes of the session service JSON API.

export interface PoseWire {
  x: number; // canvas px
  y: number;
  rotation: number; // degrees
  scale: number;
  squeeze: number;
  shear: number;
  rgb: [number, number, number];
  order: number;
  patch_width: number; // source patch size, for the overlay quad
  patch_height: number;
}

export interface SessionStateWire {
  session_id: string;
  phase: string; // paused | running | finished | error
  step: number;
  selected_genome: number;
  genome_losses: Array<number | null>;
  population: number;
  num_patches: number;
  total_critics: number;
  last_error: string | null;
}

export interface SnapshotWire {
  step: number;
  phase: string;
  genome_id: number;
  png_base64: string;
  poses: PoseWire[];
}

export interface EditResultWire {
  pose: PoseWire;
  clamped: boolean;
}

export interface HitWire {
  patch_index: number | null;
}

/** Any subset of the editable pose fields, in human units. */
export type EditFields = Partial<
  Pick<PoseWire, 'x' | 'y' | 'rotation' | 'scale' | 'squeeze' | 'shear' | 'rgb' | 'order'>
>;
