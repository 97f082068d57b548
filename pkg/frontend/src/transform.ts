// Client-side copy of the pose -> canvas quadrilateral math.  Used only
// to draw the selection overlay and the live slider preview; committed
// poses always come back from the server, which stays the source of
// truth.
//
// Conventions mirrored from the renderer: the longer canvas side spans
// [-1, 1] in normalized units, the patch occupies +-pw/pmax x +-ph/pmax
// in its own normalized frame, and the pose matrix composes as
// T(tx,ty) @ R(rot) @ ShearX(h) @ Scale(s*q, s/q).

export interface QuadPose {
  x: number; // canvas px
  y: number;
  rotation: number; // degrees
  scale: number;
  squeeze: number;
  shear: number;
  patch_width: number;
  patch_height: number;
}

export type Point = [number, number];

/** Pixels per normalized unit: the longer canvas side spans [-1, 1]. */
export function halfExtent(width: number, height: number): number {
  return Math.max(width, height) / 2;
}

/**
 * Corners of the patch's transformed bounding quadrilateral in canvas
 * pixel coordinates, starting at the patch's own top-left and winding
 * through top-right, bottom-right, bottom-left.
 */
export function quadCorners(pose: QuadPose, canvasW: number, canvasH: number): Point[] {
  const half = halfExtent(canvasW, canvasH);
  const tx = (pose.x - canvasW / 2) / half;
  const ty = (pose.y - canvasH / 2) / half;
  const rot = (pose.rotation * Math.PI) / 180;
  const c = Math.cos(rot);
  const sn = Math.sin(rot);
  const a = pose.scale * pose.squeeze;
  const b = pose.scale / pose.squeeze;
  const h = pose.shear;
  const m00 = c * a;
  const m01 = (c * h - sn) * b;
  const m10 = sn * a;
  const m11 = (sn * h + c) * b;

  const pmax = Math.max(pose.patch_width, pose.patch_height);
  const uw = pose.patch_width / pmax;
  const uh = pose.patch_height / pmax;
  const corners: Point[] = [
    [-uw, -uh],
    [uw, -uh],
    [uw, uh],
    [-uw, uh],
  ];
  return corners.map(([ux, uy]) => {
    const px = m00 * ux + m01 * uy + tx;
    const py = m10 * ux + m11 * uy + ty;
    return [px * half + canvasW / 2, py * half + canvasH / 2];
  });
}
