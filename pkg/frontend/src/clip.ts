// Animation clip files: the same JSON the CLI's animate command consumes.

export interface ClipFrame {
  joints: [number, number, number, number][];
  root: [number, number, number];
}

export interface Clip {
  fps: number;
  frames: ClipFrame[];
}

export function parseClip(text: string): Clip {
  const doc = JSON.parse(text);
  if (!Array.isArray(doc.frames) || doc.frames.length === 0) {
    throw new Error("clip has no frames");
  }
  const frames: ClipFrame[] = doc.frames.map((f: any, i: number) => {
    if (!Array.isArray(f.joints)) throw new Error(`frame ${i}: missing joints`);
    return { joints: f.joints, root: f.root ?? [0, 0, 0] };
  });
  return { fps: Number(doc.fps ?? 30), frames };
}
