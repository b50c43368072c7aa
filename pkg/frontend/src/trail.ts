/**
 * 2D trail plot of visited (x, y) positions on a canvas.
 *
 * The viewport auto-scales to the bounding box of the trail (at least one
 * meter across so a stationary robot doesn't zoom to a speck) and keeps the
 * aspect ratio square. The newest point gets a heading arrow.
 */

export interface TrailPoint {
  x: number;
  y: number;
  theta: number;
}

const MAX_POINTS = 4000;

export class TrailPlot {
  private points: TrailPoint[] = [];

  add(point: TrailPoint): void {
    this.points.push(point);
    if (this.points.length > MAX_POINTS) {
      this.points.splice(0, this.points.length - MAX_POINTS);
    }
  }

  clear(): void {
    this.points = [];
  }

  get length(): number {
    return this.points.length;
  }

  latest(): TrailPoint | null {
    return this.points.length ? this.points[this.points.length - 1] : null;
  }

  render(ctx: CanvasRenderingContext2D, width: number, height: number): void {
    ctx.clearRect(0, 0, width, height);
    ctx.fillStyle = "#10151c";
    ctx.fillRect(0, 0, width, height);
    if (this.points.length === 0) return;

    let minX = Infinity, maxX = -Infinity, minY = Infinity, maxY = -Infinity;
    for (const p of this.points) {
      minX = Math.min(minX, p.x);
      maxX = Math.max(maxX, p.x);
      minY = Math.min(minY, p.y);
      maxY = Math.max(maxY, p.y);
    }
    const span = Math.max(maxX - minX, maxY - minY, 1.0);
    const cx = (minX + maxX) / 2;
    const cy = (minY + maxY) / 2;
    const scale = (Math.min(width, height) * 0.9) / span;
    // robot frame: x forward (up on screen), y left
    const toPx = (p: { x: number; y: number }) => ({
      px: width / 2 - (p.y - cy) * scale,
      py: height / 2 - (p.x - cx) * scale,
    });

    ctx.strokeStyle = "#4fc3f7";
    ctx.lineWidth = 2;
    ctx.beginPath();
    this.points.forEach((p, i) => {
      const { px, py } = toPx(p);
      if (i === 0) ctx.moveTo(px, py);
      else ctx.lineTo(px, py);
    });
    ctx.stroke();

    const head = this.points[this.points.length - 1];
    const { px, py } = toPx(head);
    const len = 12;
    ctx.strokeStyle = "#ffb74d";
    ctx.fillStyle = "#ffb74d";
    ctx.beginPath();
    ctx.arc(px, py, 4, 0, 2 * Math.PI);
    ctx.fill();
    ctx.beginPath();
    ctx.moveTo(px, py);
    ctx.lineTo(px - Math.sin(head.theta) * len, py - Math.cos(head.theta) * len);
    ctx.stroke();
  }
}
