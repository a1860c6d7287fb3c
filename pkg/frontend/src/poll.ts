// Small polling helper with an in-flight guard so a slow response never
// stacks requests.

export class Poller {
  private timer: ReturnType<typeof setInterval> | null = null;
  private busy = false;

  constructor(private intervalMs: number, private task: () => Promise<void>) {}

  start(): void {
    this.stop();
    void this.run();
    this.timer = setInterval(() => void this.run(), this.intervalMs);
  }

  stop(): void {
    if (this.timer !== null) {
      clearInterval(this.timer);
      this.timer = null;
    }
  }

  private async run(): Promise<void> {
    if (this.busy) return;
    this.busy = true;
    try {
      await this.task();
    } catch {
      // the view shows its own error state; polling just keeps trying
    } finally {
      this.busy = false;
    }
  }
}
