/** Wire timestamps are UTC milliseconds; everything the user sees is
 * rendered in their local zone. */

export function formatLocalTime(ms: number): string {
  return new Date(ms).toLocaleTimeString();
}

export function formatLocalDateTime(ms: number): string {
  return new Date(ms).toLocaleString();
}

export function formatBytes(n: number): string {
  if (n < 1024) return `${n} B`;
  if (n < 1024 * 1024) return `${(n / 1024).toFixed(1)} KiB`;
  return `${(n / (1024 * 1024)).toFixed(1)} MiB`;
}

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}
