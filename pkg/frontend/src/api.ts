import type { BalloonResponse } from "./state.js";

export async function fetchBalloon(kappa: number): Promise<BalloonResponse> {
  const resp = await fetch(`/api/balloon?kappa=${encodeURIComponent(kappa)}`);
  if (!resp.ok) {
    const body = await resp.json().catch(() => ({ error: `HTTP ${resp.status}` }));
    throw new Error(body.error ?? `HTTP ${resp.status}`);
  }
  const body = (await resp.json()) as BalloonResponse;
  if (
    typeof body.kappa !== "number" ||
    !Array.isArray(body.depth) ||
    body.depth.length !== body.width * body.height
  ) {
    throw new Error("malformed balloon payload");
  }
  return body;
}

export async function postAccept(kappa: number): Promise<number> {
  const resp = await fetch("/api/accept", {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify({ kappa }),
  });
  if (!resp.ok) {
    const body = await resp.json().catch(() => ({ error: `HTTP ${resp.status}` }));
    throw new Error(body.error ?? `HTTP ${resp.status}`);
  }
  const body = await resp.json();
  return body.kappa as number;
}
