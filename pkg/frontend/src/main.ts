// Entry point: read endpoints and query state from the URL, mount the app.

import { mountApp } from "./app.js";
import { ServiceClient } from "./api.js";

async function boot(): Promise<void> {
  const root = document.getElementById("app");
  if (!root) throw new Error("missing #app container");
  const params = new URLSearchParams(location.search);
  const base = params.get("base") ?? "http://127.0.0.1:8080";
  const base2 = params.get("base2"); // second endpoint enables comparison mode
  const baseUrls = base2 ? [base, base2] : [base];

  let indexSize = 1000;
  try {
    const health = await new ServiceClient(base).health();
    indexSize = health.index_size;
  } catch (err) {
    console.warn("health check failed:", err);
  }
  const app = mountApp(root, location.search, { baseUrls, indexSize });
  if (app.state.text || app.state.seedItemId) {
    void app.submit(); // restore a shared session
  }
}

void boot();
