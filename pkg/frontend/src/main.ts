/** Entry point: mount the slider console onto #app. */

import { ControlServiceClient } from "./api.js";
import { createApp } from "./ui.js";

function serviceBase(): string {
  // Same origin by default; ?service=http://host:port overrides for dev.
  const override = new URLSearchParams(window.location.search).get("service");
  return override ?? "";
}

const root = document.getElementById("app");
if (!root) throw new Error("missing #app mount point");

const app = createApp(root, new ControlServiceClient(serviceBase()));
app.init().catch((err) => {
  const status = document.getElementById("status-line");
  if (status) status.textContent = `failed to reach service: ${err}`;
});
