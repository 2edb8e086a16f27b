import { createApp } from "./app";

const port = Number(process.env.ADAPTER_PORT ?? 8080);
const mode = process.env.ADAPTER_MODE === "live" ? "live" : "mock";
const seed = process.env.ADAPTER_SEED ?? "0";

const app = createApp({ mode, seed });
app.listen(port, () => {
  console.error(`expert-adapter listening on :${port} (${mode} mode)`);
});
