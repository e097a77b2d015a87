import { defineConfig } from "vitest/config";

// The built bundle is served from the gateway's static dir, so asset paths
// must stay relative.  In dev mode, API calls proxy to a local gateway.
export default defineConfig({
  base: "./",
  build: { outDir: "dist", sourcemap: true },
  server: {
    proxy: Object.fromEntries(
      ["/status", "/registry", "/crs", "/blocks"].map((path) => [
        path,
        { target: process.env.GATEWAY_URL ?? "http://127.0.0.1:8788" },
      ]),
    ),
  },
  test: {
    environment: "jsdom",
    setupFiles: ["tests/setup.ts"],
  },
});
