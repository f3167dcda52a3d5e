import { defineConfig } from "vitest/config";

// Dev server proxies API routes to a locally running backend so the page can
// be served from vite while sessions live on the Python service.
const BACKEND = process.env.KISRF_BACKEND ?? "http://127.0.0.1:8000";

export default defineConfig({
  build: { outDir: "dist" },
  server: {
    proxy: {
      "/sessions": BACKEND,
      "/items": BACKEND,
      "/healthz": BACKEND,
    },
  },
  test: {
    environment: "jsdom",
    // The e2e test generates a small corpus and boots the backend once.
    testTimeout: 300_000,
    hookTimeout: 300_000,
  },
});
