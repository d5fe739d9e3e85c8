import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    include: ["tests/**/*.test.ts"],
    environment: "node",
    // The service integration test launches a real backend and polls jobs.
    testTimeout: 60_000,
    hookTimeout: 60_000,
  },
});
