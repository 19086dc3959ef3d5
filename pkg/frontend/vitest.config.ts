import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    environment: "node",
    include: ["tests/**/*.test.ts"],
    // the end-to-end file boots the Python service, which trains a model
    testTimeout: 300_000,
    hookTimeout: 300_000,
  },
});
