import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    include: ["tests/**/*.test.ts"],
    exclude: process.env.POINTVOS_INTEGRATION
      ? ["node_modules/**"]
      : ["node_modules/**", "tests/**/*.integration.test.ts"],
    environment: "node",
  },
});
