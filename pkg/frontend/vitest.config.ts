import { defineConfig } from "vitest/config";

// The deployed console is served by the recommendation service itself (/ui),
// so tests run with the document origin set to the service URL; the live
// round trip is then same-origin, exactly like production.
const serviceUrl = process.env.CONSOLE_SERVICE_URL || "http://localhost:8080";

export default defineConfig({
  test: {
    environment: "happy-dom",
    environmentOptions: {
      happyDOM: { url: serviceUrl },
    },
    include: ["tests/**/*.test.ts"],
  },
});
