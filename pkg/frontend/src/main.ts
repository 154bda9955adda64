import { AuditApi } from "./api.js";
import { AuditApp } from "./app.js";

const root = document.getElementById("app");
if (!root) {
  throw new Error("missing #app element");
}
const api = new AuditApi((input, init) => fetch(input, init));
const app = new AuditApp(root, api, window.localStorage, document);
void app.start();
